#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

#include "hscl/layers.hpp"
#include "hscl/rng.hpp"
#include "hscl/types.hpp"

namespace hscl {

enum class EncoderKind { ResNet18, Mlp };

std::string to_string(EncoderKind k);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::Mlp;
  DatumShape input_shape{1, 1, 32};
  int projection_dim = 128;
  // MLP only: hidden widths of the ReLU stack before the final projection.
  // Empty means a single linear map straight to projection_dim.
  std::vector<int> mlp_hidden = {128, 128};

  void validate() const;
};

// Embedding network f: a backbone plus projection, with the output columns
// L2-normalized. Owns its parameters; gradients flow back through the
// normalization to a flat parameter-gradient vector for the optimizer.
class Encoder {
 public:
  Encoder(const EncoderSpec& spec, Rng& rng);

  // views: one flattened datum per column. Returns [projection_dim x M]
  // unit-norm embeddings. train_mode enables batch statistics and caches
  // activations for backward().
  EmbeddingMatrix encode(const Eigen::MatrixXd& views, bool train_mode);

  // grad_embeddings: dLoss/dZ for the most recent train-mode encode.
  // Returns the flat parameter gradient.
  Eigen::VectorXd backward(const Eigen::MatrixXd& grad_embeddings);

  std::size_t param_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  std::size_t buffer_count() const;
  Eigen::VectorXd buffers() const;
  void set_buffers(const Eigen::VectorXd& flat);

  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  // Pre-normalization activations and their norms from the last train pass.
  Eigen::MatrixXd cached_raw_, cached_z_;
  Eigen::VectorXd cached_norm_;
};

}  // namespace hscl
