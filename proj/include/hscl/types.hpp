#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hscl {

// Error taxonomy mirrors the CLI exit codes: config/usage -> 1,
// numerical failure -> 2, I/O -> 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LabelStatus : std::uint8_t {
  NormalLabeled,
  AbnormalLabeled,
  Unlabeled,
};

std::string to_string(LabelStatus s);

// Shape of one datum: images are channels x rows x cols, plain feature
// vectors use channels = rows = 1.
struct DatumShape {
  int channels = 1;
  int rows = 1;
  int cols = 1;

  int size() const { return channels * rows * cols; }
  bool is_square_image() const { return rows == cols && rows > 1; }
  bool is_vector() const { return channels == 1 && rows == 1; }
  bool operator==(const DatumShape&) const = default;
};

// One training/testing sample. The ground-truth class label is held for
// evaluation only; training-path code reads id/datum/status and must not
// touch true_label_for_eval().
class LabeledSample {
 public:
  LabeledSample(std::int64_t id, Eigen::VectorXd datum, DatumShape shape,
                LabelStatus status, std::optional<int> true_label = {})
      : id_(id),
        datum_(std::move(datum)),
        shape_(shape),
        status_(status),
        true_label_(true_label) {
    if (datum_.size() != shape_.size()) {
      throw ConfigError("sample datum size does not match its shape");
    }
  }

  std::int64_t id() const { return id_; }
  const Eigen::VectorXd& datum() const { return datum_; }
  const DatumShape& shape() const { return shape_; }
  LabelStatus status() const { return status_; }

  // Evaluation-only accessor; never read on the training path.
  std::optional<int> true_label_for_eval() const { return true_label_; }

 private:
  std::int64_t id_;
  Eigen::VectorXd datum_;
  DatumShape shape_;
  LabelStatus status_;
  std::optional<int> true_label_;
};

// Augmented views of a batch, one flattened view per column. shift_index 0
// marks the plain augmented copies; 1..3 mark rotation by 90/180/270 degrees.
struct AugmentedBatch {
  Eigen::MatrixXd views;  // [datum size x M]
  DatumShape shape;
  std::vector<std::int64_t> origin_id;  // [M]
  std::vector<int> shift_index;         // [M], in {0,1,2,3}
  std::vector<LabelStatus> status;      // [M]

  int size() const { return static_cast<int>(views.cols()); }
};

// Embeddings are stored one per column: Z is [D x M].
using EmbeddingMatrix = Eigen::MatrixXd;

bool has_unit_columns(const Eigen::MatrixXd& m, double tol = 1e-5);

// Learnable bank of K unit-norm prototypes for the normal class, [D x K].
struct PrototypeBank {
  Eigen::MatrixXd basis;

  int dim() const { return static_cast<int>(basis.rows()); }
  int count() const { return static_cast<int>(basis.cols()); }

  // Columns are renormalized after every optimizer step.
  void renormalize();
};

// Per-view soft weights over the normal-labeled and unlabeled views of a
// batch; labeled normals are pinned to 1, unlabeled entries live in [0,1].
struct WeightVector {
  Eigen::VectorXd weights;
  double w_delta = 0.4;
};

struct HSCLConfig {
  double tau = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int prototype_count = 1;  // K
  int embedding_dim = 128;  // D
  double w_delta = 0.4;
  int batch_size = 256;
  int epochs = 250;
  double lr = 1e-3;
  int warmup_epochs = 10;
  std::uint64_t seed = 0;
  // gamma_l = 0 runs (no labeled samples at all) must be opted into.
  bool allow_empty_labeled = false;

  void validate() const;
};

// Cosine similarity with an epsilon guard of 1e-12 on the norms.
// Throws NumericalError("degenerate embedding") on a (near-)zero vector.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace hscl
