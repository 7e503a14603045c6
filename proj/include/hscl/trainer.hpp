#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hscl/augmentation.hpp"
#include "hscl/losses.hpp"
#include "hscl/model.hpp"
#include "hscl/rng.hpp"
#include "hscl/scenarios.hpp"
#include "hscl/types.hpp"

namespace hscl {

// Deterministic stream tags: every random draw in a run forks off the root
// Rng(config.seed) under one of these, so any step can be replayed in
// isolation.
namespace rng_streams {
constexpr std::uint64_t kEncoderInit = 1;
constexpr std::uint64_t kPrototypeInit = 2;
constexpr std::uint64_t kEpochShuffle = 3;
constexpr std::uint64_t kBatchCompose = 4;
constexpr std::uint64_t kStep = 5;
}  // namespace rng_streams

// Elementwise adaptive-moment optimizer. Running two instances with the same
// hyperparameters is equivalent to one parameter group.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m, v;
  long t = 0;

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad,
            double lr);
};

// Module on/off switches for ablation runs; everything on by default.
struct AblationFlags {
  bool use_ss = true;
  bool use_sp = true;
  bool use_na = true;
  bool use_sp_pos = true;  // pull term of the prototype loss
  bool use_sp_neg = true;  // clamped push term of the prototype loss

  bool prototypes_active() const { return use_sp; }
};

struct EpochMetrics {
  int epoch = 0;
  double l_ss = 0, l_sp = 0, l_na = 0, total = 0;
  double lr = 0;
  int skipped_na_count = 0;
  double wall_seconds = 0;
};

struct TrainState {
  std::unique_ptr<Encoder> encoder;
  PrototypeBank prototypes;
  int epoch = 0;
  AdamState opt_encoder;
  AdamState opt_prototypes;
  std::vector<EpochMetrics> history;
};

// Learning rate at a fractional epoch position: linear warmup over
// warmup_epochs, then cosine decay that reaches zero at `epochs`.
double learning_rate(const HSCLConfig& config, double fractional_epoch);

// K columns drawn uniformly on the unit sphere, redrawing any column whose
// |cosine| to an earlier one exceeds 0.9.
PrototypeBank init_prototypes(int prototype_count, int dim, Rng& rng);

TrainState init_train_state(const EncoderSpec& encoder_spec,
                            const HSCLConfig& config, const Rng& root);

// One optimization step: augment -> encode -> masks -> losses -> joint Adam
// step on encoder parameters and prototypes, prototypes renormalized.
// The step rng must be forked per (epoch, step) by the caller.
LossBreakdown train_step(TrainState& state,
                         const std::vector<LabeledSample>& batch,
                         const HSCLConfig& config,
                         const AugmentationPolicy& policy,
                         const AblationFlags& flags, const Rng& step_rng,
                         double lr);

// Convenience overload using the epoch-granular learning rate.
LossBreakdown train_step(TrainState& state,
                         const std::vector<LabeledSample>& batch,
                         const HSCLConfig& config,
                         const AugmentationPolicy& policy,
                         const AblationFlags& flags, const Rng& step_rng);

struct FitOptions {
  AblationFlags flags;
  // When set, per-epoch metrics are appended to this CSV as training runs.
  std::optional<std::string> metrics_csv_path;
  // When set, the final state is checkpointed to these paths.
  std::optional<std::string> checkpoint_blob_path;
  std::optional<std::string> checkpoint_manifest_path;
  bool verbose = false;
};

// Full training run over a scenario split. Epoch = one pass over
// X_u and X_n under the stratified sampler; every batch reserves up to
// batch_size/8 labeled abnormal and labeled normal samples.
TrainState fit(const ScenarioSplit& split, const HSCLConfig& config,
               const AugmentationPolicy& policy,
               const EncoderSpec& encoder_spec, const FitOptions& options = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& row);

// Checkpoint: binary parameter blob plus a JSON manifest carrying the
// encoder spec, config, epoch, and prototype matrix.
void save_checkpoint(const TrainState& state, const HSCLConfig& config,
                     const std::string& blob_path,
                     const std::string& manifest_path);

struct LoadedCheckpoint {
  TrainState state;
  HSCLConfig config;
  EncoderSpec encoder_spec;
};

LoadedCheckpoint load_checkpoint(const std::string& blob_path,
                                 const std::string& manifest_path);

}  // namespace hscl
