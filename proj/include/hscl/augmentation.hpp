#pragma once

#include <Eigen/Dense>

#include <vector>

#include "hscl/rng.hpp"
#include "hscl/types.hpp"

namespace hscl {

// Stochastic view generation: SimCLR-style augmentations for images,
// Gaussian jitter for plain feature vectors, plus rotation shifting that
// defines the positive/negative structure of the sample-to-sample loss.
struct AugmentationPolicy {
  // Random resized crop (images only).
  double crop_scale_min = 0.08;
  double crop_scale_max = 1.0;
  int output_size = 0;  // 0 = keep input size

  double hflip_prob = 0.5;
  double color_jitter_strength = 0.5;
  double color_jitter_prob = 0.8;
  double grayscale_prob = 0.2;

  // Shifting transformations; subset of {90, 180, 270}. Empty disables
  // shifting entirely (the mode used for vector data).
  std::vector<int> rotations = {90, 180, 270};

  // Non-rotated augmented views per sample; at least 2 so every view has a
  // positive partner.
  int views_per_sample = 2;

  // Jitter applied to vector (non-image) data instead of the image ops.
  double noise_std = 0.1;

  void validate() const;
};

// Produces views_per_sample augmented copies per sample (shift_index 0) and,
// for each configured rotation, a rotated copy of each of those views.
// M = |batch| * views_per_sample * (1 + |rotations|). Per-sample randomness
// comes from substreams of `rng` keyed by the sample id, so the output is a
// pure function of (batch, policy, rng seed).
AugmentedBatch augment_batch(const std::vector<LabeledSample>& batch,
                             const AugmentationPolicy& policy, const Rng& rng);

using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct PositiveNegativeMasks {
  MaskMatrix positives;  // same origin, same shift, i != j
  MaskMatrix negatives;  // everything else off-diagonal
};

// Positives: same origin id and same shift index. Shifted copies are
// negatives of every other shift, including their own original.
PositiveNegativeMasks positive_negative_masks(const AugmentedBatch& batch);

// Rotates a flattened channels x rows x cols image counter-clockwise by
// quarter_turns * 90 degrees. Requires a square image.
Eigen::VectorXd rotate_quarter_turns(const Eigen::VectorXd& image,
                                     const DatumShape& shape,
                                     int quarter_turns);

}  // namespace hscl
