#pragma once

#include <Eigen/Dense>

#include <vector>

#include "hscl/augmentation.hpp"
#include "hscl/rng.hpp"
#include "hscl/types.hpp"

namespace hscl {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct LossBreakdown {
  double l_ss = 0.0;
  double l_sp = 0.0;
  double l_na = 0.0;
  double total = 0.0;
  int n_sampled_positives = 0;
  bool skipped_na = false;
};

// InfoNCE for one anchor: -(1/n_norm) * log( sum_{j in P} exp(s_aj/tau) /
// sum_{j in P u N} exp(s_aj/tau) ), with s_aj the dot product of (assumed
// unit-norm) embedding columns. Computed with per-anchor max subtraction.
double info_nce(int anchor_idx, const EmbeddingMatrix& embeddings,
                const BoolArray& positives_row, const BoolArray& negatives_row,
                double tau, int n_norm);

struct SampleToSampleLoss {
  double value = 0.0;
  Eigen::MatrixXd grad_embeddings;  // [D x M]
};

// Mean InfoNCE over all M anchors (n_norm folded into the mean).
SampleToSampleLoss sample_to_sample_loss(const EmbeddingMatrix& embeddings,
                                         const PositiveNegativeMasks& masks,
                                         double tau);

// Per-view soft weights: 1 for labeled normals,
// (max_k z_i . V_k + 1) / 2 for unlabeled views. The result is treated as a
// constant within the step; no gradient flows through it.
WeightVector soft_weights(const EmbeddingMatrix& normal_unlabeled,
                          const std::vector<LabelStatus>& status,
                          const PrototypeBank& prototypes, double w_delta);

struct SampleToPrototypeLoss {
  double value = 0.0;
  Eigen::MatrixXd grad_normal_unlabeled;
  Eigen::MatrixXd grad_abnormal;
  Eigen::MatrixXd grad_prototypes;
};

// Weighted pull of normal/unlabeled views toward their closest prototype plus
// a clamped push of abnormal views away from every prototype:
//   (1/|w|_1) sum_i w_i (1 - max_k z_i.V_k)^2
//   + (1/N_a) sum_j (max(0, max_k z_j.V_k))^2.
// Ties in max_k break toward the lowest prototype index.
SampleToPrototypeLoss sample_to_prototype_loss(
    const EmbeddingMatrix& normal_unlabeled, const EmbeddingMatrix& abnormal,
    const WeightVector& weights, const PrototypeBank& prototypes);

// p_i = 1[w_i > w_delta] w_i / sum_j 1[w_j > w_delta] w_j. Returns an empty
// vector when nothing clears the threshold; the caller must then skip the
// normal-to-abnormal loss for this batch.
Eigen::VectorXd sampling_distribution(const WeightVector& weights);

struct PairDraw {
  int anchor = 0;
  int positive = 0;
};

struct NormalToAbnormalLoss {
  double value = 0.0;
  Eigen::MatrixXd grad_normal_unlabeled;
  Eigen::MatrixXd grad_abnormal;
  bool skipped = false;
  int n_pairs = 0;
};

// Deterministic core given already-drawn (anchor, positive) pairs: for each
// pair, InfoNCE with the single drawn positive and every abnormal view as
// negatives; the result is the mean over pairs.
NormalToAbnormalLoss normal_to_abnormal_loss_with_pairs(
    const EmbeddingMatrix& normal_unlabeled, const EmbeddingMatrix& abnormal,
    const std::vector<PairDraw>& pairs, double tau);

// Draws n_pairs (anchor, positive) pairs from the sampling distribution,
// anchor and positive distinct within a pair. Returns a skip marker when the
// abnormal set is empty or the support has fewer than two entries.
NormalToAbnormalLoss normal_to_abnormal_loss(
    const EmbeddingMatrix& normal_unlabeled, const EmbeddingMatrix& abnormal,
    const Eigen::VectorXd& sampling_probs, double tau, int n_pairs, Rng& rng);

// total = l_ss + lambda1 * l_sp + lambda2 * l_na. Any non-finite part throws
// NumericalError("loss divergence").
LossBreakdown total_loss(double l_ss, double l_sp, double l_na,
                         const HSCLConfig& config, int n_sampled_positives = 0,
                         bool skipped_na = false);

}  // namespace hscl
