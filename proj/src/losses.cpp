#include "hscl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hscl {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Argmax over prototype similarities with lowest-index tie break.
void max_similarity(const MatrixXd& embeddings, const MatrixXd& prototypes,
                    VectorXd& best, std::vector<int>& best_k) {
  const MatrixXd sims = prototypes.transpose() * embeddings;  // [K x M]
  const int m = static_cast<int>(embeddings.cols());
  const int k = static_cast<int>(prototypes.cols());
  best.resize(m);
  best_k.assign(m, 0);
  for (int i = 0; i < m; ++i) {
    double b = sims(0, i);
    int bk = 0;
    for (int kk = 1; kk < k; ++kk) {
      if (sims(kk, i) > b) {
        b = sims(kk, i);
        bk = kk;
      }
    }
    best[i] = b;
    best_k[i] = bk;
  }
}

}  // namespace

double info_nce(int anchor_idx, const EmbeddingMatrix& embeddings,
                const BoolArray& positives_row, const BoolArray& negatives_row,
                double tau, int n_norm) {
  if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be > 0");
  if (n_norm < 1) throw ConfigError("info_nce: n_norm must be >= 1");
  const int m = static_cast<int>(embeddings.cols());
  if (positives_row.size() != m || negatives_row.size() != m) {
    throw ConfigError("info_nce: mask row size mismatch");
  }

  const VectorXd sims = embeddings.transpose() * embeddings.col(anchor_idx);

  double max_s = -std::numeric_limits<double>::infinity();
  bool any_pos = false;
  for (int j = 0; j < m; ++j) {
    if (positives_row[j] || negatives_row[j]) max_s = std::max(max_s, sims[j]);
    any_pos = any_pos || positives_row[j];
  }
  if (!any_pos) throw ConfigError("anchor without positives");

  double num = 0.0, den = 0.0;
  for (int j = 0; j < m; ++j) {
    if (!positives_row[j] && !negatives_row[j]) continue;
    const double e = std::exp((sims[j] - max_s) / tau);
    den += e;
    if (positives_row[j]) num += e;
  }
  return -(std::log(num) - std::log(den)) / static_cast<double>(n_norm);
}

SampleToSampleLoss sample_to_sample_loss(const EmbeddingMatrix& embeddings,
                                         const PositiveNegativeMasks& masks,
                                         double tau) {
  if (!(tau > 0.0)) throw ConfigError("sample_to_sample_loss: tau must be > 0");
  const int m = static_cast<int>(embeddings.cols());
  if (masks.positives.rows() != m || masks.negatives.rows() != m) {
    throw ConfigError("sample_to_sample_loss: mask shape mismatch");
  }

  const MatrixXd sims = embeddings.transpose() * embeddings;  // [M x M]

  double loss = 0.0;
  // G(a,j) = dL/ds_aj; the embedding gradient is then Z (G + G^T).
  MatrixXd coeff = MatrixXd::Zero(m, m);
  const double inv_m = 1.0 / static_cast<double>(m);

  for (int a = 0; a < m; ++a) {
    double max_s = -std::numeric_limits<double>::infinity();
    bool any_pos = false;
    for (int j = 0; j < m; ++j) {
      if (masks.positives(a, j) || masks.negatives(a, j)) {
        max_s = std::max(max_s, sims(a, j));
        any_pos = any_pos || masks.positives(a, j);
      }
    }
    if (!any_pos) throw ConfigError("anchor without positives");

    double num = 0.0, den = 0.0;
    for (int j = 0; j < m; ++j) {
      if (!masks.positives(a, j) && !masks.negatives(a, j)) continue;
      const double e = std::exp((sims(a, j) - max_s) / tau);
      den += e;
      if (masks.positives(a, j)) num += e;
    }
    loss += -(std::log(num) - std::log(den));

    for (int j = 0; j < m; ++j) {
      if (!masks.positives(a, j) && !masks.negatives(a, j)) continue;
      const double e = std::exp((sims(a, j) - max_s) / tau);
      double g = e / den;
      if (masks.positives(a, j)) g -= e / num;
      coeff(a, j) = inv_m * g / tau;
    }
  }

  SampleToSampleLoss out;
  out.value = loss * inv_m;
  out.grad_embeddings = embeddings * (coeff + coeff.transpose());
  return out;
}

WeightVector soft_weights(const EmbeddingMatrix& normal_unlabeled,
                          const std::vector<LabelStatus>& status,
                          const PrototypeBank& prototypes, double w_delta) {
  const int m = static_cast<int>(normal_unlabeled.cols());
  if (static_cast<int>(status.size()) != m) {
    throw ConfigError("soft_weights: status size mismatch");
  }
  VectorXd best;
  std::vector<int> best_k;
  max_similarity(normal_unlabeled, prototypes.basis, best, best_k);

  WeightVector out;
  out.w_delta = w_delta;
  out.weights.resize(m);
  for (int i = 0; i < m; ++i) {
    switch (status[i]) {
      case LabelStatus::NormalLabeled:
        out.weights[i] = 1.0;
        break;
      case LabelStatus::Unlabeled:
        out.weights[i] = std::clamp((best[i] + 1.0) / 2.0, 0.0, 1.0);
        break;
      case LabelStatus::AbnormalLabeled:
        throw ConfigError(
            "soft_weights: abnormal entry present; weights are defined only "
            "over normal and unlabeled views");
    }
  }
  return out;
}

SampleToPrototypeLoss sample_to_prototype_loss(
    const EmbeddingMatrix& normal_unlabeled, const EmbeddingMatrix& abnormal,
    const WeightVector& weights, const PrototypeBank& prototypes) {
  const int m_nu = static_cast<int>(normal_unlabeled.cols());
  const int m_a = static_cast<int>(abnormal.cols());
  if (weights.weights.size() != m_nu) {
    throw ConfigError("sample_to_prototype_loss: weight size mismatch");
  }

  SampleToPrototypeLoss out;
  out.grad_normal_unlabeled =
      MatrixXd::Zero(prototypes.dim(), m_nu);
  out.grad_abnormal = MatrixXd::Zero(prototypes.dim(), m_a);
  out.grad_prototypes = MatrixXd::Zero(prototypes.dim(), prototypes.count());

  const double w_sum = weights.weights.sum();
  if (m_nu > 0) {
    if (!(w_sum > 0.0)) throw NumericalError("all-zero weights");
    VectorXd best;
    std::vector<int> best_k;
    max_similarity(normal_unlabeled, prototypes.basis, best, best_k);
    double acc = 0.0;
    for (int i = 0; i < m_nu; ++i) {
      const double w = weights.weights[i];
      const double r = 1.0 - best[i];
      acc += w * r * r;
      const double g = -2.0 * w * r / w_sum;
      out.grad_normal_unlabeled.col(i) = g * prototypes.basis.col(best_k[i]);
      out.grad_prototypes.col(best_k[i]) += g * normal_unlabeled.col(i);
    }
    out.value += acc / w_sum;
  }

  if (m_a > 0) {
    VectorXd best;
    std::vector<int> best_k;
    max_similarity(abnormal, prototypes.basis, best, best_k);
    double acc = 0.0;
    const double inv_na = 1.0 / static_cast<double>(m_a);
    for (int j = 0; j < m_a; ++j) {
      const double clamped = std::max(best[j], 0.0);
      acc += clamped * clamped;
      if (clamped > 0.0) {
        const double g = 2.0 * clamped * inv_na;
        out.grad_abnormal.col(j) = g * prototypes.basis.col(best_k[j]);
        out.grad_prototypes.col(best_k[j]) += g * abnormal.col(j);
      }
    }
    out.value += acc * inv_na;
  }
  return out;
}

Eigen::VectorXd sampling_distribution(const WeightVector& weights) {
  const int m = static_cast<int>(weights.weights.size());
  VectorXd p = VectorXd::Zero(m);
  double norm = 0.0;
  for (int i = 0; i < m; ++i) {
    if (weights.weights[i] > weights.w_delta) {
      p[i] = weights.weights[i];
      norm += weights.weights[i];
    }
  }
  if (norm <= 0.0) return VectorXd();  // empty-support marker
  return p / norm;
}

NormalToAbnormalLoss normal_to_abnormal_loss_with_pairs(
    const EmbeddingMatrix& normal_unlabeled, const EmbeddingMatrix& abnormal,
    const std::vector<PairDraw>& pairs, double tau) {
  if (!(tau > 0.0)) throw ConfigError("normal_to_abnormal_loss: tau must be > 0");
  NormalToAbnormalLoss out;
  out.grad_normal_unlabeled =
      MatrixXd::Zero(normal_unlabeled.rows(), normal_unlabeled.cols());
  out.grad_abnormal = MatrixXd::Zero(abnormal.rows(), abnormal.cols());
  if (pairs.empty() || abnormal.cols() == 0) {
    out.skipped = true;
    return out;
  }
  out.n_pairs = static_cast<int>(pairs.size());

  const int m_a = static_cast<int>(abnormal.cols());
  const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
  double loss = 0.0;

  for (const PairDraw& pair : pairs) {
    const VectorXd anchor = normal_unlabeled.col(pair.anchor);
    const double s_pos = anchor.dot(normal_unlabeled.col(pair.positive));
    const VectorXd s_neg = abnormal.transpose() * anchor;

    double max_s = s_pos;
    for (int j = 0; j < m_a; ++j) max_s = std::max(max_s, s_neg[j]);

    const double e_pos = std::exp((s_pos - max_s) / tau);
    double den = e_pos;
    for (int j = 0; j < m_a; ++j) den += std::exp((s_neg[j] - max_s) / tau);
    loss += -std::log(e_pos / den);

    // d/ds_pos = (e_pos/den - 1)/tau; d/ds_j = e_j/(den*tau).
    const double g_pos = inv_pairs * (e_pos / den - 1.0) / tau;
    out.grad_normal_unlabeled.col(pair.anchor) +=
        g_pos * normal_unlabeled.col(pair.positive);
    out.grad_normal_unlabeled.col(pair.positive) += g_pos * anchor;
    for (int j = 0; j < m_a; ++j) {
      const double g = inv_pairs * std::exp((s_neg[j] - max_s) / tau) /
                       (den * tau);
      out.grad_normal_unlabeled.col(pair.anchor) += g * abnormal.col(j);
      out.grad_abnormal.col(j) += g * anchor;
    }
  }
  out.value = loss * inv_pairs;
  return out;
}

NormalToAbnormalLoss normal_to_abnormal_loss(
    const EmbeddingMatrix& normal_unlabeled, const EmbeddingMatrix& abnormal,
    const Eigen::VectorXd& sampling_probs, double tau, int n_pairs, Rng& rng) {
  NormalToAbnormalLoss skip;
  skip.grad_normal_unlabeled =
      MatrixXd::Zero(normal_unlabeled.rows(), normal_unlabeled.cols());
  skip.grad_abnormal = MatrixXd::Zero(abnormal.rows(), abnormal.cols());
  skip.skipped = true;

  if (abnormal.cols() == 0 || sampling_probs.size() == 0 || n_pairs < 1) {
    return skip;
  }
  const int support = static_cast<int>((sampling_probs.array() > 0.0).count());
  if (support < 2) return skip;  // an anchor needs a distinct positive

  std::vector<PairDraw> pairs;
  pairs.reserve(static_cast<std::size_t>(n_pairs));
  for (int t = 0; t < n_pairs; ++t) {
    PairDraw pair;
    pair.anchor = rng.sample_index(sampling_probs);
    VectorXd rest = sampling_probs;
    rest[pair.anchor] = 0.0;
    rest /= rest.sum();
    pair.positive = rng.sample_index(rest);
    pairs.push_back(pair);
  }
  return normal_to_abnormal_loss_with_pairs(normal_unlabeled, abnormal, pairs,
                                            tau);
}

LossBreakdown total_loss(double l_ss, double l_sp, double l_na,
                         const HSCLConfig& config, int n_sampled_positives,
                         bool skipped_na) {
  if (!std::isfinite(l_ss) || !std::isfinite(l_sp) || !std::isfinite(l_na)) {
    throw NumericalError("loss divergence");
  }
  LossBreakdown out;
  out.l_ss = l_ss;
  out.l_sp = l_sp;
  out.l_na = l_na;
  out.total = l_ss + config.lambda1 * l_sp + config.lambda2 * l_na;
  out.n_sampled_positives = n_sampled_positives;
  out.skipped_na = skipped_na;
  if (!std::isfinite(out.total)) throw NumericalError("loss divergence");
  return out;
}

}  // namespace hscl
