#include "hscl/tsne.hpp"

#include <cmath>

#include "hscl/rng.hpp"
#include "hscl/types.hpp"

namespace hscl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Conditional distribution row with the bandwidth tuned by binary search so
// the entropy matches log(perplexity).
VectorXd p_row_for_perplexity(const VectorXd& sq_dists, int self,
                              double perplexity) {
  const double target_entropy = std::log(perplexity);
  double beta = 1.0, beta_min = 0.0, beta_max = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(sq_dists.size());
  VectorXd p(n);
  for (int iter = 0; iter < 64; ++iter) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      p[j] = j == self ? 0.0 : std::exp(-beta * sq_dists[j]);
      sum += p[j];
    }
    if (sum <= 0) {
      beta /= 2;
      continue;
    }
    double entropy = 0.0;
    for (int j = 0; j < n; ++j) {
      p[j] /= sum;
      if (p[j] > 1e-300) entropy -= p[j] * std::log(p[j]);
    }
    const double diff = entropy - target_entropy;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0) {  // too flat -> sharpen
      beta_min = beta;
      beta = std::isinf(beta_max) ? beta * 2 : (beta + beta_max) / 2;
    } else {
      beta_max = beta;
      beta = (beta + beta_min) / 2;
    }
  }
  return p;
}

}  // namespace

MatrixXd tsne_2d(const MatrixXd& points_cols, std::uint64_t seed,
                 double perplexity, int iterations) {
  const int n = static_cast<int>(points_cols.cols());
  if (n < 5) throw ConfigError("tsne_2d: need at least 5 samples");
  perplexity = std::min(perplexity, (n - 1) / 3.0);

  // Pairwise squared distances in the input space.
  MatrixXd sq(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double d = (points_cols.col(i) - points_cols.col(j)).squaredNorm();
      sq(i, j) = sq(j, i) = d;
    }
  }

  MatrixXd p(n, n);
  for (int i = 0; i < n; ++i) p.row(i) = p_row_for_perplexity(sq.row(i), i, perplexity);
  p = (p + p.transpose()) / (2.0 * n);
  p = p.cwiseMax(1e-12);

  Rng rng(seed);
  MatrixXd y(2, n);
  for (int i = 0; i < n; ++i) y.col(i) = 1e-2 * rng.normal_vector(2);
  MatrixXd velocity = MatrixXd::Zero(2, n);

  const int exaggeration_end = std::min(250, iterations / 4);
  const double lr = 200.0;

  for (int iter = 0; iter < iterations; ++iter) {
    const double exaggeration = iter < exaggeration_end ? 12.0 : 1.0;
    const double momentum = iter < 250 ? 0.5 : 0.8;

    // Student-t affinities in the embedding.
    MatrixXd q_num(n, n);
    double q_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      q_num(i, i) = 0.0;
      for (int j = 0; j < i; ++j) {
        const double d = (y.col(i) - y.col(j)).squaredNorm();
        const double v = 1.0 / (1.0 + d);
        q_num(i, j) = q_num(j, i) = v;
        q_sum += 2.0 * v;
      }
    }

    MatrixXd grad = MatrixXd::Zero(2, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q_ij = q_num(i, j) / q_sum;
        const double coeff =
            4.0 * (exaggeration * p(i, j) - q_ij) * q_num(i, j);
        grad.col(i) += coeff * (y.col(i) - y.col(j));
      }
    }

    velocity = momentum * velocity - lr * grad;
    y += velocity;
    y.colwise() -= y.rowwise().mean();  // keep the embedding centered
  }
  return y;
}

}  // namespace hscl
