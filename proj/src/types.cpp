#include "hscl/types.hpp"

#include <cmath>

namespace hscl {

std::string to_string(LabelStatus s) {
  switch (s) {
    case LabelStatus::NormalLabeled:
      return "normal";
    case LabelStatus::AbnormalLabeled:
      return "abnormal";
    case LabelStatus::Unlabeled:
      return "unlabeled";
  }
  return "unknown";
}

bool has_unit_columns(const Eigen::MatrixXd& m, double tol) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (std::abs(m.col(j).norm() - 1.0) > tol) return false;
  }
  return true;
}

void PrototypeBank::renormalize() {
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    double n = basis.col(k).norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
      throw NumericalError("degenerate embedding: prototype norm collapsed");
    }
    basis.col(k) /= n;
  }
}

void HSCLConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw ConfigError("lambda1 and lambda2 must be >= 0");
  }
  if (prototype_count < 1) throw ConfigError("prototype_count must be >= 1");
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
  if (!(w_delta > 0.0 && w_delta < 1.0)) {
    throw ConfigError("w_delta must lie in (0,1)");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw ConfigError("warmup_epochs must lie in [0, epochs]");
  }
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw ConfigError("cosine_similarity: dimension mismatch");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 1e-12) || !(nb > 1e-12) || !std::isfinite(na) ||
      !std::isfinite(nb)) {
    throw NumericalError("degenerate embedding");
  }
  // dot/(na*nb) is bitwise symmetric in its arguments.
  return a.dot(b) / (na * nb);
}

}  // namespace hscl
