#pragma once

// Shared test helpers: independent scalar oracles, a central finite
// difference harness, random instance generators, and temp-dir plumbing.
// Oracles here intentionally avoid the library's vectorized code paths.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hscl/rng.hpp"
#include "hscl/types.hpp"

namespace test_util {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------- oracles

// Plain-loop InfoNCE, no max-subtraction, long double accumulation.
inline double info_nce_oracle(int anchor, const MatrixXd& z,
                              const std::vector<bool>& pos,
                              const std::vector<bool>& neg, double tau,
                              int n_norm) {
  long double num = 0.0L, den = 0.0L;
  for (int j = 0; j < z.cols(); ++j) {
    if (!pos[static_cast<std::size_t>(j)] && !neg[static_cast<std::size_t>(j)]) continue;
    long double s = 0.0L;
    for (int d = 0; d < z.rows(); ++d) s += static_cast<long double>(z(d, anchor)) * z(d, j);
    const long double e = expl(s / static_cast<long double>(tau));
    den += e;
    if (pos[static_cast<std::size_t>(j)]) num += e;
  }
  return static_cast<double>(-logl(num / den) / n_norm);
}

// Exhaustive pair counting: P(normal > abnormal) + half credit for ties.
inline double auroc_pair_counting_oracle(const std::vector<double>& normal,
                                         const std::vector<double>& abnormal) {
  double credit = 0.0;
  for (double sn : normal) {
    for (double sa : abnormal) {
      if (sn > sa) {
        credit += 1.0;
      } else if (sn == sa) {
        credit += 0.5;
      }
    }
  }
  return credit / (static_cast<double>(normal.size()) * abnormal.size());
}

// ------------------------------------------------- finite difference check

// Central finite differences of a scalar function over a flat vector.
inline VectorXd finite_difference_gradient(
    const std::function<double(const VectorXd&)>& f, VectorXd x,
    double h = 1e-5) {
  VectorXd grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double original = x[i];
    x[i] = original + h;
    const double f_plus = f(x);
    x[i] = original - h;
    const double f_minus = f(x);
    x[i] = original;
    grad[i] = (f_plus - f_minus) / (2.0 * h);
  }
  return grad;
}

inline double max_rel_error(const VectorXd& analytic, const VectorXd& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// ------------------------------------------------------------- generators

inline MatrixXd random_unit_columns(int dim, int count, hscl::Rng& rng) {
  MatrixXd z(dim, count);
  for (int i = 0; i < count; ++i) z.col(i) = rng.unit_vector(dim);
  return z;
}

// --------------------------------------------------------------- file I/O

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("hscl_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace test_util
