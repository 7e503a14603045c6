#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace hscl {

// Deterministic random source. The engine is std::mt19937_64 (bit-exact per
// the standard); all distributions are derived here from raw bits so that
// identical seeds give identical streams on every platform.
//
// fork() derives an independent child stream from the *seed* and a tag, not
// from the consumption state, so substreams keyed by (epoch, step, sample id)
// are reproducible no matter how much of the parent was consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();                         // standard normal (Box-Muller)
  Eigen::VectorXd normal_vector(int n);
  Eigen::VectorXd unit_vector(int dim);

  Rng fork(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Draws an index from a normalized discrete distribution by inverse CDF.
  int sample_index(const Eigen::VectorXd& probs);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// 64-bit mixing used for seed derivation (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

}  // namespace hscl
