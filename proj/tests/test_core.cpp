#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "hscl/rng.hpp"
#include "hscl/types.hpp"
#include "test_util.hpp"

using Eigen::VectorXd;

namespace {
VectorXd basis(int dim, int axis) {
  VectorXd v = VectorXd::Zero(dim);
  v[axis] = 1.0;
  return v;
}
}  // namespace

TEST_CASE("cosine similarity identity, antipodal, orthogonal") {
  const VectorXd e1 = basis(4, 0), e2 = basis(4, 1);
  CHECK(hscl::cosine_similarity(e1, e1) == doctest::Approx(1.0));
  CHECK(hscl::cosine_similarity(e1, -e1) == doctest::Approx(-1.0));
  CHECK(hscl::cosine_similarity(e1, e2) == doctest::Approx(0.0));
}

TEST_CASE("cosine similarity is scale invariant and symmetric") {
  hscl::Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd a = rng.normal_vector(8);
    const VectorXd b = rng.normal_vector(8);
    if (a.norm() < 1e-6 || b.norm() < 1e-6) continue;
    const double alpha = std::exp(rng.uniform(-3.0, 3.0));
    const double base = hscl::cosine_similarity(a, b);
    CHECK(std::abs(hscl::cosine_similarity(alpha * a, b) - base) < 1e-6);
    CHECK(hscl::cosine_similarity(b, a) == base);  // bitwise symmetric
    CHECK(base >= -1.0 - 1e-12);
    CHECK(base <= 1.0 + 1e-12);
  }
}

TEST_CASE("cosine similarity rejects degenerate vectors") {
  const VectorXd zero = VectorXd::Zero(4);
  CHECK_THROWS_AS(hscl::cosine_similarity(zero, basis(4, 0)),
                  hscl::NumericalError);
  CHECK_THROWS_WITH(hscl::cosine_similarity(zero, basis(4, 0)),
                    "degenerate embedding");
}

TEST_CASE("config validation enforces the documented ranges") {
  hscl::HSCLConfig config;
  CHECK_NOTHROW(config.validate());
  CHECK(config.tau == 0.5);
  CHECK(config.lambda1 == 1.0);
  CHECK(config.lambda2 == 1.0);
  CHECK(config.prototype_count == 1);
  CHECK(config.embedding_dim == 128);
  CHECK(config.w_delta == 0.4);
  CHECK(config.batch_size == 256);
  CHECK(config.epochs == 250);
  CHECK(config.lr == 1e-3);
  CHECK(config.warmup_epochs == 10);

  auto broken = config;
  broken.tau = 0.0;
  CHECK_THROWS_AS(broken.validate(), hscl::ConfigError);
  broken = config;
  broken.w_delta = 1.0;
  CHECK_THROWS_AS(broken.validate(), hscl::ConfigError);
  broken = config;
  broken.lambda1 = -0.1;
  CHECK_THROWS_AS(broken.validate(), hscl::ConfigError);
  broken = config;
  broken.prototype_count = 0;
  CHECK_THROWS_AS(broken.validate(), hscl::ConfigError);
  broken = config;
  broken.warmup_epochs = broken.epochs + 1;
  CHECK_THROWS_AS(broken.validate(), hscl::ConfigError);
}

TEST_CASE("prototype bank renormalization and unit-column helper") {
  hscl::PrototypeBank bank;
  bank.basis.resize(3, 2);
  bank.basis << 3, 0, 0, 0.5, 4, 0;
  bank.renormalize();
  CHECK(hscl::has_unit_columns(bank.basis, 1e-12));

  Eigen::MatrixXd m(2, 2);
  m << 1, 0.9, 0, 0;
  CHECK_FALSE(hscl::has_unit_columns(m));
}

TEST_CASE("labeled sample keeps its true label behind the eval accessor") {
  VectorXd datum(3);
  datum << 1, 2, 3;
  const hscl::LabeledSample s(7, datum, hscl::DatumShape{1, 1, 3},
                              hscl::LabelStatus::Unlabeled, 4);
  CHECK(s.id() == 7);
  CHECK(s.status() == hscl::LabelStatus::Unlabeled);
  CHECK(s.true_label_for_eval() == 4);
  CHECK_THROWS_AS(hscl::LabeledSample(1, datum, hscl::DatumShape{1, 2, 3},
                                      hscl::LabelStatus::Unlabeled),
                  hscl::ConfigError);
}

TEST_CASE("rng forks are independent of parent consumption") {
  hscl::Rng a(42);
  hscl::Rng b(42);
  (void)a.uniform();
  (void)a.uniform();
  CHECK(a.fork(5, 6).uniform() == b.fork(5, 6).uniform());
  CHECK(a.fork(5, 6).uniform() != a.fork(5, 7).uniform());
}

TEST_CASE("rng streams are reproducible and in range") {
  hscl::Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  hscl::Rng c(9);
  for (int i = 0; i < 1000; ++i) {
    const auto v = c.uniform_int(-3, 5);
    CHECK(v >= -3);
    CHECK(v <= 5);
  }
}
