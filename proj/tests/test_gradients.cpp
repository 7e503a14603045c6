#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "hscl/layers.hpp"
#include "hscl/losses.hpp"
#include "hscl/model.hpp"
#include "hscl/rng.hpp"
#include "test_util.hpp"

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using test_util::finite_difference_gradient;
using test_util::max_rel_error;

namespace {

// Random instance of the three-way batch structure used by the losses.
struct LossInstance {
  MatrixXd z_nu, z_a;
  hscl::PrototypeBank bank;
  hscl::WeightVector weights;
  std::vector<hscl::PairDraw> pairs;
  double tau = 0.5;
};

LossInstance random_instance(hscl::Rng& rng, int max_m = 8, int max_d = 8,
                             int max_k = 3) {
  LossInstance inst;
  const int dim = 2 + static_cast<int>(rng.uniform_int(0, max_d - 2));
  const int m_nu = 2 + static_cast<int>(rng.uniform_int(0, max_m - 2));
  const int m_a = 1 + static_cast<int>(rng.uniform_int(0, 3));
  const int k = 1 + static_cast<int>(rng.uniform_int(0, max_k - 1));
  inst.z_nu = test_util::random_unit_columns(dim, m_nu, rng);
  inst.z_a = test_util::random_unit_columns(dim, m_a, rng);
  inst.bank.basis = test_util::random_unit_columns(dim, k, rng);
  inst.weights.weights = VectorXd(m_nu);
  for (int i = 0; i < m_nu; ++i) inst.weights.weights[i] = rng.uniform(0.05, 1.0);
  inst.tau = rng.uniform(0.3, 1.5);
  const int n_pairs = 1 + static_cast<int>(rng.uniform_int(0, 2));
  for (int t = 0; t < n_pairs; ++t) {
    const int anchor = static_cast<int>(rng.uniform_int(0, m_nu - 1));
    int positive = static_cast<int>(rng.uniform_int(0, m_nu - 2));
    if (positive >= anchor) ++positive;
    inst.pairs.push_back({anchor, positive});
  }
  return inst;
}

VectorXd flatten(const MatrixXd& m) {
  return Map<const VectorXd>(m.data(), m.size());
}

}  // namespace

TEST_CASE("sample-to-sample gradient matches central differences") {
  hscl::Rng rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 2));  // samples
    const int m = 2 * n;
    const int dim = 2 + static_cast<int>(rng.uniform_int(0, 5));
    MatrixXd z = test_util::random_unit_columns(dim, m, rng);
    hscl::PositiveNegativeMasks masks;
    masks.positives.resize(m, m);
    masks.negatives.resize(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        masks.positives(i, j) = i != j && i / 2 == j / 2;
        masks.negatives(i, j) = i != j && i / 2 != j / 2;
      }
    }
    const double tau = rng.uniform(0.3, 1.5);
    const auto analytic = hscl::sample_to_sample_loss(z, masks, tau);
    const VectorXd numeric = finite_difference_gradient(
        [&](const VectorXd& flat) {
          const MatrixXd zz = Map<const MatrixXd>(flat.data(), dim, m);
          return hscl::sample_to_sample_loss(zz, masks, tau).value;
        },
        flatten(z));
    CHECK(max_rel_error(flatten(analytic.grad_embeddings), numeric) < 1e-4);
  }
}

TEST_CASE("prototype loss gradients match central differences") {
  hscl::Rng rng(102);
  for (int trial = 0; trial < 40; ++trial) {
    const LossInstance inst = random_instance(rng);
    const auto analytic = hscl::sample_to_prototype_loss(
        inst.z_nu, inst.z_a, inst.weights, inst.bank);

    const int dim = static_cast<int>(inst.z_nu.rows());
    auto value_at = [&](const MatrixXd& z_nu, const MatrixXd& z_a,
                        const MatrixXd& basis) {
      hscl::PrototypeBank bank;
      bank.basis = basis;
      return hscl::sample_to_prototype_loss(z_nu, z_a, inst.weights, bank)
          .value;
    };

    const VectorXd num_nu = finite_difference_gradient(
        [&](const VectorXd& flat) {
          return value_at(Map<const MatrixXd>(flat.data(), dim, inst.z_nu.cols()),
                          inst.z_a, inst.bank.basis);
        },
        flatten(inst.z_nu));
    CHECK(max_rel_error(flatten(analytic.grad_normal_unlabeled), num_nu) < 1e-4);

    const VectorXd num_a = finite_difference_gradient(
        [&](const VectorXd& flat) {
          return value_at(inst.z_nu,
                          Map<const MatrixXd>(flat.data(), dim, inst.z_a.cols()),
                          inst.bank.basis);
        },
        flatten(inst.z_a));
    CHECK(max_rel_error(flatten(analytic.grad_abnormal), num_a) < 1e-4);

    const VectorXd num_v = finite_difference_gradient(
        [&](const VectorXd& flat) {
          return value_at(inst.z_nu, inst.z_a,
                          Map<const MatrixXd>(flat.data(), dim,
                                              inst.bank.basis.cols()));
        },
        flatten(inst.bank.basis));
    CHECK(max_rel_error(flatten(analytic.grad_prototypes), num_v) < 1e-4);
  }
}

TEST_CASE("normal-to-abnormal gradients match central differences") {
  hscl::Rng rng(103);
  for (int trial = 0; trial < 40; ++trial) {
    const LossInstance inst = random_instance(rng);
    const auto analytic = hscl::normal_to_abnormal_loss_with_pairs(
        inst.z_nu, inst.z_a, inst.pairs, inst.tau);
    REQUIRE_FALSE(analytic.skipped);
    const int dim = static_cast<int>(inst.z_nu.rows());

    const VectorXd num_nu = finite_difference_gradient(
        [&](const VectorXd& flat) {
          return hscl::normal_to_abnormal_loss_with_pairs(
                     Map<const MatrixXd>(flat.data(), dim, inst.z_nu.cols()),
                     inst.z_a, inst.pairs, inst.tau)
              .value;
        },
        flatten(inst.z_nu));
    CHECK(max_rel_error(flatten(analytic.grad_normal_unlabeled), num_nu) < 1e-4);

    const VectorXd num_a = finite_difference_gradient(
        [&](const VectorXd& flat) {
          return hscl::normal_to_abnormal_loss_with_pairs(
                     inst.z_nu,
                     Map<const MatrixXd>(flat.data(), dim, inst.z_a.cols()),
                     inst.pairs, inst.tau)
              .value;
        },
        flatten(inst.z_a));
    CHECK(max_rel_error(flatten(analytic.grad_abnormal), num_a) < 1e-4);
  }
}

// Probe loss for encoder checks: a fixed quadratic over the embeddings,
// L = sum_ij c_ij z_ij, plus a soft pull to keep gradients generic.
namespace {
double probe_loss(const MatrixXd& z, const MatrixXd& coeff) {
  return (z.array() * coeff.array()).sum() + 0.5 * (z.array().square()).sum();
}
MatrixXd probe_grad(const MatrixXd& z, const MatrixXd& coeff) {
  return coeff + z;
}
}  // namespace

TEST_CASE("mlp encoder parameter gradients match central differences") {
  hscl::Rng rng(104);
  hscl::EncoderSpec spec;
  spec.kind = hscl::EncoderKind::Mlp;
  spec.input_shape = hscl::DatumShape{1, 1, 5};
  spec.projection_dim = 4;
  spec.mlp_hidden = {6};
  hscl::Rng init_rng = rng.fork(1);
  hscl::Encoder encoder(spec, init_rng);

  const int m = 3;
  MatrixXd views(5, m);
  for (int i = 0; i < m; ++i) views.col(i) = rng.normal_vector(5);
  MatrixXd coeff(4, m);
  for (int i = 0; i < m; ++i) coeff.col(i) = rng.normal_vector(4);

  const MatrixXd z = encoder.encode(views, true);
  const VectorXd analytic = encoder.backward(probe_grad(z, coeff));

  hscl::Encoder probe(spec, init_rng);  // structure only; params overwritten
  const VectorXd numeric = finite_difference_gradient(
      [&](const VectorXd& params) {
        probe.set_parameters(params);
        return probe_loss(probe.encode(views, false), coeff);
      },
      encoder.parameters(), 1e-6);
  CHECK(max_rel_error(analytic, numeric) < 1e-5);
}

TEST_CASE("conv/bn/pool stack gradients match central differences") {
  hscl::Rng rng(105);
  const hscl::DatumShape in_shape{2, 6, 6};
  hscl::Conv2d conv(in_shape, 3, 3, 2, 1);
  hscl::BatchNorm2d bn(conv.out_shape());
  hscl::MaxPool2d pool(conv.out_shape(), 2, 2, 0);
  hscl::Rng init = rng.fork(2);
  conv.init(init);

  const int n = 2;
  MatrixXd x(in_shape.size(), n);
  for (int i = 0; i < n; ++i) x.col(i) = rng.normal_vector(in_shape.size());

  // Loss: squared sum of the pooled batch-normalized conv output.
  auto forward_loss = [&](hscl::Conv2d& c, hscl::BatchNorm2d& b,
                          hscl::MaxPool2d& p, const MatrixXd& input) {
    const MatrixXd y = p.forward(b.forward(c.forward(input, true), true), true);
    return 0.5 * y.squaredNorm();
  };

  const MatrixXd h1 = conv.forward(x, true);
  const MatrixXd h2 = bn.forward(h1, true);
  const MatrixXd h3 = pool.forward(h2, true);
  conv.zero_grads();
  bn.zero_grads();
  const MatrixXd dx = conv.backward(bn.backward(pool.backward(h3)));

  // Input gradient.
  const VectorXd num_dx = finite_difference_gradient(
      [&](const VectorXd& flat) {
        hscl::BatchNorm2d bn2(conv.out_shape());
        const MatrixXd input = Map<const MatrixXd>(flat.data(), in_shape.size(), n);
        return forward_loss(conv, bn2, pool, input);
      },
      flatten(x), 1e-6);
  CHECK(max_rel_error(flatten(dx), num_dx) < 1e-5);

  // Conv weight gradient.
  VectorXd conv_params(conv.param_count());
  conv.export_params(conv_params.data());
  VectorXd conv_grad(conv.param_count());
  conv.export_grads(conv_grad.data());
  const VectorXd num_dw = finite_difference_gradient(
      [&](const VectorXd& params) {
        hscl::Conv2d c2(in_shape, 3, 3, 2, 1);
        hscl::BatchNorm2d b2(conv.out_shape());
        c2.import_params(params.data());
        return forward_loss(c2, b2, pool, x);
      },
      conv_params, 1e-6);
  CHECK(max_rel_error(conv_grad, num_dw) < 1e-5);
}

TEST_CASE("basic residual block gradients match central differences") {
  hscl::Rng rng(106);
  const hscl::DatumShape in_shape{2, 4, 4};
  hscl::BasicBlock block(in_shape, 3, 2);  // exercises the downsample path
  hscl::Rng init = rng.fork(3);
  block.init(init);

  const int n = 2;
  MatrixXd x(in_shape.size(), n);
  for (int i = 0; i < n; ++i) x.col(i) = rng.normal_vector(in_shape.size());

  const MatrixXd y = block.forward(x, true);
  block.zero_grads();
  const MatrixXd dx = block.backward(y);  // dL/dy = y for L = y^2/2
  VectorXd analytic(block.param_count());
  block.export_grads(analytic.data());

  VectorXd params(block.param_count());
  block.export_params(params.data());
  const VectorXd numeric = finite_difference_gradient(
      [&](const VectorXd& p) {
        hscl::BasicBlock b2(in_shape, 3, 2);
        b2.import_params(p.data());
        return 0.5 * b2.forward(x, true).squaredNorm();
      },
      params, 1e-6);
  CHECK(max_rel_error(analytic, numeric) < 1e-4);

  const VectorXd num_dx = finite_difference_gradient(
      [&](const VectorXd& flat) {
        hscl::BasicBlock b2(in_shape, 3, 2);
        b2.import_params(params.data());
        const MatrixXd input = Map<const MatrixXd>(flat.data(), in_shape.size(), n);
        return 0.5 * b2.forward(input, true).squaredNorm();
      },
      flatten(x), 1e-6);
  CHECK(max_rel_error(flatten(dx), num_dx) < 1e-4);
}
