#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hscl/dataset.hpp"
#include "hscl/eval.hpp"
#include "hscl/trainer.hpp"
#include "test_util.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using hscl::AugmentationPolicy;
using hscl::DatumShape;
using hscl::HSCLConfig;
using hscl::LabeledSample;
using hscl::LabelStatus;

namespace {

HSCLConfig small_config(int epochs = 5) {
  HSCLConfig config;
  config.embedding_dim = 16;
  config.batch_size = 32;
  config.epochs = epochs;
  config.warmup_epochs = 1;
  config.lr = 1e-3;
  config.seed = 7;
  return config;
}

hscl::EncoderSpec small_encoder(int input_dim, int embedding_dim) {
  hscl::EncoderSpec spec;
  spec.kind = hscl::EncoderKind::Mlp;
  spec.input_shape = DatumShape{1, 1, input_dim};
  spec.projection_dim = embedding_dim;
  spec.mlp_hidden = {32};
  return spec;
}

AugmentationPolicy vector_policy() {
  AugmentationPolicy policy;
  policy.rotations.clear();
  return policy;
}

std::vector<LabeledSample> make_batch(int n_normal, int n_unlabeled,
                                      int n_abnormal, int dim,
                                      hscl::Rng& rng) {
  std::vector<LabeledSample> batch;
  std::int64_t id = 0;
  const DatumShape shape{1, 1, dim};
  for (int i = 0; i < n_normal; ++i) {
    batch.emplace_back(id++, rng.normal_vector(dim), shape,
                       LabelStatus::NormalLabeled);
  }
  for (int i = 0; i < n_unlabeled; ++i) {
    batch.emplace_back(id++, rng.normal_vector(dim), shape,
                       LabelStatus::Unlabeled);
  }
  for (int i = 0; i < n_abnormal; ++i) {
    batch.emplace_back(id++, 5.0 * VectorXd::Ones(dim) + rng.normal_vector(dim),
                       shape, LabelStatus::AbnormalLabeled);
  }
  return batch;
}

hscl::ScenarioSplit blob_split(double gamma_l, double gamma_p,
                               std::uint64_t seed, int n_classes = 4,
                               int dim = 8, int per_class = 60) {
  const auto ds = hscl::make_synthetic_blobs(n_classes, dim, 6.0, per_class, seed);
  hscl::ScenarioSpec spec;
  spec.scenario = hscl::ScenarioKind::S2Contaminated;
  spec.gamma_l = gamma_l;
  spec.gamma_p = gamma_p;
  spec.seed = seed;
  return hscl::build_scenario(spec, ds);
}

}  // namespace

TEST_CASE("learning rate: linear warmup, cosine tail, zero endpoint") {
  HSCLConfig config;
  config.lr = 1e-3;
  config.epochs = 250;
  config.warmup_epochs = 10;
  CHECK(hscl::learning_rate(config, 5.0) == doctest::Approx(0.5e-3));
  CHECK(hscl::learning_rate(config, 10.0) == doctest::Approx(1e-3));
  CHECK(hscl::learning_rate(config, 250.0) ==
        doctest::Approx(0.0).epsilon(1e-15));
  // Midpoint of the cosine span: half the base rate.
  CHECK(hscl::learning_rate(config, 130.0) == doctest::Approx(0.5e-3));
  CHECK(hscl::learning_rate(config, 0.0) == 0.0);
}

TEST_CASE("prototype initialization: unit norms and decorrelation") {
  hscl::Rng rng(5);
  const auto single = hscl::init_prototypes(1, 16, rng);
  CHECK(single.count() == 1);
  CHECK(std::abs(single.basis.col(0).norm() - 1.0) < 1e-6);

  const auto bank = hscl::init_prototypes(8, 128, rng);
  CHECK(bank.count() == 8);
  for (int a = 0; a < 8; ++a) {
    CHECK(std::abs(bank.basis.col(a).norm() - 1.0) < 1e-6);
    for (int b = 0; b < a; ++b) {
      CHECK(std::abs(bank.basis.col(a).dot(bank.basis.col(b))) <= 0.9);
    }
  }
}

TEST_CASE("adam with zero gradients leaves parameters untouched") {
  hscl::AdamState adam;
  VectorXd params(3);
  params << 1.0, -2.0, 3.0;
  const VectorXd before = params;
  adam.step(params, VectorXd::Zero(3), 0.1);
  adam.step(params, VectorXd::Zero(3), 0.1);
  CHECK(params == before);
}

TEST_CASE("train_step on an all-normal batch: first term only, N-A skipped") {
  hscl::Rng rng(11);
  const auto batch = make_batch(6, 0, 0, 8, rng);
  HSCLConfig config = small_config();
  config.embedding_dim = 8;
  auto state = hscl::init_train_state(small_encoder(8, 8), config,
                                      hscl::Rng(config.seed));
  const auto parts =
      hscl::train_step(state, batch, config, vector_policy(),
                       hscl::AblationFlags{}, hscl::Rng(1).fork(2), 1e-3);
  CHECK(parts.skipped_na);
  CHECK(parts.l_na == 0.0);
  CHECK(parts.l_sp >= 0.0);
  CHECK(std::isfinite(parts.total));
}

TEST_CASE("lambda1 = lambda2 = 0 reduces to pure sample-to-sample training") {
  hscl::Rng rng(12);
  const auto batch = make_batch(4, 6, 3, 8, rng);
  HSCLConfig config = small_config();
  config.embedding_dim = 8;
  config.lambda1 = 0.0;
  config.lambda2 = 0.0;
  const hscl::Rng root(config.seed);
  auto state = hscl::init_train_state(small_encoder(8, 8), config, root);
  const MatrixXd protos_before = state.prototypes.basis;
  const VectorXd params_before = state.encoder->parameters();

  const hscl::Rng step_rng = root.fork(hscl::rng_streams::kStep, 0, 0);
  const double lr = 2e-3;
  (void)hscl::train_step(state, batch, config, vector_policy(),
                         hscl::AblationFlags{}, step_rng, lr);

  // Prototypes: zero gradient, so unchanged up to renormalization.
  CHECK((state.prototypes.basis - protos_before).norm() < 1e-12);

  // Reference: a manual pure sample-to-sample step from the same start.
  auto reference = hscl::init_train_state(small_encoder(8, 8), config, root);
  REQUIRE(reference.encoder->parameters() == params_before);
  const auto views =
      hscl::augment_batch(batch, vector_policy(), step_rng.fork(1));
  const auto z = reference.encoder->encode(views.views, true);
  const auto masks = hscl::positive_negative_masks(views);
  const auto ss = hscl::sample_to_sample_loss(z, masks, config.tau);
  const VectorXd grads = reference.encoder->backward(ss.grad_embeddings);
  VectorXd params = reference.encoder->parameters();
  hscl::AdamState adam;
  adam.step(params, grads, lr);
  CHECK((state.encoder->parameters() - params).norm() == 0.0);
}

TEST_CASE("prototypes move whenever some normal view is off-prototype") {
  hscl::Rng rng(13);
  const auto batch = make_batch(5, 5, 2, 8, rng);
  HSCLConfig config = small_config();
  config.embedding_dim = 8;
  auto state = hscl::init_train_state(small_encoder(8, 8), config,
                                      hscl::Rng(config.seed));
  const MatrixXd before = state.prototypes.basis;
  (void)hscl::train_step(state, batch, config, vector_policy(),
                         hscl::AblationFlags{}, hscl::Rng(3).fork(1), 1e-3);
  CHECK((state.prototypes.basis - before).norm() > 1e-9);
  CHECK(hscl::has_unit_columns(state.prototypes.basis, 1e-9));
}

TEST_CASE("fit requires labeled normals unless explicitly allowed") {
  const auto split = blob_split(0.0, 0.0, 3);
  HSCLConfig config = small_config(1);
  config.embedding_dim = 16;
  CHECK_THROWS_AS(hscl::fit(split, config, vector_policy(),
                            small_encoder(8, 16)),
                  hscl::ConfigError);
  config.allow_empty_labeled = true;
  CHECK_NOTHROW(hscl::fit(split, config, vector_policy(),
                          small_encoder(8, 16)));
}

TEST_CASE("fit is deterministic given the seed") {
  const auto split = blob_split(0.1, 0.1, 5);
  HSCLConfig config = small_config(3);
  const auto encoder_spec = small_encoder(8, config.embedding_dim);
  const auto a = hscl::fit(split, config, vector_policy(), encoder_spec);
  const auto b = hscl::fit(split, config, vector_policy(), encoder_spec);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].l_ss == b.history[i].l_ss);
    CHECK(a.history[i].l_sp == b.history[i].l_sp);
    CHECK(a.history[i].l_na == b.history[i].l_na);
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].lr == b.history[i].lr);
    CHECK(a.history[i].skipped_na_count == b.history[i].skipped_na_count);
  }
  CHECK(a.encoder->parameters() == b.encoder->parameters());
  CHECK(a.prototypes.basis == b.prototypes.basis);
}

TEST_CASE("loss descends over twenty epochs on the blob scenario") {
  double first = 0.0, later = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto split = blob_split(0.1, 0.05, seed, 3, 8, 40);
    HSCLConfig config = small_config(21);
    config.seed = seed;
    config.batch_size = 48;
    const auto state =
        hscl::fit(split, config, vector_policy(), small_encoder(8, 16));
    REQUIRE(state.history.size() == 21);
    first += state.history[1].total;
    later += state.history[20].total;
  }
  CHECK(later / 3.0 < first / 3.0);
}

TEST_CASE("metrics rows carry the fixed column set") {
  CHECK(hscl::metrics_csv_header() ==
        "epoch,l_ss,l_sp,l_na,total,lr,skipped_na_count,wall_seconds");
  hscl::EpochMetrics row;
  row.epoch = 3;
  row.l_ss = 1.5;
  row.lr = 1e-3;
  const std::string csv = hscl::metrics_csv_row(row);
  CHECK(csv.find("3,1.5,") == 0);
  CHECK(std::count(csv.begin(), csv.end(), ',') == 7);
}

TEST_CASE("checkpoints round-trip exactly and preserve probe scores") {
  test_util::TempDir tmp("ckpt");
  const auto split = blob_split(0.1, 0.05, 8);
  HSCLConfig config = small_config(2);
  const auto encoder_spec = small_encoder(8, config.embedding_dim);
  auto state = hscl::fit(split, config, vector_policy(), encoder_spec);

  const auto blob = (tmp.path() / "ckpt.bin").string();
  const auto manifest = (tmp.path() / "ckpt.json").string();
  hscl::save_checkpoint(state, config, blob, manifest);
  auto loaded = hscl::load_checkpoint(blob, manifest);

  CHECK(loaded.state.encoder->parameters() == state.encoder->parameters());
  CHECK(loaded.config.tau == config.tau);
  CHECK(loaded.encoder_spec.kind == encoder_spec.kind);

  const auto probe = hscl::normality_score(
      state, split.test, std::vector<bool>(split.test.size(), false));
  const auto probe_loaded = hscl::normality_score(
      loaded.state, split.test, std::vector<bool>(split.test.size(), false));
  REQUIRE(probe.size() == probe_loaded.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    CHECK(std::abs(probe[i].score - probe_loaded[i].score) < 1e-6);
  }

  CHECK_THROWS_AS(hscl::load_checkpoint("/nonexistent.bin", manifest),
                  hscl::IoError);
}

TEST_CASE("a resnet18 step composes with rotation shifting") {
  hscl::Rng rng(21);
  const DatumShape shape{3, 8, 8};
  std::vector<LabeledSample> batch;
  for (int i = 0; i < 4; ++i) {
    VectorXd img(shape.size());
    for (Eigen::Index j = 0; j < img.size(); ++j) img[j] = rng.uniform();
    batch.emplace_back(i, img, shape,
                       i == 3 ? LabelStatus::AbnormalLabeled
                              : LabelStatus::NormalLabeled);
  }
  HSCLConfig config = small_config(1);
  config.embedding_dim = 8;
  config.batch_size = 4;
  hscl::EncoderSpec enc;
  enc.kind = hscl::EncoderKind::ResNet18;
  enc.input_shape = shape;
  enc.projection_dim = 8;
  auto state = hscl::init_train_state(enc, config, hscl::Rng(config.seed));
  const MatrixXd protos_before = state.prototypes.basis;

  AugmentationPolicy policy;  // full image policy, rotations enabled
  const auto parts = hscl::train_step(state, batch, config, policy,
                                      hscl::AblationFlags{},
                                      hscl::Rng(2).fork(1), 1e-3);
  CHECK(std::isfinite(parts.total));
  CHECK(parts.l_ss > 0.0);
  CHECK((state.prototypes.basis - protos_before).norm() > 0.0);
  CHECK(hscl::has_unit_columns(state.prototypes.basis, 1e-9));

  // Checkpoint round trip covers the batch-norm running-stat buffers.
  test_util::TempDir tmp("resnet_ckpt");
  const auto blob = (tmp.path() / "ck.bin").string();
  const auto manifest = (tmp.path() / "ck.json").string();
  hscl::save_checkpoint(state, config, blob, manifest);
  auto loaded = hscl::load_checkpoint(blob, manifest);
  std::vector<bool> truth(batch.size(), false);
  const auto before = hscl::normality_score(state, batch, truth);
  const auto after = hscl::normality_score(loaded.state, batch, truth);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(std::abs(before[i].score - after[i].score) < 1e-6);
  }
}

TEST_CASE("training aborts with a diagnostic on numerical blowup") {
  const auto split = blob_split(0.1, 0.05, 9);
  HSCLConfig config = small_config(3);
  config.lr = 1e80;  // drives activations past double range within a step
  try {
    (void)hscl::fit(split, config, vector_policy(),
                    small_encoder(8, config.embedding_dim));
    FAIL("expected NumericalError");
  } catch (const hscl::NumericalError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch") != std::string::npos);
  }
}
