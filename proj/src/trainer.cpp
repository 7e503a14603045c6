#include "hscl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>

#include <json.hpp>

#include "hscl/text.hpp"

namespace hscl {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

void AdamState::step(Eigen::Ref<VectorXd> params, const VectorXd& grad,
                     double lr) {
  if (m.size() == 0) {
    m = VectorXd::Zero(params.size());
    v = VectorXd::Zero(params.size());
  }
  if (grad.size() != params.size()) {
    throw ConfigError("AdamState::step: gradient size mismatch");
  }
  ++t;
  m = beta1 * m + (1 - beta1) * grad;
  v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params -= (lr / bc1) * m.cwiseQuotient(
                             ((v / bc2).cwiseSqrt().array() + eps).matrix());
}

double learning_rate(const HSCLConfig& config, double fractional_epoch) {
  const double e = std::clamp(fractional_epoch, 0.0, double(config.epochs));
  const double warmup = static_cast<double>(config.warmup_epochs);
  if (warmup > 0 && e < warmup) return config.lr * e / warmup;
  const double span = static_cast<double>(config.epochs) - warmup;
  if (span <= 0) return config.lr;
  const double phase = (e - warmup) / span;
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

PrototypeBank init_prototypes(int prototype_count, int dim, Rng& rng) {
  if (prototype_count < 1) throw ConfigError("prototype_count must be >= 1");
  PrototypeBank bank;
  bank.basis.resize(dim, prototype_count);
  for (int k = 0; k < prototype_count; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) {
        throw ConfigError(
            "init_prototypes: cannot place prototypes with pairwise |cos| <= "
            "0.9; reduce prototype_count or raise the embedding dimension");
      }
      const VectorXd candidate = rng.unit_vector(dim);
      bool ok = true;
      for (int prev = 0; prev < k && ok; ++prev) {
        ok = std::abs(candidate.dot(bank.basis.col(prev))) <= 0.9;
      }
      if (ok) {
        bank.basis.col(k) = candidate;
        break;
      }
    }
  }
  return bank;
}

TrainState init_train_state(const EncoderSpec& encoder_spec,
                            const HSCLConfig& config, const Rng& root) {
  config.validate();
  encoder_spec.validate();
  if (encoder_spec.projection_dim != config.embedding_dim) {
    throw ConfigError("encoder projection_dim must equal config embedding_dim");
  }
  TrainState state;
  Rng enc_rng = root.fork(rng_streams::kEncoderInit);
  state.encoder = std::make_unique<Encoder>(encoder_spec, enc_rng);
  Rng proto_rng = root.fork(rng_streams::kPrototypeInit);
  state.prototypes =
      init_prototypes(config.prototype_count, config.embedding_dim, proto_rng);
  return state;
}

namespace {

struct ViewPartition {
  std::vector<int> nu_index;  // columns with normal-labeled/unlabeled status
  std::vector<int> a_index;   // columns with abnormal status
  std::vector<LabelStatus> nu_status;
};

ViewPartition partition_views(const AugmentedBatch& batch) {
  ViewPartition part;
  for (int i = 0; i < batch.size(); ++i) {
    if (batch.status[static_cast<std::size_t>(i)] ==
        LabelStatus::AbnormalLabeled) {
      part.a_index.push_back(i);
    } else {
      part.nu_index.push_back(i);
      part.nu_status.push_back(batch.status[static_cast<std::size_t>(i)]);
    }
  }
  return part;
}

MatrixXd gather_columns(const MatrixXd& source, const std::vector<int>& index) {
  MatrixXd out(source.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = source.col(index[i]);
  }
  return out;
}

void scatter_add_columns(MatrixXd& target, const std::vector<int>& index,
                         const MatrixXd& grads, double scale) {
  for (std::size_t i = 0; i < index.size(); ++i) {
    target.col(index[i]) += scale * grads.col(static_cast<Eigen::Index>(i));
  }
}

}  // namespace

LossBreakdown train_step(TrainState& state,
                         const std::vector<LabeledSample>& batch,
                         const HSCLConfig& config,
                         const AugmentationPolicy& policy,
                         const AblationFlags& flags, const Rng& step_rng,
                         double lr) {
  const AugmentedBatch views = augment_batch(batch, policy, step_rng.fork(1));
  EmbeddingMatrix z = state.encoder->encode(views.views, /*train_mode=*/true);

  double l_ss_value = 0.0;
  MatrixXd dz = MatrixXd::Zero(z.rows(), z.cols());
  if (flags.use_ss) {
    const PositiveNegativeMasks masks = positive_negative_masks(views);
    SampleToSampleLoss ss = sample_to_sample_loss(z, masks, config.tau);
    l_ss_value = ss.value;
    dz = std::move(ss.grad_embeddings);
  }

  const ViewPartition part = partition_views(views);
  const MatrixXd z_nu = gather_columns(z, part.nu_index);
  const MatrixXd z_a = gather_columns(z, part.a_index);

  // Weights are a constant within the step: no gradient flows through them.
  WeightVector weights;
  if (flags.use_sp) {
    weights = soft_weights(z_nu, part.nu_status, state.prototypes,
                           config.w_delta);
  } else {
    // Without prototype learning the soft-weighting strategy is discarded:
    // every normal/unlabeled view weighs 1.
    weights.w_delta = config.w_delta;
    weights.weights = VectorXd::Ones(static_cast<Eigen::Index>(part.nu_index.size()));
  }

  double l_sp_value = 0.0;
  MatrixXd dv =
      MatrixXd::Zero(state.prototypes.dim(), state.prototypes.count());
  if (flags.use_sp) {
    const MatrixXd empty(z.rows(), 0);
    const MatrixXd& sp_nu = flags.use_sp_pos ? z_nu : empty;
    const MatrixXd& sp_a = flags.use_sp_neg ? z_a : empty;
    WeightVector sp_weights = weights;
    if (!flags.use_sp_pos) sp_weights.weights = VectorXd();
    SampleToPrototypeLoss sp =
        sample_to_prototype_loss(sp_nu, sp_a, sp_weights, state.prototypes);
    l_sp_value = sp.value;
    if (flags.use_sp_pos) {
      scatter_add_columns(dz, part.nu_index, sp.grad_normal_unlabeled,
                          config.lambda1);
    }
    if (flags.use_sp_neg) {
      scatter_add_columns(dz, part.a_index, sp.grad_abnormal, config.lambda1);
    }
    dv = config.lambda1 * sp.grad_prototypes;
  }

  double l_na_value = 0.0;
  bool skipped_na = true;
  int n_pairs_drawn = 0;
  if (flags.use_na) {
    const VectorXd probs = sampling_distribution(weights);
    const int n_pairs =
        std::max(1, static_cast<int>(part.a_index.size()));
    Rng na_rng = step_rng.fork(2);
    NormalToAbnormalLoss na = normal_to_abnormal_loss(
        z_nu, z_a, probs, config.tau, n_pairs, na_rng);
    l_na_value = na.value;
    skipped_na = na.skipped;
    n_pairs_drawn = na.n_pairs;
    if (!na.skipped) {
      scatter_add_columns(dz, part.nu_index, na.grad_normal_unlabeled,
                          config.lambda2);
      scatter_add_columns(dz, part.a_index, na.grad_abnormal, config.lambda2);
    }
  }

  const LossBreakdown breakdown = total_loss(
      l_ss_value, l_sp_value, l_na_value, config, n_pairs_drawn, skipped_na);

  const VectorXd grad_params = state.encoder->backward(dz);
  VectorXd params = state.encoder->parameters();
  state.opt_encoder.step(params, grad_params, lr);
  if (!params.allFinite()) {
    throw NumericalError("loss divergence: non-finite encoder parameters");
  }
  state.encoder->set_parameters(params);

  Eigen::Map<VectorXd> proto_flat(state.prototypes.basis.data(),
                                  state.prototypes.basis.size());
  const Eigen::Map<const VectorXd> dv_flat(dv.data(), dv.size());
  state.opt_prototypes.step(proto_flat, dv_flat, lr);
  state.prototypes.renormalize();

  return breakdown;
}

LossBreakdown train_step(TrainState& state,
                         const std::vector<LabeledSample>& batch,
                         const HSCLConfig& config,
                         const AugmentationPolicy& policy,
                         const AblationFlags& flags, const Rng& step_rng) {
  return train_step(state, batch, config, policy, flags, step_rng,
                    learning_rate(config, static_cast<double>(state.epoch)));
}

std::string metrics_csv_header() {
  return "epoch,l_ss,l_sp,l_na,total,lr,skipped_na_count,wall_seconds";
}

std::string metrics_csv_row(const EpochMetrics& row) {
  std::string out = std::to_string(row.epoch);
  out += ',' + fmt_double(row.l_ss);
  out += ',' + fmt_double(row.l_sp);
  out += ',' + fmt_double(row.l_na);
  out += ',' + fmt_double(row.total);
  out += ',' + fmt_double(row.lr);
  out += ',' + std::to_string(row.skipped_na_count);
  out += ',' + fmt_double(row.wall_seconds);
  return out;
}

TrainState fit(const ScenarioSplit& split, const HSCLConfig& config,
               const AugmentationPolicy& policy,
               const EncoderSpec& encoder_spec, const FitOptions& options) {
  config.validate();
  policy.validate();
  if (split.labeled_normal.empty() && !config.allow_empty_labeled) {
    throw ConfigError(
        "fit: no labeled normal samples; set allow_empty_labeled to train a "
        "gamma_l = 0 scenario");
  }

  const Rng root(config.seed);
  TrainState state = init_train_state(encoder_spec, config, root);

  // Mutable index pools for the stratified sampler.
  std::vector<const LabeledSample*> pool;
  for (const auto& s : split.unlabeled) pool.push_back(&s);
  for (const auto& s : split.labeled_normal) pool.push_back(&s);
  if (pool.empty()) throw ConfigError("fit: empty training pool");

  const int reserve_abnormal = std::min<int>(
      static_cast<int>(split.labeled_abnormal.size()), config.batch_size / 8);
  const int reserve_normal = std::min<int>(
      static_cast<int>(split.labeled_normal.size()), config.batch_size / 8);
  const int pool_per_step =
      std::max(1, config.batch_size - reserve_abnormal - reserve_normal);
  const int steps_per_epoch = static_cast<int>(
      (pool.size() + pool_per_step - 1) / static_cast<std::size_t>(pool_per_step));

  std::ofstream metrics_file;
  if (options.metrics_csv_path.has_value()) {
    metrics_file.open(*options.metrics_csv_path, std::ios::app);
    if (!metrics_file) {
      throw IoError("cannot open metrics CSV: " + *options.metrics_csv_path);
    }
    if (metrics_file.tellp() == 0) {
      metrics_file << metrics_csv_header() << "\n" << std::flush;
    }
  }

  std::vector<int> abnormal_idx(split.labeled_abnormal.size());
  std::vector<int> normal_idx(split.labeled_normal.size());
  for (std::size_t i = 0; i < abnormal_idx.size(); ++i) abnormal_idx[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < normal_idx.size(); ++i) normal_idx[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    state.epoch = epoch;
    Rng epoch_rng = root.fork(rng_streams::kEpochShuffle,
                              static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(pool);

    EpochMetrics epoch_metrics;
    epoch_metrics.epoch = epoch;

    std::size_t cursor = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<LabeledSample> batch;
      batch.reserve(static_cast<std::size_t>(config.batch_size));
      Rng compose_rng = root.fork(rng_streams::kBatchCompose,
                                  static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(step));
      // Reserved labeled slots, drawn without replacement per step.
      compose_rng.shuffle(abnormal_idx);
      for (int i = 0; i < reserve_abnormal; ++i) {
        batch.push_back(split.labeled_abnormal[static_cast<std::size_t>(abnormal_idx[static_cast<std::size_t>(i)])]);
      }
      compose_rng.shuffle(normal_idx);
      for (int i = 0; i < reserve_normal; ++i) {
        batch.push_back(split.labeled_normal[static_cast<std::size_t>(normal_idx[static_cast<std::size_t>(i)])]);
      }
      for (int i = 0; i < pool_per_step && cursor < pool.size(); ++i, ++cursor) {
        batch.push_back(*pool[cursor]);
      }

      const double fractional_epoch =
          epoch + static_cast<double>(step) / steps_per_epoch;
      const double lr = learning_rate(config, fractional_epoch);
      const Rng step_rng = root.fork(rng_streams::kStep,
                                     static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(step));
      LossBreakdown parts;
      try {
        parts = train_step(state, batch, config, policy, options.flags,
                           step_rng, lr);
      } catch (const NumericalError& e) {
        throw NumericalError("training aborted at epoch " +
                             std::to_string(epoch) + " step " +
                             std::to_string(step) + ": " + e.what());
      }

      epoch_metrics.l_ss += parts.l_ss;
      epoch_metrics.l_sp += parts.l_sp;
      epoch_metrics.l_na += parts.l_na;
      epoch_metrics.total += parts.total;
      epoch_metrics.skipped_na_count += parts.skipped_na ? 1 : 0;
      epoch_metrics.lr = lr;
    }

    epoch_metrics.l_ss /= steps_per_epoch;
    epoch_metrics.l_sp /= steps_per_epoch;
    epoch_metrics.l_na /= steps_per_epoch;
    epoch_metrics.total /= steps_per_epoch;
    epoch_metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      epoch_start)
            .count();
    state.history.push_back(epoch_metrics);
    if (metrics_file.is_open()) {
      metrics_file << metrics_csv_row(epoch_metrics) << "\n" << std::flush;
    }
    if (options.verbose) {
      std::cerr << "epoch " << epoch << " total " << epoch_metrics.total
                << " lr " << epoch_metrics.lr << "\n";
    }
  }
  state.epoch = config.epochs;
  if (options.checkpoint_blob_path.has_value() ||
      options.checkpoint_manifest_path.has_value()) {
    if (!options.checkpoint_blob_path.has_value() ||
        !options.checkpoint_manifest_path.has_value()) {
      throw ConfigError("fit: checkpoint needs both blob and manifest paths");
    }
    save_checkpoint(state, config, *options.checkpoint_blob_path,
                    *options.checkpoint_manifest_path);
  }
  return state;
}

// ----------------------------------------------------------- checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'S', 'C', 'C', 'K', 'P', '1', '\0'};

void write_vector(std::ofstream& f, const VectorXd& v) {
  const std::uint64_t n = static_cast<std::uint64_t>(v.size());
  f.write(reinterpret_cast<const char*>(&n), sizeof(n));
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
}

VectorXd read_vector(std::ifstream& f) {
  std::uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), sizeof(n));
  VectorXd v(static_cast<Eigen::Index>(n));
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

json encoder_spec_to_json(const EncoderSpec& spec) {
  json j;
  j["kind"] = to_string(spec.kind);
  j["input_shape"] = {spec.input_shape.channels, spec.input_shape.rows,
                      spec.input_shape.cols};
  j["projection_dim"] = spec.projection_dim;
  j["mlp_hidden"] = spec.mlp_hidden;
  return j;
}

EncoderSpec encoder_spec_from_json(const json& j) {
  EncoderSpec spec;
  spec.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  if (shape.size() != 3) throw IoError("checkpoint: bad input_shape");
  spec.input_shape = DatumShape{shape[0], shape[1], shape[2]};
  spec.projection_dim = j.at("projection_dim").get<int>();
  spec.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  return spec;
}

json config_to_json(const HSCLConfig& c) {
  json j;
  j["tau"] = c.tau;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["prototype_count"] = c.prototype_count;
  j["embedding_dim"] = c.embedding_dim;
  j["w_delta"] = c.w_delta;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["warmup_epochs"] = c.warmup_epochs;
  j["seed"] = c.seed;
  j["allow_empty_labeled"] = c.allow_empty_labeled;
  return j;
}

HSCLConfig config_from_json_strict(const json& j) {
  HSCLConfig c;
  c.tau = j.at("tau").get<double>();
  c.lambda1 = j.at("lambda1").get<double>();
  c.lambda2 = j.at("lambda2").get<double>();
  c.prototype_count = j.at("prototype_count").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.w_delta = j.at("w_delta").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.warmup_epochs = j.at("warmup_epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.allow_empty_labeled = j.at("allow_empty_labeled").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const TrainState& state, const HSCLConfig& config,
                     const std::string& blob_path,
                     const std::string& manifest_path) {
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot write checkpoint blob: " + blob_path);
  blob.write(kCheckpointMagic, 8);
  write_vector(blob, state.encoder->parameters());
  write_vector(blob, state.encoder->buffers());
  write_vector(blob, state.opt_encoder.m);
  write_vector(blob, state.opt_encoder.v);
  const std::int64_t t_enc = state.opt_encoder.t;
  blob.write(reinterpret_cast<const char*>(&t_enc), sizeof(t_enc));
  write_vector(blob, state.opt_prototypes.m);
  write_vector(blob, state.opt_prototypes.v);
  const std::int64_t t_proto = state.opt_prototypes.t;
  blob.write(reinterpret_cast<const char*>(&t_proto), sizeof(t_proto));
  if (!blob) throw IoError("failed writing checkpoint blob: " + blob_path);

  json manifest;
  manifest["format"] = "hscl-checkpoint-1";
  manifest["epoch"] = state.epoch;
  manifest["encoder"] = encoder_spec_to_json(state.encoder->spec());
  manifest["config"] = config_to_json(config);
  json protos = json::array();
  for (int k = 0; k < state.prototypes.count(); ++k) {
    json column = json::array();
    for (int d = 0; d < state.prototypes.dim(); ++d) {
      column.push_back(state.prototypes.basis(d, k));
    }
    protos.push_back(column);
  }
  manifest["prototypes"] = protos;

  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("cannot write checkpoint manifest: " + manifest_path);
  mf << manifest.dump(2) << "\n";
  if (!mf) throw IoError("failed writing checkpoint manifest");
}

LoadedCheckpoint load_checkpoint(const std::string& blob_path,
                                 const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open checkpoint manifest: " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid checkpoint manifest: ") + e.what());
  }
  if (!manifest.contains("format") || manifest["format"] != "hscl-checkpoint-1") {
    throw IoError("unrecognized checkpoint format");
  }

  LoadedCheckpoint out;
  out.encoder_spec = encoder_spec_from_json(manifest.at("encoder"));
  out.config = config_from_json_strict(manifest.at("config"));
  out.state.epoch = manifest.at("epoch").get<int>();

  Rng dummy(0);
  out.state.encoder = std::make_unique<Encoder>(out.encoder_spec, dummy);

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open checkpoint blob: " + blob_path);
  char magic[8];
  blob.read(magic, 8);
  if (!blob || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("not a checkpoint blob (bad magic): " + blob_path);
  }
  const VectorXd params = read_vector(blob);
  const VectorXd buffers = read_vector(blob);
  out.state.opt_encoder.m = read_vector(blob);
  out.state.opt_encoder.v = read_vector(blob);
  std::int64_t t_enc = 0;
  blob.read(reinterpret_cast<char*>(&t_enc), sizeof(t_enc));
  out.state.opt_encoder.t = t_enc;
  out.state.opt_prototypes.m = read_vector(blob);
  out.state.opt_prototypes.v = read_vector(blob);
  std::int64_t t_proto = 0;
  blob.read(reinterpret_cast<char*>(&t_proto), sizeof(t_proto));
  out.state.opt_prototypes.t = t_proto;
  if (!blob) throw IoError("truncated checkpoint blob: " + blob_path);
  out.state.encoder->set_parameters(params);
  out.state.encoder->set_buffers(buffers);

  const json& protos = manifest.at("prototypes");
  const int k = static_cast<int>(protos.size());
  if (k < 1) throw IoError("checkpoint has no prototypes");
  const int dim = static_cast<int>(protos.at(0).size());
  out.state.prototypes.basis.resize(dim, k);
  for (int c = 0; c < k; ++c) {
    for (int d = 0; d < dim; ++d) {
      out.state.prototypes.basis(d, c) = protos.at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(d)).get<double>();
    }
  }
  return out;
}

}  // namespace hscl
