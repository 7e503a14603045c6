// Command-line front end: scenario construction, training, evaluation,
// ablation sweeps, and embedding export. Exit codes: 0 ok, 1 usage/config,
// 2 numerical failure, 3 I/O.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hscl/config.hpp"
#include "hscl/eval.hpp"
#include "hscl/text.hpp"
#include "hscl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "hscl 0.1.0";
constexpr std::int64_t kAnomalyIdBase = std::int64_t{1} << 40;

struct Overrides {
  std::optional<int> epochs;
  std::optional<double> w_delta;
  std::optional<int> prototype_count;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<std::uint64_t> seed;
};

json load_json_file(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f) throw hscl::IoError(std::string("cannot open ") + what + ": " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw hscl::IoError(std::string("invalid JSON in ") + path + ": " +
                        e.what());
  }
}

// Seed overrides are applied to the raw document so the per-section seed
// defaults cascade exactly as if the config had been written with that seed.
hscl::RunConfig load_config(const std::string& path, const Overrides& o) {
  json doc = load_json_file(path, "config file");
  if (o.seed.has_value()) doc["seed"] = *o.seed;
  hscl::RunConfig cfg = hscl::run_config_from_json(doc);
  if (o.epochs.has_value()) cfg.train.epochs = *o.epochs;
  if (o.w_delta.has_value()) cfg.train.w_delta = *o.w_delta;
  if (o.prototype_count.has_value()) cfg.train.prototype_count = *o.prototype_count;
  if (o.lambda1.has_value()) cfg.train.lambda1 = *o.lambda1;
  if (o.lambda2.has_value()) cfg.train.lambda2 = *o.lambda2;
  cfg.train.validate();
  return cfg;
}

struct LoadedScenario {
  hscl::DatasetHandle source;
  std::optional<hscl::DatasetHandle> anomaly;
  hscl::ScenarioSplit split;
};

LoadedScenario build_from_config(const hscl::RunConfig& cfg) {
  LoadedScenario out;
  out.source = hscl::load_dataset(cfg.data, cfg.seed);
  if (cfg.anomaly_data.has_value()) {
    out.anomaly = hscl::load_dataset(*cfg.anomaly_data, cfg.seed + 1,
                                     kAnomalyIdBase);
  }
  out.split = hscl::build_scenario(
      cfg.scenario, out.source,
      out.anomaly.has_value() ? &*out.anomaly : nullptr);
  return out;
}

LoadedScenario load_from_manifest(const hscl::RunConfig& cfg,
                                  const std::string& split_path) {
  LoadedScenario out;
  out.source = hscl::load_dataset(cfg.data, cfg.seed);
  if (cfg.anomaly_data.has_value()) {
    out.anomaly = hscl::load_dataset(*cfg.anomaly_data, cfg.seed + 1,
                                     kAnomalyIdBase);
  }
  std::ifstream f(split_path);
  if (!f) throw hscl::IoError("cannot open split manifest: " + split_path);
  std::stringstream buffer;
  buffer << f.rdbuf();
  out.split = hscl::split_from_manifest_json(
      buffer.str(), out.source,
      out.anomaly.has_value() ? &*out.anomaly : nullptr);
  return out;
}

void require_writable(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw hscl::ConfigError(path.string() +
                            " already exists; pass --force to overwrite");
  }
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw hscl::IoError("cannot write " + path.string());
  f << content;
  if (!f) throw hscl::IoError("failed writing " + path.string());
}

hscl::AblationFlags flags_from_cell(const std::string& cell) {
  hscl::AblationFlags flags;
  if (cell == "full") return flags;
  if (cell == "wo_ss") {
    flags.use_ss = false;
  } else if (cell == "wo_sp") {
    flags.use_sp = false;
  } else if (cell == "wo_na") {
    flags.use_na = false;
  } else if (cell == "wo_sp_pos") {
    flags.use_sp_pos = false;
  } else if (cell == "wo_sp_neg") {
    flags.use_sp_neg = false;
  } else {
    throw hscl::ConfigError(
        "unknown ablation cell '" + cell +
        "' (expected full, wo_ss, wo_sp, wo_na, wo_sp_pos, wo_sp_neg)");
  }
  return flags;
}

json flags_to_json(const hscl::AblationFlags& flags) {
  json j;
  j["use_ss"] = flags.use_ss;
  j["use_sp"] = flags.use_sp;
  j["use_na"] = flags.use_na;
  j["use_sp_pos"] = flags.use_sp_pos;
  j["use_sp_neg"] = flags.use_sp_neg;
  return j;
}

hscl::AblationFlags flags_from_json(const json& j) {
  hscl::AblationFlags flags;
  flags.use_ss = j.at("use_ss").get<bool>();
  flags.use_sp = j.at("use_sp").get<bool>();
  flags.use_na = j.at("use_na").get<bool>();
  flags.use_sp_pos = j.at("use_sp_pos").get<bool>();
  flags.use_sp_neg = j.at("use_sp_neg").get<bool>();
  return flags;
}

std::vector<hscl::ScoredSample> score_split(hscl::TrainState& state,
                                            const hscl::AblationFlags& flags,
                                            const hscl::ScenarioSplit& split) {
  if (flags.use_sp) {
    return hscl::normality_score(state, split.test, split.test_is_abnormal);
  }
  // Prototypes were not learned: fall back to a k-nearest-neighbor score
  // against the training views assumed normal (labeled normal plus the
  // unlabeled pool, contamination included).
  std::vector<hscl::LabeledSample> pool = split.labeled_normal;
  pool.insert(pool.end(), split.unlabeled.begin(), split.unlabeled.end());
  if (pool.empty()) {
    throw hscl::ConfigError("k-NN scoring needs a nonempty normal pool");
  }
  const hscl::EmbeddingMatrix reference = hscl::embed_samples(state, pool);
  const hscl::EmbeddingMatrix queries = hscl::embed_samples(state, split.test);
  std::vector<std::int64_t> ids;
  ids.reserve(split.test.size());
  for (const auto& s : split.test) ids.push_back(s.id());
  return hscl::knn_normality_score(reference, queries, ids,
                                   split.test_is_abnormal);
}

// ------------------------------------------------------------- commands

int cmd_make_scenario(const std::string& config_path, const std::string& out_dir,
                      bool force, const Overrides& overrides) {
  const hscl::RunConfig cfg = load_config(config_path, overrides);
  const LoadedScenario loaded = build_from_config(cfg);
  fs::create_directories(out_dir);
  const fs::path split_path = fs::path(out_dir) / "split.json";
  require_writable(split_path, force);
  write_text_file(split_path, hscl::split_manifest_json(loaded.split));

  const auto& split = loaded.split;
  std::size_t contaminated = 0;
  for (const auto& s : split.unlabeled) {
    const auto label = s.true_label_for_eval();
    if (label.has_value() && *label != split.spec.normal_class) ++contaminated;
  }
  std::size_t test_abnormal = 0;
  for (bool b : split.test_is_abnormal) test_abnormal += b ? 1 : 0;
  std::cout << "wrote " << split_path.string() << "\n"
            << "labeled normal:   " << split.labeled_normal.size() << "\n"
            << "labeled abnormal: " << split.labeled_abnormal.size() << "\n"
            << "unlabeled:        " << split.unlabeled.size()
            << " (contaminated: " << contaminated << ")\n"
            << "test:             " << split.test.size() << " (abnormal: "
            << test_abnormal << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& split_path,
              const std::string& out_dir, bool force,
              const Overrides& overrides, const std::string& drop_cell,
              bool quiet) {
  const hscl::RunConfig cfg = load_config(config_path, overrides);
  const hscl::AblationFlags flags = flags_from_cell(drop_cell);

  fs::create_directories(out_dir);
  const fs::path manifest_path = fs::path(out_dir) / "manifest.json";
  require_writable(manifest_path, force);

  LoadedScenario loaded;
  fs::path stored_split = fs::path(out_dir) / "split.json";
  if (!split_path.empty()) {
    loaded = load_from_manifest(cfg, split_path);
    if (fs::absolute(split_path) != fs::absolute(stored_split)) {
      require_writable(stored_split, force);
      fs::copy_file(split_path, stored_split,
                    fs::copy_options::overwrite_existing);
    }
  } else {
    loaded = build_from_config(cfg);
    require_writable(stored_split, force);
    write_text_file(stored_split, hscl::split_manifest_json(loaded.split));
  }

  const fs::path metrics_path = fs::path(out_dir) / "metrics.csv";
  require_writable(metrics_path, force);
  if (fs::exists(metrics_path)) fs::remove(metrics_path);  // append-only file

  hscl::FitOptions options;
  options.flags = flags;
  options.metrics_csv_path = metrics_path.string();
  options.checkpoint_blob_path = (fs::path(out_dir) / "checkpoint.bin").string();
  options.checkpoint_manifest_path =
      (fs::path(out_dir) / "checkpoint.json").string();
  options.verbose = !quiet;

  const hscl::EncoderSpec encoder_spec = cfg.encoder_spec(loaded.split.shape);
  hscl::TrainState state =
      hscl::fit(loaded.split, cfg.train, cfg.augmentation, encoder_spec,
                options);

  json manifest;
  manifest["format"] = "hscl-run-1";
  manifest["version"] = kVersion;
  manifest["seed"] = cfg.seed;
  manifest["config"] = cfg.to_json();
  manifest["ablation"] = flags_to_json(flags);
  manifest["artifacts"]["split_manifest"] = "split.json";
  manifest["artifacts"]["metrics_csv"] = "metrics.csv";
  manifest["artifacts"]["checkpoint_blob"] = "checkpoint.bin";
  manifest["artifacts"]["checkpoint_manifest"] = "checkpoint.json";
  manifest["artifacts"]["scores_csv"] = "scores.csv";
  manifest["artifacts"]["summary_json"] = "summary.json";
  write_text_file(manifest_path, manifest.dump(2) + "\n");

  std::cout << "run complete: " << out_dir << " (epochs "
            << cfg.train.epochs << ", final total loss "
            << (state.history.empty() ? 0.0 : state.history.back().total)
            << ")\n";
  return 0;
}

struct LoadedRun {
  hscl::RunConfig config;
  hscl::AblationFlags flags;
  LoadedScenario scenario;
  hscl::LoadedCheckpoint checkpoint;
};

LoadedRun load_run(const std::string& run_dir,
                   const std::string& split_override) {
  const fs::path dir(run_dir);
  const json manifest = load_json_file((dir / "manifest.json").string(),
                                       "run manifest");
  if (!manifest.contains("format") || manifest["format"] != "hscl-run-1") {
    throw hscl::IoError("unrecognized run manifest format");
  }
  LoadedRun run;
  run.config = hscl::run_config_from_json(manifest.at("config"));
  run.flags = flags_from_json(manifest.at("ablation"));
  const std::string split_path =
      split_override.empty()
          ? (dir / manifest.at("artifacts").at("split_manifest")
                       .get<std::string>())
                .string()
          : split_override;
  run.scenario = load_from_manifest(run.config, split_path);
  run.checkpoint = hscl::load_checkpoint(
      (dir / manifest.at("artifacts").at("checkpoint_blob").get<std::string>())
          .string(),
      (dir /
       manifest.at("artifacts").at("checkpoint_manifest").get<std::string>())
          .string());
  return run;
}

int cmd_eval(const std::string& run_dir, const std::string& split_override,
             const std::string& out_dir_arg, bool force) {
  LoadedRun run = load_run(run_dir, split_override);
  const fs::path out_dir = out_dir_arg.empty() ? fs::path(run_dir)
                                               : fs::path(out_dir_arg);
  fs::create_directories(out_dir);
  const fs::path scores_path = out_dir / "scores.csv";
  const fs::path summary_path = out_dir / "summary.json";
  require_writable(scores_path, force);
  require_writable(summary_path, force);

  const std::vector<hscl::ScoredSample> scored =
      score_split(run.checkpoint.state, run.flags, run.scenario.split);
  const double roc = hscl::auroc(scored);

  write_text_file(scores_path, hscl::scores_csv(scored));

  std::size_t n_normal = 0, n_abnormal = 0;
  for (const auto& s : scored) (s.is_abnormal_truth ? n_abnormal : n_normal)++;
  json summary;
  summary["auroc"] = roc;
  summary["n_normal"] = n_normal;
  summary["n_abnormal"] = n_abnormal;
  summary["scenario"]["kind"] = to_string(run.scenario.split.spec.scenario);
  summary["scenario"]["normal_class"] = run.scenario.split.spec.normal_class;
  summary["scenario"]["gamma_l"] = run.scenario.split.spec.gamma_l;
  summary["scenario"]["gamma_p"] = run.scenario.split.spec.gamma_p;
  summary["scenario"]["seed"] = run.scenario.split.spec.seed;
  write_text_file(summary_path, summary.dump(2) + "\n");

  std::cout << "auroc " << hscl::fmt_double(roc) << " (" << n_normal
            << " normal, " << n_abnormal << " abnormal)\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               bool force, const Overrides& overrides,
               const std::vector<std::string>& cells,
               const std::vector<double>& w_delta_sweep,
               const std::vector<int>& k_sweep, int n_seeds, bool quiet) {
  if (n_seeds < 1) throw hscl::ConfigError("--seeds must be >= 1");
  json base_doc = load_json_file(config_path, "config file");
  if (overrides.seed.has_value()) base_doc["seed"] = *overrides.seed;

  struct Cell {
    std::string setting;
    hscl::AblationFlags flags;
    std::optional<double> w_delta;
    std::optional<int> prototype_count;
  };
  std::vector<Cell> grid;
  for (const std::string& c : cells) {
    grid.push_back({c, flags_from_cell(c), {}, {}});
  }
  for (double w : w_delta_sweep) {
    char label[32];
    std::snprintf(label, sizeof(label), "w_delta=%g", w);
    grid.push_back({label, {}, w, {}});
  }
  for (int k : k_sweep) {
    grid.push_back({"k=" + std::to_string(k), {}, {}, k});
  }
  if (grid.empty()) throw hscl::ConfigError("ablation grid is empty");

  fs::create_directories(out_dir);
  const fs::path table_path = fs::path(out_dir) / "ablation.csv";
  require_writable(table_path, force);
  std::ofstream table(table_path);
  if (!table) throw hscl::IoError("cannot write " + table_path.string());
  table << "setting,seed,auroc\n" << std::flush;

  const std::uint64_t base_seed = base_doc.value("seed", std::uint64_t{0});
  for (const Cell& cell : grid) {
    for (int s = 0; s < n_seeds; ++s) {
      json doc = base_doc;
      doc["seed"] = base_seed + static_cast<std::uint64_t>(s);
      hscl::RunConfig cfg = hscl::run_config_from_json(doc);
      if (overrides.epochs.has_value()) cfg.train.epochs = *overrides.epochs;
      if (overrides.lambda1.has_value()) cfg.train.lambda1 = *overrides.lambda1;
      if (overrides.lambda2.has_value()) cfg.train.lambda2 = *overrides.lambda2;
      if (cell.w_delta.has_value()) cfg.train.w_delta = *cell.w_delta;
      if (cell.prototype_count.has_value()) {
        cfg.train.prototype_count = *cell.prototype_count;
      }
      cfg.train.validate();

      const LoadedScenario loaded = build_from_config(cfg);
      hscl::FitOptions options;
      options.flags = cell.flags;
      hscl::TrainState state =
          hscl::fit(loaded.split, cfg.train, cfg.augmentation,
                    cfg.encoder_spec(loaded.split.shape), options);
      const double roc =
          hscl::auroc(score_split(state, cell.flags, loaded.split));
      table << cell.setting << ',' << cfg.seed << ','
            << hscl::fmt_double(roc) << "\n"
            << std::flush;
      if (!quiet) {
        std::cerr << cell.setting << " seed " << cfg.seed << " auroc " << roc
                  << "\n";
      }
    }
  }
  std::cout << "wrote " << table_path.string() << "\n";
  return 0;
}

int cmd_plot_embeddings(const std::string& run_dir,
                        const std::string& split_override,
                        const std::string& out_csv, const std::string& out_svg,
                        bool use_tsne, bool force) {
  LoadedRun run = load_run(run_dir, split_override);
  require_writable(out_csv, force);
  const hscl::EmbeddingExport table = hscl::export_embeddings(
      run.checkpoint.state, run.scenario.split.test,
      run.scenario.split.test_is_abnormal,
      use_tsne ? hscl::Reducer::Tsne : hscl::Reducer::None, run.config.seed);
  write_text_file(out_csv, hscl::embedding_csv(table));
  if (!out_svg.empty()) {
    require_writable(out_svg, force);
    if (table.coords.rows() != 2) {
      throw hscl::ConfigError("--svg needs 2-D coordinates; pass --tsne");
    }
    write_text_file(out_svg, hscl::embedding_scatter_svg(table));
  }
  std::cout << "wrote " << out_csv
            << (out_svg.empty() ? "" : (" and " + out_svg)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical semi-supervised contrastive anomaly detection"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Overrides overrides;
  std::string config_path, out_dir, split_path, run_dir, out_csv, out_svg;
  std::string drop_cell = "full";
  bool force = false, use_tsne = false, quiet = false;
  std::vector<std::string> cells = {"full"};
  std::vector<double> w_delta_sweep;
  std::vector<int> k_sweep;
  int n_seeds = 3;

  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", overrides.epochs, "Override train.epochs");
    cmd->add_option("--w-delta", overrides.w_delta, "Override train.w_delta");
    cmd->add_option("--k", overrides.prototype_count,
                    "Override train.prototype_count");
    cmd->add_option("--lambda1", overrides.lambda1, "Override train.lambda1");
    cmd->add_option("--lambda2", overrides.lambda2, "Override train.lambda2");
    cmd->add_option("--seed", overrides.seed, "Override the run seed");
  };

  CLI::App* make_scenario =
      app.add_subcommand("make-scenario", "Build and save a scenario split");
  make_scenario->add_option("--config", config_path, "Run config JSON")
      ->required();
  make_scenario->add_option("--out", out_dir, "Output directory")->required();
  make_scenario->add_flag("--force", force, "Overwrite existing outputs");
  add_overrides(make_scenario);

  CLI::App* train = app.add_subcommand("train", "Train on a scenario split");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--split", split_path,
                    "Split manifest (default: build from config)");
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--drop", drop_cell,
                    "Ablation cell to train (default full)");
  train->add_flag("--force", force, "Overwrite existing outputs");
  train->add_flag("--quiet", quiet, "Suppress per-epoch progress");
  add_overrides(train);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a trained run");
  eval_cmd->add_option("--run", run_dir, "Run directory")->required();
  eval_cmd->add_option("--split", split_path, "Override split manifest");
  eval_cmd->add_option("--out", out_dir, "Output directory (default: run dir)");
  eval_cmd->add_flag("--force", force, "Overwrite existing outputs");

  CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  ablate->add_option("--config", config_path, "Run config JSON")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--cells", cells,
                     "Cells: full wo_ss wo_sp wo_na wo_sp_pos wo_sp_neg")
      ->delimiter(',');
  ablate->add_option("--sweep-w-delta", w_delta_sweep,
                     "w_delta values to sweep (full model)")
      ->delimiter(',');
  ablate->add_option("--sweep-k", k_sweep,
                     "prototype counts to sweep (full model)")
      ->delimiter(',');
  ablate->add_option("--seeds", n_seeds, "Seeds per cell (default 3)");
  ablate->add_flag("--force", force, "Overwrite existing outputs");
  ablate->add_flag("--quiet", quiet, "Suppress progress");
  add_overrides(ablate);

  CLI::App* plot = app.add_subcommand("plot-embeddings",
                                      "Export test-set embeddings");
  plot->add_option("--run", run_dir, "Run directory")->required();
  plot->add_option("--split", split_path, "Override split manifest");
  plot->add_option("--out", out_csv, "Output CSV path")->required();
  plot->add_option("--svg", out_svg, "Also render an SVG scatter");
  plot->add_flag("--tsne", use_tsne, "Reduce to 2-D with t-SNE");
  plot->add_flag("--force", force, "Overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(make_scenario)) {
      return cmd_make_scenario(config_path, out_dir, force, overrides);
    }
    if (app.got_subcommand(train)) {
      return cmd_train(config_path, split_path, out_dir, force, overrides,
                       drop_cell, quiet);
    }
    if (app.got_subcommand(eval_cmd)) {
      return cmd_eval(run_dir, split_path, out_dir, force);
    }
    if (app.got_subcommand(ablate)) {
      return cmd_ablate(config_path, out_dir, force, overrides, cells,
                        w_delta_sweep, k_sweep, n_seeds, quiet);
    }
    if (app.got_subcommand(plot)) {
      return cmd_plot_embeddings(run_dir, split_path, out_csv, out_svg,
                                 use_tsne, force);
    }
  } catch (const hscl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const hscl::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const hscl::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
