#include "hscl/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace hscl {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& context) {
  if (!obj.is_object()) {
    throw ConfigError("config section '" + context + "' must be an object");
  }
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.contains(key)) {
      throw ConfigError("unknown config key '" + key + "' in " + context);
    }
  }
}

DataConfig data_config_from_json(const json& j, const std::string& context) {
  check_keys(j,
             {"kind", "n_classes", "dim", "separation", "n_per_class", "seed",
              "train_path", "test_path", "name"},
             context);
  DataConfig d;
  d.kind = j.value("kind", d.kind);
  if (d.kind != "synthetic_blobs" && d.kind != "records") {
    throw ConfigError("data.kind must be synthetic_blobs or records");
  }
  d.n_classes = j.value("n_classes", d.n_classes);
  d.dim = j.value("dim", d.dim);
  d.separation = j.value("separation", d.separation);
  d.n_per_class = j.value("n_per_class", d.n_per_class);
  if (j.contains("seed")) d.seed = j.at("seed").get<std::uint64_t>();
  d.train_path = j.value("train_path", d.train_path);
  d.test_path = j.value("test_path", d.test_path);
  d.name = j.value("name", d.name);
  if (d.kind == "records" && (d.train_path.empty() || d.test_path.empty())) {
    throw ConfigError("records dataset needs train_path and test_path");
  }
  return d;
}

json data_config_to_json(const DataConfig& d) {
  json j;
  j["kind"] = d.kind;
  if (d.kind == "synthetic_blobs") {
    j["n_classes"] = d.n_classes;
    j["dim"] = d.dim;
    j["separation"] = d.separation;
    j["n_per_class"] = d.n_per_class;
    if (d.seed.has_value()) j["seed"] = *d.seed;
  } else {
    j["train_path"] = d.train_path;
    j["test_path"] = d.test_path;
    j["name"] = d.name;
  }
  return j;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  augmentation.validate();
  scenario.validate();
  if (scenario.scenario == ScenarioKind::S3CrossDataset &&
      !anomaly_data.has_value()) {
    throw ConfigError("cross_dataset scenario requires an anomaly_data section");
  }
}

EncoderSpec RunConfig::encoder_spec(const DatumShape& input_shape) const {
  EncoderSpec spec;
  spec.kind = model_kind;
  spec.input_shape = input_shape;
  spec.projection_dim = train.embedding_dim;
  spec.mlp_hidden = mlp_hidden;
  return spec;
}

json RunConfig::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["data"] = data_config_to_json(data);
  if (anomaly_data.has_value()) {
    doc["anomaly_data"] = data_config_to_json(*anomaly_data);
  }
  doc["scenario"]["kind"] = to_string(scenario.scenario);
  doc["scenario"]["normal_class"] = scenario.normal_class;
  doc["scenario"]["gamma_l"] = scenario.gamma_l;
  doc["scenario"]["gamma_p"] = scenario.gamma_p;
  doc["scenario"]["seed"] = scenario.seed;
  doc["scenario"]["test_mode"] = scenario.test_mode;
  if (scenario.test_anomaly_class.has_value()) {
    doc["scenario"]["test_anomaly_class"] = *scenario.test_anomaly_class;
  }
  doc["train"]["tau"] = train.tau;
  doc["train"]["lambda1"] = train.lambda1;
  doc["train"]["lambda2"] = train.lambda2;
  doc["train"]["prototype_count"] = train.prototype_count;
  doc["train"]["embedding_dim"] = train.embedding_dim;
  doc["train"]["w_delta"] = train.w_delta;
  doc["train"]["batch_size"] = train.batch_size;
  doc["train"]["epochs"] = train.epochs;
  doc["train"]["lr"] = train.lr;
  doc["train"]["warmup_epochs"] = train.warmup_epochs;
  doc["train"]["allow_empty_labeled"] = train.allow_empty_labeled;
  doc["augmentation"]["crop_scale_min"] = augmentation.crop_scale_min;
  doc["augmentation"]["crop_scale_max"] = augmentation.crop_scale_max;
  doc["augmentation"]["output_size"] = augmentation.output_size;
  doc["augmentation"]["hflip_prob"] = augmentation.hflip_prob;
  doc["augmentation"]["color_jitter_strength"] =
      augmentation.color_jitter_strength;
  doc["augmentation"]["color_jitter_prob"] = augmentation.color_jitter_prob;
  doc["augmentation"]["grayscale_prob"] = augmentation.grayscale_prob;
  doc["augmentation"]["rotations"] = augmentation.rotations;
  doc["augmentation"]["views_per_sample"] = augmentation.views_per_sample;
  doc["augmentation"]["noise_std"] = augmentation.noise_std;
  doc["model"]["kind"] = to_string(model_kind);
  doc["model"]["mlp_hidden"] = mlp_hidden;
  return doc;
}

RunConfig run_config_from_json(const json& doc) {
  check_keys(doc,
             {"seed", "data", "anomaly_data", "scenario", "train",
              "augmentation", "model"},
             "config root");
  RunConfig cfg;
  cfg.seed = doc.value("seed", cfg.seed);
  if (doc.contains("data")) {
    cfg.data = data_config_from_json(doc.at("data"), "data");
  }
  if (doc.contains("anomaly_data")) {
    cfg.anomaly_data =
        data_config_from_json(doc.at("anomaly_data"), "anomaly_data");
  }
  if (doc.contains("scenario")) {
    const json& s = doc.at("scenario");
    check_keys(s,
               {"kind", "normal_class", "gamma_l", "gamma_p", "seed",
                "test_mode", "test_anomaly_class"},
               "scenario");
    if (s.contains("kind")) {
      cfg.scenario.scenario =
          scenario_kind_from_string(s.at("kind").get<std::string>());
    }
    // One-class scenarios must name the in-distribution class explicitly.
    if (cfg.scenario.scenario != ScenarioKind::S3CrossDataset &&
        !s.contains("normal_class")) {
      throw ConfigError("scenario.normal_class is required");
    }
    cfg.scenario.normal_class = s.value("normal_class", cfg.scenario.normal_class);
    cfg.scenario.gamma_l = s.value("gamma_l", cfg.scenario.gamma_l);
    cfg.scenario.gamma_p = s.value("gamma_p", cfg.scenario.gamma_p);
    cfg.scenario.seed = s.value("seed", cfg.seed);
    cfg.scenario.test_mode = s.value("test_mode", cfg.scenario.test_mode);
    if (s.contains("test_anomaly_class") &&
        !s.at("test_anomaly_class").is_null()) {
      cfg.scenario.test_anomaly_class = s.at("test_anomaly_class").get<int>();
    }
  } else {
    cfg.scenario.seed = cfg.seed;
  }
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    check_keys(t,
               {"tau", "lambda1", "lambda2", "prototype_count",
                "embedding_dim", "w_delta", "batch_size", "epochs", "lr",
                "warmup_epochs", "allow_empty_labeled"},
               "train");
    cfg.train.tau = t.value("tau", cfg.train.tau);
    cfg.train.lambda1 = t.value("lambda1", cfg.train.lambda1);
    cfg.train.lambda2 = t.value("lambda2", cfg.train.lambda2);
    cfg.train.prototype_count =
        t.value("prototype_count", cfg.train.prototype_count);
    cfg.train.embedding_dim = t.value("embedding_dim", cfg.train.embedding_dim);
    cfg.train.w_delta = t.value("w_delta", cfg.train.w_delta);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.warmup_epochs = t.value("warmup_epochs", cfg.train.warmup_epochs);
    cfg.train.allow_empty_labeled =
        t.value("allow_empty_labeled", cfg.train.allow_empty_labeled);
  }
  cfg.train.seed = cfg.seed;
  if (doc.contains("augmentation")) {
    const json& a = doc.at("augmentation");
    check_keys(a,
               {"crop_scale_min", "crop_scale_max", "output_size",
                "hflip_prob", "color_jitter_strength", "color_jitter_prob",
                "grayscale_prob", "rotations", "views_per_sample",
                "noise_std"},
               "augmentation");
    cfg.augmentation.crop_scale_min =
        a.value("crop_scale_min", cfg.augmentation.crop_scale_min);
    cfg.augmentation.crop_scale_max =
        a.value("crop_scale_max", cfg.augmentation.crop_scale_max);
    cfg.augmentation.output_size =
        a.value("output_size", cfg.augmentation.output_size);
    cfg.augmentation.hflip_prob = a.value("hflip_prob", cfg.augmentation.hflip_prob);
    cfg.augmentation.color_jitter_strength =
        a.value("color_jitter_strength", cfg.augmentation.color_jitter_strength);
    cfg.augmentation.color_jitter_prob =
        a.value("color_jitter_prob", cfg.augmentation.color_jitter_prob);
    cfg.augmentation.grayscale_prob =
        a.value("grayscale_prob", cfg.augmentation.grayscale_prob);
    if (a.contains("rotations")) {
      cfg.augmentation.rotations = a.at("rotations").get<std::vector<int>>();
    }
    cfg.augmentation.views_per_sample =
        a.value("views_per_sample", cfg.augmentation.views_per_sample);
    cfg.augmentation.noise_std = a.value("noise_std", cfg.augmentation.noise_std);
  }
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    check_keys(m, {"kind", "mlp_hidden", "projection_dim"}, "model");
    if (m.contains("kind")) {
      cfg.model_kind = encoder_kind_from_string(m.at("kind").get<std::string>());
    }
    if (m.contains("mlp_hidden")) {
      cfg.mlp_hidden = m.at("mlp_hidden").get<std::vector<int>>();
    }
    if (m.contains("projection_dim")) {
      const int p = m.at("projection_dim").get<int>();
      if (p != cfg.train.embedding_dim) {
        throw ConfigError(
            "model.projection_dim must equal train.embedding_dim");
      }
    }
  }
  // Synthetic vector data cannot be rotated; default the policy accordingly
  // when the user did not ask for rotations explicitly.
  if (cfg.data.kind == "synthetic_blobs" &&
      (!doc.contains("augmentation") ||
       !doc.at("augmentation").contains("rotations"))) {
    cfg.augmentation.rotations.clear();
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  return run_config_from_json(doc);
}

DatasetHandle load_dataset(const DataConfig& data, std::uint64_t default_seed,
                           std::int64_t id_base) {
  if (data.kind == "synthetic_blobs") {
    DatasetHandle ds = make_synthetic_blobs(
        data.n_classes, data.dim, data.separation, data.n_per_class,
        data.seed.value_or(default_seed));
    if (id_base != 0) {
      for (auto& item : ds.train) item.id += id_base;
      for (auto& item : ds.test) item.id += id_base;
    }
    return ds;
  }
  auto resolve = [](const std::string& path) -> std::string {
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    if (const char* root = std::getenv("HSCL_DATA_DIR")) {
      return (std::filesystem::path(root) / p).string();
    }
    return path;
  };
  return load_record_dataset(resolve(data.train_path), resolve(data.test_path),
                             data.name, id_base);
}

}  // namespace hscl
