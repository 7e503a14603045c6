#include "hscl/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "hscl/rng.hpp"

namespace hscl {

namespace {

using nlohmann::json;

long round_count(double x) { return std::lround(x); }

LabeledSample to_sample(const DatasetItem& item, const DatumShape& shape,
                        LabelStatus status) {
  return LabeledSample(item.id, item.datum, shape, status, item.class_label);
}

}  // namespace

std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::S1Semi:
      return "semi_supervised";
    case ScenarioKind::S2Contaminated:
      return "contaminated";
    case ScenarioKind::S3CrossDataset:
      return "cross_dataset";
  }
  return "unknown";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "semi_supervised" || s == "s1") return ScenarioKind::S1Semi;
  if (s == "contaminated" || s == "s2") return ScenarioKind::S2Contaminated;
  if (s == "cross_dataset" || s == "s3") return ScenarioKind::S3CrossDataset;
  throw ConfigError("unknown scenario kind: " + s);
}

void ScenarioSpec::validate() const {
  if (gamma_l < 0.0 || gamma_l > 0.5) {
    throw ConfigError("gamma_l must lie in [0, 0.5]");
  }
  if (gamma_p < 0.0 || gamma_p > 0.5) {
    throw ConfigError("gamma_p must lie in [0, 0.5]");
  }
  if (scenario != ScenarioKind::S2Contaminated && gamma_p != 0.0) {
    throw ConfigError("gamma_p is only meaningful for the contaminated scenario");
  }
  if (test_mode != "default" && test_mode != "all" && test_mode != "pairwise") {
    throw ConfigError("test_mode must be one of default/all/pairwise");
  }
  if (scenario == ScenarioKind::S3CrossDataset && test_mode == "pairwise") {
    throw ConfigError("pairwise test mode is undefined for cross_dataset");
  }
}

bool ScenarioSpec::pairwise_test() const {
  if (test_mode == "pairwise") return true;
  if (test_mode == "all") return false;
  return scenario == ScenarioKind::S1Semi;
}

ScenarioSplit build_scenario(const ScenarioSpec& spec,
                             const DatasetHandle& source,
                             const DatasetHandle* anomaly_source) {
  spec.validate();
  Rng root(spec.seed);

  ScenarioSplit split;
  split.spec = spec;
  split.shape = source.shape;

  if (spec.scenario == ScenarioKind::S3CrossDataset) {
    if (anomaly_source == nullptr) {
      throw ConfigError("cross_dataset scenario requires an anomaly dataset");
    }
    if (!(anomaly_source->shape == source.shape)) {
      throw ConfigError("anomaly dataset shape differs from source shape");
    }
    std::vector<const DatasetItem*> pool;
    pool.reserve(source.train.size());
    for (const auto& item : source.train) pool.push_back(&item);
    Rng shuffle_rng = root.fork(1);
    shuffle_rng.shuffle(pool);
    const long n_labeled = round_count(spec.gamma_l * static_cast<double>(pool.size()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const LabelStatus status = static_cast<long>(i) < n_labeled
                                     ? LabelStatus::NormalLabeled
                                     : LabelStatus::Unlabeled;
      auto& dst = static_cast<long>(i) < n_labeled ? split.labeled_normal
                                                   : split.unlabeled;
      dst.push_back(to_sample(*pool[i], source.shape, status));
    }
    for (const auto& item : anomaly_source->train) {
      split.labeled_abnormal.push_back(
          to_sample(item, source.shape, LabelStatus::AbnormalLabeled));
    }
    for (const auto& item : source.test) {
      split.test.push_back(to_sample(item, source.shape, LabelStatus::Unlabeled));
      split.test_is_abnormal.push_back(false);
    }
    for (const auto& item : anomaly_source->test) {
      split.test.push_back(to_sample(item, source.shape, LabelStatus::Unlabeled));
      split.test_is_abnormal.push_back(true);
    }
    return split;
  }

  // S1 / S2: one in-distribution class, the rest are anomalies.
  std::vector<const DatasetItem*> normal_pool;
  std::map<int, std::vector<const DatasetItem*>> anomaly_pools;
  for (const auto& item : source.train) {
    if (item.class_label == spec.normal_class) {
      normal_pool.push_back(&item);
    } else {
      anomaly_pools[item.class_label].push_back(&item);
    }
  }
  if (normal_pool.empty()) {
    throw ConfigError("normal class " + std::to_string(spec.normal_class) +
                      " has no training samples");
  }

  Rng normal_rng = root.fork(1);
  normal_rng.shuffle(normal_pool);
  const long n_labeled_normal =
      round_count(spec.gamma_l * static_cast<double>(normal_pool.size()));
  for (long i = 0; i < n_labeled_normal; ++i) {
    split.labeled_normal.push_back(
        to_sample(*normal_pool[static_cast<std::size_t>(i)], source.shape,
                  LabelStatus::NormalLabeled));
  }
  std::vector<const DatasetItem*> remaining_normal(
      normal_pool.begin() + n_labeled_normal, normal_pool.end());

  // gamma_l of every anomalous class pool, so X_a stays class-balanced.
  std::map<int, std::vector<const DatasetItem*>> reservoir;
  for (auto& [label, pool] : anomaly_pools) {
    Rng class_rng = root.fork(2, static_cast<std::uint64_t>(label));
    class_rng.shuffle(pool);
    const long take = round_count(spec.gamma_l * static_cast<double>(pool.size()));
    for (long i = 0; i < take; ++i) {
      split.labeled_abnormal.push_back(
          to_sample(*pool[static_cast<std::size_t>(i)], source.shape,
                    LabelStatus::AbnormalLabeled));
    }
    reservoir[label] = {pool.begin() + take, pool.end()};
  }

  for (const auto* item : remaining_normal) {
    split.unlabeled.push_back(
        to_sample(*item, source.shape, LabelStatus::Unlabeled));
  }

  if (spec.scenario == ScenarioKind::S2Contaminated && spec.gamma_p > 0.0) {
    const double u = static_cast<double>(remaining_normal.size());
    const long total = round_count(spec.gamma_p * u / (1.0 - spec.gamma_p));
    const long n_classes = static_cast<long>(reservoir.size());
    if (n_classes == 0 && total > 0) {
      throw ConfigError("gamma_p > 0 but the dataset has no anomalous classes");
    }
    long assigned = 0;
    long index = 0;
    for (auto& [label, pool] : reservoir) {
      long quota = total / n_classes;
      if (index < total % n_classes) quota += 1;
      ++index;
      if (quota > static_cast<long>(pool.size())) {
        throw ConfigError(
            "gamma_p infeasible: class " + std::to_string(label) + " needs " +
            std::to_string(quota) + " unlabeled anomalies but only " +
            std::to_string(pool.size()) + " remain after labeling");
      }
      for (long i = 0; i < quota; ++i) {
        split.unlabeled.push_back(to_sample(*pool[static_cast<std::size_t>(i)],
                                            source.shape,
                                            LabelStatus::Unlabeled));
      }
      assigned += quota;
    }
    // Pollution fidelity: |injected - gamma_p * |X_u|| <= 1 sample.
    const double target = spec.gamma_p * static_cast<double>(split.unlabeled.size());
    if (std::abs(static_cast<double>(assigned) - target) > 1.0 + 1e-9) {
      throw NumericalError("pollution ratio drifted beyond one sample");
    }
  }

  const bool pairwise = spec.pairwise_test();
  if (pairwise) {
    if (!spec.test_anomaly_class.has_value()) {
      throw ConfigError(
          "pairwise test mode requires test_anomaly_class to be set");
    }
    if (*spec.test_anomaly_class == spec.normal_class) {
      throw ConfigError("test_anomaly_class must differ from normal_class");
    }
  }
  for (const auto& item : source.test) {
    const bool abnormal = item.class_label != spec.normal_class;
    if (abnormal && pairwise &&
        item.class_label != *spec.test_anomaly_class) {
      continue;
    }
    split.test.push_back(to_sample(item, source.shape, LabelStatus::Unlabeled));
    split.test_is_abnormal.push_back(abnormal);
  }
  return split;
}

std::string split_manifest_json(const ScenarioSplit& split) {
  json ids;
  auto collect = [](const std::vector<LabeledSample>& v) {
    std::vector<std::int64_t> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.id());
    return out;
  };
  ids["normal"] = collect(split.labeled_normal);
  ids["abnormal"] = collect(split.labeled_abnormal);
  ids["unlabeled"] = collect(split.unlabeled);
  ids["test"] = collect(split.test);

  json doc;
  doc["format"] = "hscl-split-1";
  doc["spec"]["scenario"] = to_string(split.spec.scenario);
  doc["spec"]["normal_class"] = split.spec.normal_class;
  doc["spec"]["gamma_l"] = split.spec.gamma_l;
  doc["spec"]["gamma_p"] = split.spec.gamma_p;
  doc["spec"]["seed"] = split.spec.seed;
  doc["spec"]["test_mode"] = split.spec.test_mode;
  if (split.spec.test_anomaly_class.has_value()) {
    doc["spec"]["test_anomaly_class"] = *split.spec.test_anomaly_class;
  } else {
    doc["spec"]["test_anomaly_class"] = nullptr;
  }
  doc["ids"] = ids;
  doc["test_is_abnormal"] = split.test_is_abnormal;
  return doc.dump(2) + "\n";
}

ScenarioSplit split_from_manifest_json(const std::string& json_text,
                                       const DatasetHandle& source,
                                       const DatasetHandle* anomaly_source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid split manifest: ") + e.what());
  }
  if (!doc.contains("format") || doc["format"] != "hscl-split-1") {
    throw IoError("unrecognized split manifest format");
  }

  ScenarioSplit split;
  const json& spec = doc.at("spec");
  split.spec.scenario =
      scenario_kind_from_string(spec.at("scenario").get<std::string>());
  split.spec.normal_class = spec.at("normal_class").get<int>();
  split.spec.gamma_l = spec.at("gamma_l").get<double>();
  split.spec.gamma_p = spec.at("gamma_p").get<double>();
  split.spec.seed = spec.at("seed").get<std::uint64_t>();
  split.spec.test_mode = spec.at("test_mode").get<std::string>();
  if (!spec.at("test_anomaly_class").is_null()) {
    split.spec.test_anomaly_class = spec.at("test_anomaly_class").get<int>();
  }
  split.shape = source.shape;

  std::unordered_map<std::int64_t, const DatasetItem*> by_id;
  auto index = [&by_id](const std::vector<DatasetItem>& items) {
    for (const auto& item : items) by_id[item.id] = &item;
  };
  index(source.train);
  index(source.test);
  if (anomaly_source != nullptr) {
    index(anomaly_source->train);
    index(anomaly_source->test);
  }

  auto materialize = [&](const char* key, LabelStatus status,
                         std::vector<LabeledSample>& dst) {
    for (const auto& id_json : doc.at("ids").at(key)) {
      const std::int64_t id = id_json.get<std::int64_t>();
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw IoError("split manifest references unknown sample id " +
                      std::to_string(id));
      }
      dst.push_back(to_sample(*it->second, source.shape, status));
    }
  };
  materialize("normal", LabelStatus::NormalLabeled, split.labeled_normal);
  materialize("abnormal", LabelStatus::AbnormalLabeled,
              split.labeled_abnormal);
  materialize("unlabeled", LabelStatus::Unlabeled, split.unlabeled);
  materialize("test", LabelStatus::Unlabeled, split.test);
  split.test_is_abnormal =
      doc.at("test_is_abnormal").get<std::vector<bool>>();
  if (split.test_is_abnormal.size() != split.test.size()) {
    throw IoError("split manifest: test flag count mismatch");
  }
  return split;
}

}  // namespace hscl
