#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hscl/dataset.hpp"
#include "hscl/types.hpp"

namespace hscl {

enum class ScenarioKind { S1Semi, S2Contaminated, S3CrossDataset };

std::string to_string(ScenarioKind k);
ScenarioKind scenario_kind_from_string(const std::string& s);

// Declarative description of one experimental split.
//  S1: labeled normal/abnormal fractions gamma_l, clean unlabeled pool.
//  S2: additionally pollutes the unlabeled pool at ratio gamma_p.
//  S3: the whole source dataset is normal (gamma_l labeled), an external
//      dataset supplies the labeled anomalies.
struct ScenarioSpec {
  ScenarioKind scenario = ScenarioKind::S2Contaminated;
  int normal_class = 0;
  double gamma_l = 0.05;
  double gamma_p = 0.0;
  std::uint64_t seed = 0;
  // Test-set composition: "all" evaluates against every anomalous class,
  // "pairwise" against test_anomaly_class only. "default" resolves to
  // pairwise for S1 and all otherwise.
  std::string test_mode = "default";
  std::optional<int> test_anomaly_class;

  void validate() const;
  bool pairwise_test() const;
};

struct ScenarioSplit {
  ScenarioSpec spec;
  DatumShape shape;
  std::vector<LabeledSample> labeled_normal;    // X_n
  std::vector<LabeledSample> labeled_abnormal;  // X_a
  std::vector<LabeledSample> unlabeled;         // X_u
  std::vector<LabeledSample> test;
  std::vector<bool> test_is_abnormal;
};

// Deterministic split construction; identical spec+seed give identical
// splits. anomaly_source is required for S3 and ignored otherwise.
ScenarioSplit build_scenario(const ScenarioSpec& spec,
                             const DatasetHandle& source,
                             const DatasetHandle* anomaly_source = nullptr);

// Split manifest round-trip: the manifest (spec + seed + ids) suffices to
// re-materialize the split from the same datasets.
std::string split_manifest_json(const ScenarioSplit& split);
ScenarioSplit split_from_manifest_json(const std::string& json_text,
                                       const DatasetHandle& source,
                                       const DatasetHandle* anomaly_source =
                                           nullptr);

}  // namespace hscl
