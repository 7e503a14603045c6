#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "hscl/augmentation.hpp"
#include "hscl/dataset.hpp"
#include "hscl/model.hpp"
#include "hscl/scenarios.hpp"
#include "hscl/types.hpp"

namespace hscl {

struct DataConfig {
  std::string kind = "synthetic_blobs";  // or "records"
  // synthetic_blobs
  int n_classes = 10;
  int dim = 32;
  double separation = 6.0;
  int n_per_class = 1000;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  // records
  std::string train_path;
  std::string test_path;
  std::string name = "records";
};

// Whole-run configuration; one seed funnels every random choice.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  std::optional<DataConfig> anomaly_data;  // cross_dataset scenarios only
  ScenarioSpec scenario;
  HSCLConfig train;
  AugmentationPolicy augmentation;
  // Model section; input_shape is derived from the dataset at load time.
  EncoderKind model_kind = EncoderKind::Mlp;
  std::vector<int> mlp_hidden = {128, 128};

  void validate() const;
  nlohmann::json to_json() const;

  EncoderSpec encoder_spec(const DatumShape& input_shape) const;
};

// Strict parse: unknown keys anywhere are rejected.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

// Resolves record paths against HSCL_DATA_DIR when they are relative and the
// environment variable is set. id_base separates id spaces of two datasets.
DatasetHandle load_dataset(const DataConfig& data, std::uint64_t default_seed,
                           std::int64_t id_base = 0);

}  // namespace hscl
