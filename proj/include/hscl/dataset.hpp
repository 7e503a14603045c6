#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "hscl/types.hpp"

namespace hscl {

struct DatasetItem {
  std::int64_t id = 0;
  Eigen::VectorXd datum;
  int class_label = 0;
};

// A labeled source dataset with its train/test pools. Sample ids are unique
// across both pools; pass a distinct id_base when mixing datasets (for
// cross-dataset scenarios) so ids never collide.
struct DatasetHandle {
  std::string name;
  DatumShape shape;
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> test;
  // Configured cluster means for synthetic data, [dim x n_classes];
  // empty otherwise.
  Eigen::MatrixXd synthetic_means;

  std::vector<int> class_labels() const;
};

// Gaussian clusters with identity covariance whose means are pairwise at
// least `separation` apart. Class 0 is the normal class by convention.
// A held-out test pool of ceil(n_per_class / 4) points per class is
// generated alongside the training pool.
DatasetHandle make_synthetic_blobs(int n_classes, int dim, double separation,
                                   int n_per_class, std::uint64_t seed);

// Binary record file: little-endian header (magic "HSCREC1\0", u32 count,
// u32 channels, u32 rows, u32 cols, u32 dtype) followed by count i32 class
// labels and count*channels*rows*cols values. dtype: 0 = float32,
// 1 = float64, 2 = uint8 (scaled to [0,1] on load).
void write_record_file(const std::string& path, const DatumShape& shape,
                       const std::vector<DatasetItem>& items, int dtype = 1);

DatasetHandle load_record_dataset(const std::string& train_path,
                                  const std::string& test_path,
                                  const std::string& name,
                                  std::int64_t id_base = 0);

}  // namespace hscl
