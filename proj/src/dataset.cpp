#include "hscl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "hscl/rng.hpp"

namespace hscl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<int> DatasetHandle::class_labels() const {
  std::set<int> seen;
  for (const auto& item : train) seen.insert(item.class_label);
  return {seen.begin(), seen.end()};
}

namespace {

// Pairwise-separated cluster means. With dim >= n_classes the means are
// random orthonormal directions scaled by separation/sqrt(2), which puts
// every pair at exactly `separation`; otherwise rejection sampling in a box.
MatrixXd blob_means(int n_classes, int dim, double separation, Rng& rng) {
  if (dim >= n_classes) {
    MatrixXd basis(dim, n_classes);
    for (int c = 0; c < n_classes; ++c) {
      VectorXd v = rng.normal_vector(dim);
      for (int prev = 0; prev < c; ++prev) {
        v -= basis.col(prev).dot(v) * basis.col(prev);
      }
      const double n = v.norm();
      if (n < 1e-8) {
        --c;  // retry this column
        continue;
      }
      basis.col(c) = v / n;
    }
    return basis * (separation / std::sqrt(2.0));
  }
  const double box = separation * std::pow(static_cast<double>(n_classes),
                                           1.0 / dim);
  for (double scale = 1.0;; scale *= 1.5) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      MatrixXd means(dim, n_classes);
      for (int c = 0; c < n_classes; ++c) {
        for (int d = 0; d < dim; ++d) {
          means(d, c) = rng.uniform(-box * scale, box * scale);
        }
      }
      bool ok = true;
      for (int a = 0; a < n_classes && ok; ++a) {
        for (int b = a + 1; b < n_classes && ok; ++b) {
          ok = (means.col(a) - means.col(b)).norm() >= separation;
        }
      }
      if (ok) return means;
    }
  }
}

void append_blob_points(std::vector<DatasetItem>& out, const MatrixXd& means,
                        int n_per_class, std::int64_t& next_id, Rng& rng) {
  for (int c = 0; c < means.cols(); ++c) {
    for (int i = 0; i < n_per_class; ++i) {
      DatasetItem item;
      item.id = next_id++;
      item.class_label = c;
      item.datum = means.col(c) + rng.normal_vector(static_cast<int>(means.rows()));
      out.push_back(std::move(item));
    }
  }
}

constexpr char kRecordMagic[8] = {'H', 'S', 'C', 'R', 'E', 'C', '1', '\0'};

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::vector<DatasetItem> read_record_file(const std::string& path,
                                          DatumShape& shape,
                                          std::int64_t& next_id) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open record file: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kRecordMagic, 8) != 0) {
    throw IoError("not a record file (bad magic): " + path);
  }
  const std::uint32_t count = read_u32(f);
  shape.channels = static_cast<int>(read_u32(f));
  shape.rows = static_cast<int>(read_u32(f));
  shape.cols = static_cast<int>(read_u32(f));
  const std::uint32_t dtype = read_u32(f);
  if (dtype > 2) throw IoError("record file has unknown dtype: " + path);

  std::vector<std::int32_t> labels(count);
  f.read(reinterpret_cast<char*>(labels.data()),
         static_cast<std::streamsize>(count * sizeof(std::int32_t)));

  const std::size_t n = shape.size();
  std::vector<DatasetItem> items;
  items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DatasetItem item;
    item.id = next_id++;
    item.class_label = labels[i];
    item.datum.resize(static_cast<Eigen::Index>(n));
    if (dtype == 0) {
      std::vector<float> buf(n);
      f.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(n * sizeof(float)));
      for (std::size_t j = 0; j < n; ++j) item.datum[static_cast<Eigen::Index>(j)] = buf[j];
    } else if (dtype == 1) {
      f.read(reinterpret_cast<char*>(item.datum.data()),
             static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      std::vector<std::uint8_t> buf(n);
      f.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(n));
      for (std::size_t j = 0; j < n; ++j) {
        item.datum[static_cast<Eigen::Index>(j)] = buf[j] / 255.0;
      }
    }
    items.push_back(std::move(item));
  }
  if (!f) throw IoError("truncated record file: " + path);
  return items;
}

}  // namespace

DatasetHandle make_synthetic_blobs(int n_classes, int dim, double separation,
                                   int n_per_class, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("make_synthetic_blobs: n_classes must be >= 2");
  if (dim < 1) throw ConfigError("make_synthetic_blobs: dim must be >= 1");
  if (!(separation > 0.0)) {
    throw ConfigError("make_synthetic_blobs: separation must be > 0");
  }
  if (n_per_class < 1) {
    throw ConfigError("make_synthetic_blobs: n_per_class must be >= 1");
  }

  Rng root(seed);
  Rng means_rng = root.fork(1);
  Rng train_rng = root.fork(2);
  Rng test_rng = root.fork(3);

  DatasetHandle ds;
  ds.name = "synthetic_blobs";
  ds.shape = DatumShape{1, 1, dim};
  ds.synthetic_means = blob_means(n_classes, dim, separation, means_rng);

  std::int64_t next_id = 0;
  append_blob_points(ds.train, ds.synthetic_means, n_per_class, next_id,
                     train_rng);
  const int n_test = (n_per_class + 3) / 4;
  append_blob_points(ds.test, ds.synthetic_means, n_test, next_id, test_rng);
  return ds;
}

void write_record_file(const std::string& path, const DatumShape& shape,
                       const std::vector<DatasetItem>& items, int dtype) {
  if (dtype != 0 && dtype != 1 && dtype != 2) {
    throw ConfigError("write_record_file: dtype must be 0, 1, or 2");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write record file: " + path);
  f.write(kRecordMagic, 8);
  write_u32(f, static_cast<std::uint32_t>(items.size()));
  write_u32(f, static_cast<std::uint32_t>(shape.channels));
  write_u32(f, static_cast<std::uint32_t>(shape.rows));
  write_u32(f, static_cast<std::uint32_t>(shape.cols));
  write_u32(f, static_cast<std::uint32_t>(dtype));
  for (const auto& item : items) {
    const std::int32_t label = item.class_label;
    f.write(reinterpret_cast<const char*>(&label), sizeof(label));
  }
  for (const auto& item : items) {
    if (item.datum.size() != shape.size()) {
      throw ConfigError("write_record_file: item shape mismatch");
    }
    if (dtype == 0) {
      for (Eigen::Index j = 0; j < item.datum.size(); ++j) {
        const float v = static_cast<float>(item.datum[j]);
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    } else if (dtype == 1) {
      f.write(reinterpret_cast<const char*>(item.datum.data()),
              static_cast<std::streamsize>(item.datum.size() * sizeof(double)));
    } else {
      for (Eigen::Index j = 0; j < item.datum.size(); ++j) {
        const double clamped = std::clamp(item.datum[j], 0.0, 1.0);
        const auto v = static_cast<std::uint8_t>(std::lround(clamped * 255.0));
        f.write(reinterpret_cast<const char*>(&v), 1);
      }
    }
  }
  if (!f) throw IoError("failed writing record file: " + path);
}

DatasetHandle load_record_dataset(const std::string& train_path,
                                  const std::string& test_path,
                                  const std::string& name,
                                  std::int64_t id_base) {
  DatasetHandle ds;
  ds.name = name;
  std::int64_t next_id = id_base;
  DatumShape train_shape, test_shape;
  ds.train = read_record_file(train_path, train_shape, next_id);
  ds.test = read_record_file(test_path, test_shape, next_id);
  if (!(train_shape == test_shape)) {
    throw IoError("train/test record files disagree on datum shape");
  }
  ds.shape = train_shape;
  return ds;
}

}  // namespace hscl
