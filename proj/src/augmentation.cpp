#include "hscl/augmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace hscl {

namespace {

using Eigen::VectorXd;

inline double& px(VectorXd& img, const DatumShape& s, int c, int r, int col) {
  return img[(c * s.rows + r) * s.cols + col];
}

inline double px(const VectorXd& img, const DatumShape& s, int c, int r,
                 int col) {
  return img[(c * s.rows + r) * s.cols + col];
}

VectorXd hflip(const VectorXd& img, const DatumShape& s) {
  VectorXd out(img.size());
  for (int c = 0; c < s.channels; ++c)
    for (int r = 0; r < s.rows; ++r)
      for (int col = 0; col < s.cols; ++col)
        px(out, s, c, r, col) = px(img, s, c, r, s.cols - 1 - col);
  return out;
}

// Bilinear sample of a crop region resized to out x out.
VectorXd crop_resize(const VectorXd& img, const DatumShape& s, double top,
                     double left, double crop_h, double crop_w, int out) {
  DatumShape os{s.channels, out, out};
  VectorXd result(os.size());
  for (int c = 0; c < s.channels; ++c) {
    for (int r = 0; r < out; ++r) {
      const double y =
          top + (r + 0.5) * crop_h / out - 0.5;
      for (int col = 0; col < out; ++col) {
        const double x = left + (col + 0.5) * crop_w / out - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, s.rows - 1);
        const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, s.cols - 1);
        const int y1 = std::min(y0 + 1, s.rows - 1);
        const int x1 = std::min(x0 + 1, s.cols - 1);
        const double fy = std::clamp(y - y0, 0.0, 1.0);
        const double fx = std::clamp(x - x0, 0.0, 1.0);
        const double v00 = px(img, s, c, y0, x0);
        const double v01 = px(img, s, c, y0, x1);
        const double v10 = px(img, s, c, y1, x0);
        const double v11 = px(img, s, c, y1, x1);
        px(result, os, c, r, col) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                    fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  return result;
}

VectorXd random_resized_crop(const VectorXd& img, const DatumShape& s, int out,
                             double scale_min, double scale_max, Rng& rng) {
  const double area = static_cast<double>(s.rows) * s.cols;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale_min, scale_max);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    const int w = static_cast<int>(std::round(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::round(std::sqrt(target / ratio)));
    if (w <= 0 || h <= 0 || w > s.cols || h > s.rows) continue;
    const int top = static_cast<int>(rng.uniform_int(0, s.rows - h));
    const int left = static_cast<int>(rng.uniform_int(0, s.cols - w));
    return crop_resize(img, s, top, left, h, w, out);
  }
  // Fallback: center crop of the full short side.
  const int side = std::min(s.rows, s.cols);
  return crop_resize(img, s, (s.rows - side) / 2.0, (s.cols - side) / 2.0,
                     side, side, out);
}

VectorXd to_grayscale(const VectorXd& img, const DatumShape& s) {
  if (s.channels != 3) return img;
  VectorXd out(img.size());
  for (int r = 0; r < s.rows; ++r) {
    for (int col = 0; col < s.cols; ++col) {
      const double g = 0.299 * px(img, s, 0, r, col) +
                       0.587 * px(img, s, 1, r, col) +
                       0.114 * px(img, s, 2, r, col);
      for (int c = 0; c < 3; ++c) px(out, s, c, r, col) = g;
    }
  }
  return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

VectorXd color_jitter(VectorXd img, const DatumShape& s, double strength,
                      Rng& rng) {
  // Factors follow the usual SimCLR parameterization: brightness/contrast/
  // saturation in [1 - 0.8s, 1 + 0.8s], hue shift in [-0.2s, 0.2s] turns.
  const double fb = rng.uniform(std::max(0.0, 1 - 0.8 * strength), 1 + 0.8 * strength);
  const double fc = rng.uniform(std::max(0.0, 1 - 0.8 * strength), 1 + 0.8 * strength);
  const double fs = rng.uniform(std::max(0.0, 1 - 0.8 * strength), 1 + 0.8 * strength);
  const double fh = rng.uniform(-0.2 * strength, 0.2 * strength);

  std::array<int, 4> order = {0, 1, 2, 3};
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }

  for (int op : order) {
    switch (op) {
      case 0:  // brightness
        img *= fb;
        break;
      case 1: {  // contrast: blend with the mean gray level
        const double mean = to_grayscale(img, s).mean();
        img = fc * img + VectorXd::Constant(img.size(), (1 - fc) * mean);
        break;
      }
      case 2: {  // saturation
        if (s.channels == 3) {
          const VectorXd gray = to_grayscale(img, s);
          img = fs * img + (1 - fs) * gray;
        }
        break;
      }
      case 3: {  // hue
        if (s.channels == 3) {
          for (int r = 0; r < s.rows; ++r) {
            for (int col = 0; col < s.cols; ++col) {
              double h, sat, v;
              double rr = std::clamp(px(img, s, 0, r, col), 0.0, 1.0);
              double gg = std::clamp(px(img, s, 1, r, col), 0.0, 1.0);
              double bb = std::clamp(px(img, s, 2, r, col), 0.0, 1.0);
              rgb_to_hsv(rr, gg, bb, h, sat, v);
              hsv_to_rgb(h + fh + 1.0, sat, v, rr, gg, bb);
              px(img, s, 0, r, col) = rr;
              px(img, s, 1, r, col) = gg;
              px(img, s, 2, r, col) = bb;
            }
          }
        }
        break;
      }
    }
  }
  return img.cwiseMax(0.0).cwiseMin(1.0);
}

// One SimCLR-style view. Consumes a fixed draw pattern from `rng` so the
// result is a pure function of the substream.
VectorXd augment_view(const LabeledSample& sample, const DatumShape& out_shape,
                      const AugmentationPolicy& policy, Rng& rng) {
  const DatumShape& s = sample.shape();
  if (s.is_vector()) {
    VectorXd v = sample.datum();
    if (policy.noise_std > 0) {
      v += policy.noise_std * rng.normal_vector(static_cast<int>(v.size()));
    }
    return v;
  }
  VectorXd img = random_resized_crop(sample.datum(), s, out_shape.rows,
                                     policy.crop_scale_min,
                                     policy.crop_scale_max, rng);
  if (rng.uniform() < policy.hflip_prob) img = hflip(img, out_shape);
  if (rng.uniform() < policy.color_jitter_prob) {
    img = color_jitter(std::move(img), out_shape, policy.color_jitter_strength,
                       rng);
  }
  if (rng.uniform() < policy.grayscale_prob) img = to_grayscale(img, out_shape);
  return img;
}

}  // namespace

void AugmentationPolicy::validate() const {
  for (int r : rotations) {
    if (r != 90 && r != 180 && r != 270) {
      throw ConfigError("rotations must be a subset of {90, 180, 270}");
    }
  }
  if (views_per_sample < 2) {
    throw ConfigError("views_per_sample must be >= 2");
  }
  if (!(crop_scale_min > 0.0) || crop_scale_min > crop_scale_max ||
      crop_scale_max > 1.0) {
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (hflip_prob < 0 || hflip_prob > 1 || grayscale_prob < 0 ||
      grayscale_prob > 1 || color_jitter_prob < 0 || color_jitter_prob > 1) {
    throw ConfigError("augmentation probabilities must lie in [0,1]");
  }
  if (noise_std < 0) throw ConfigError("noise_std must be >= 0");
}

Eigen::VectorXd rotate_quarter_turns(const Eigen::VectorXd& image,
                                     const DatumShape& shape,
                                     int quarter_turns) {
  if (!shape.is_square_image()) {
    throw ConfigError("rotation requires a square image");
  }
  const int n = shape.rows;
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return image;
  Eigen::VectorXd out(image.size());
  for (int c = 0; c < shape.channels; ++c) {
    for (int r = 0; r < n; ++r) {
      for (int col = 0; col < n; ++col) {
        // Counter-clockwise by q quarter turns.
        int sr = r, sc = col;
        switch (q) {
          case 1: sr = col; sc = n - 1 - r; break;
          case 2: sr = n - 1 - r; sc = n - 1 - col; break;
          case 3: sr = n - 1 - col; sc = r; break;
        }
        px(out, shape, c, r, col) = px(image, shape, c, sr, sc);
      }
    }
  }
  return out;
}

AugmentedBatch augment_batch(const std::vector<LabeledSample>& batch,
                             const AugmentationPolicy& policy, const Rng& rng) {
  policy.validate();
  if (batch.empty()) throw ConfigError("augment_batch: empty batch");

  const DatumShape in_shape = batch.front().shape();
  for (const auto& s : batch) {
    if (!(s.shape() == in_shape)) {
      throw ConfigError("augment_batch: mixed datum shapes in one batch");
    }
  }
  if (!policy.rotations.empty() && !in_shape.is_square_image()) {
    throw ConfigError(
        "augment_batch: rotations enabled but data is not a square image");
  }

  DatumShape out_shape = in_shape;
  if (!in_shape.is_vector() && policy.output_size > 0) {
    out_shape.rows = out_shape.cols = policy.output_size;
  }

  const int views = policy.views_per_sample;
  const int shifts = 1 + static_cast<int>(policy.rotations.size());
  const int per_sample = views * shifts;
  const int m = static_cast<int>(batch.size()) * per_sample;

  AugmentedBatch out;
  out.shape = out_shape;
  out.views.resize(out_shape.size(), m);
  out.origin_id.resize(m);
  out.shift_index.resize(m);
  out.status.resize(m);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LabeledSample& sample = batch[i];
    Rng sub = rng.fork(0x5a6d70ULL, static_cast<std::uint64_t>(sample.id()));
    const int base = static_cast<int>(i) * per_sample;
    for (int v = 0; v < views; ++v) {
      const Eigen::VectorXd view =
          augment_view(sample, out_shape, policy, sub);
      out.views.col(base + v) = view;
      // Shifted copies rotate the already-augmented view.
      for (std::size_t r = 0; r < policy.rotations.size(); ++r) {
        const int turns = policy.rotations[r] / 90;
        out.views.col(base + static_cast<int>(r + 1) * views + v) =
            rotate_quarter_turns(view, out_shape, turns);
      }
    }
    for (int k = 0; k < per_sample; ++k) {
      out.origin_id[base + k] = sample.id();
      out.shift_index[base + k] = k / views;
      out.status[base + k] = sample.status();
    }
  }
  return out;
}

PositiveNegativeMasks positive_negative_masks(const AugmentedBatch& batch) {
  const int m = batch.size();
  PositiveNegativeMasks masks;
  masks.positives = MaskMatrix::Constant(m, m, false);
  masks.negatives = MaskMatrix::Constant(m, m, false);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const bool same = batch.origin_id[i] == batch.origin_id[j] &&
                        batch.shift_index[i] == batch.shift_index[j];
      masks.positives(i, j) = same;
      masks.negatives(i, j) = !same;
    }
  }
  return masks;
}

}  // namespace hscl
