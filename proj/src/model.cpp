#include "hscl/model.hpp"

#include <cmath>

namespace hscl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(EncoderKind k) {
  return k == EncoderKind::ResNet18 ? "resnet18" : "mlp";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "resnet18") return EncoderKind::ResNet18;
  if (s == "mlp") return EncoderKind::Mlp;
  throw ConfigError("unknown encoder kind: " + s);
}

void EncoderSpec::validate() const {
  if (projection_dim < 1) throw ConfigError("projection_dim must be >= 1");
  if (input_shape.size() < 1) throw ConfigError("empty input shape");
  if (kind == EncoderKind::ResNet18 && input_shape.channels < 1) {
    throw ConfigError("resnet18 requires a channel dimension");
  }
  for (int h : mlp_hidden) {
    if (h < 1) throw ConfigError("mlp hidden widths must be >= 1");
  }
}

Encoder::Encoder(const EncoderSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == EncoderKind::Mlp) {
    int prev = spec_.input_shape.size();
    for (int h : spec_.mlp_hidden) {
      layers_.push_back(std::make_unique<Linear>(prev, h));
      layers_.push_back(std::make_unique<Relu>());
      prev = h;
    }
    // Final projection; init gain 1 (not followed by a ReLU).
    layers_.push_back(std::make_unique<Linear>(prev, spec_.projection_dim, 1.0));
  } else {
    // Standard 18-layer residual network: 7x7/2 stem, 3x3/2 max pool, four
    // stages of two basic blocks (64/128/256/512), global average pool,
    // then a two-layer projection head at the backbone width.
    DatumShape s = spec_.input_shape;
    auto conv1 = std::make_unique<Conv2d>(s, 64, 7, 2, 3);
    s = conv1->out_shape();
    layers_.push_back(std::move(conv1));
    layers_.push_back(std::make_unique<BatchNorm2d>(s));
    layers_.push_back(std::make_unique<Relu>());
    auto pool = std::make_unique<MaxPool2d>(s, 3, 2, 1);
    s = pool->out_shape();
    layers_.push_back(std::move(pool));
    const int stage_channels[4] = {64, 128, 256, 512};
    for (int stage = 0; stage < 4; ++stage) {
      const int stride = stage == 0 ? 1 : 2;
      auto b1 = std::make_unique<BasicBlock>(s, stage_channels[stage], stride);
      s = b1->out_shape();
      layers_.push_back(std::move(b1));
      auto b2 = std::make_unique<BasicBlock>(s, stage_channels[stage], 1);
      s = b2->out_shape();
      layers_.push_back(std::move(b2));
    }
    layers_.push_back(std::make_unique<GlobalAvgPool>(s));
    layers_.push_back(std::make_unique<Linear>(512, 512));
    layers_.push_back(std::make_unique<Relu>());
    layers_.push_back(std::make_unique<Linear>(512, spec_.projection_dim, 1.0));
  }
  for (auto& layer : layers_) layer->init(rng);
}

EmbeddingMatrix Encoder::encode(const Eigen::MatrixXd& views, bool train_mode) {
  if (views.rows() != spec_.input_shape.size()) {
    throw ConfigError("encode: view size does not match encoder input shape");
  }
  MatrixXd h = views;
  for (auto& layer : layers_) h = layer->forward(h, train_mode);

  const int m = static_cast<int>(h.cols());
  MatrixXd z(h.rows(), m);
  VectorXd norms(m);
  for (int i = 0; i < m; ++i) {
    const double n = h.col(i).norm();
    if (!std::isfinite(n) || n < 1e-12) {
      throw NumericalError(
          "degenerate embedding: pre-normalization activation has norm " +
          std::to_string(n));
    }
    norms[i] = n;
    z.col(i) = h.col(i) / n;
  }
  if (train_mode) {
    cached_raw_ = std::move(h);
    cached_z_ = z;
    cached_norm_ = norms;
  }
  return z;
}

VectorXd Encoder::backward(const Eigen::MatrixXd& grad_embeddings) {
  if (grad_embeddings.cols() != cached_z_.cols()) {
    throw ConfigError("backward: gradient batch size mismatch");
  }
  // d/dh of z = h/|h|:  dh = (dz - (dz . z) z) / |h|.
  MatrixXd dh(grad_embeddings.rows(), grad_embeddings.cols());
  for (int i = 0; i < grad_embeddings.cols(); ++i) {
    const VectorXd& z = cached_z_.col(i);
    const VectorXd& dz = grad_embeddings.col(i);
    dh.col(i) = (dz - z * z.dot(dz)) / cached_norm_[i];
  }
  for (auto& layer : layers_) layer->zero_grads();
  MatrixXd g = dh;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
  }
  VectorXd flat(param_count());
  double* dst = flat.data();
  for (const auto& layer : layers_) {
    layer->export_grads(dst);
    dst += layer->param_count();
  }
  return flat;
}

std::size_t Encoder::param_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer->param_count();
  return n;
}

VectorXd Encoder::parameters() const {
  VectorXd flat(param_count());
  double* dst = flat.data();
  for (const auto& layer : layers_) {
    layer->export_params(dst);
    dst += layer->param_count();
  }
  return flat;
}

void Encoder::set_parameters(const VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != param_count()) {
    throw ConfigError("set_parameters: size mismatch");
  }
  const double* src = flat.data();
  for (auto& layer : layers_) {
    layer->import_params(src);
    src += layer->param_count();
  }
}

std::size_t Encoder::buffer_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer->buffer_count();
  return n;
}

VectorXd Encoder::buffers() const {
  VectorXd flat(buffer_count());
  double* dst = flat.data();
  for (const auto& layer : layers_) {
    layer->export_buffers(dst);
    dst += layer->buffer_count();
  }
  return flat;
}

void Encoder::set_buffers(const VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != buffer_count()) {
    throw ConfigError("set_buffers: size mismatch");
  }
  const double* src = flat.data();
  for (auto& layer : layers_) {
    layer->import_buffers(src);
    src += layer->buffer_count();
  }
}

}  // namespace hscl
