#include "hscl/layers.hpp"

#include <cmath>
#include <limits>

namespace hscl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out, double init_gain)
    : in_(in),
      out_(out),
      init_gain_(init_gain),
      weight_(MatrixXd::Zero(out, in)),
      grad_weight_(MatrixXd::Zero(out, in)),
      bias_(VectorXd::Zero(out)),
      grad_bias_(VectorXd::Zero(out)) {}

void Linear::init(Rng& rng) {
  const double std = std::sqrt(init_gain_ / static_cast<double>(in_));
  for (Eigen::Index i = 0; i < weight_.size(); ++i) {
    weight_.data()[i] = std * rng.normal();
  }
  bias_.setZero();
}

MatrixXd Linear::forward(const MatrixXd& x, bool train) {
  if (x.rows() != in_) throw ConfigError("Linear: input size mismatch");
  if (train) cached_input_ = x;
  return (weight_ * x).colwise() + bias_;
}

MatrixXd Linear::backward(const MatrixXd& dy) {
  grad_weight_ += dy * cached_input_.transpose();
  grad_bias_ += dy.rowwise().sum();
  return weight_.transpose() * dy;
}

std::size_t Linear::param_count() const {
  return static_cast<std::size_t>(weight_.size() + bias_.size());
}

void Linear::export_params(double* dst) const {
  std::copy(weight_.data(), weight_.data() + weight_.size(), dst);
  std::copy(bias_.data(), bias_.data() + bias_.size(), dst + weight_.size());
}

void Linear::import_params(const double* src) {
  std::copy(src, src + weight_.size(), weight_.data());
  std::copy(src + weight_.size(), src + weight_.size() + bias_.size(),
            bias_.data());
}

void Linear::export_grads(double* dst) const {
  std::copy(grad_weight_.data(), grad_weight_.data() + grad_weight_.size(),
            dst);
  std::copy(grad_bias_.data(), grad_bias_.data() + grad_bias_.size(),
            dst + grad_weight_.size());
}

void Linear::zero_grads() {
  grad_weight_.setZero();
  grad_bias_.setZero();
}

// ------------------------------------------------------------------ ReLU

MatrixXd Relu::forward(const MatrixXd& x, bool train) {
  MatrixXd y = x.cwiseMax(0.0);
  if (train) cached_output_ = y;
  return y;
}

MatrixXd Relu::backward(const MatrixXd& dy) {
  return dy.cwiseProduct(
      (cached_output_.array() > 0.0).cast<double>().matrix());
}

// ---------------------------------------------------------------- Conv2d

namespace {
int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}
}  // namespace

Conv2d::Conv2d(DatumShape in_shape, int out_channels, int kernel, int stride,
               int padding)
    : in_shape_(in_shape),
      out_shape_{out_channels,
                 conv_out_extent(in_shape.rows, kernel, stride, padding),
                 conv_out_extent(in_shape.cols, kernel, stride, padding)},
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_(MatrixXd::Zero(out_channels,
                             in_shape.channels * kernel * kernel)),
      grad_weight_(MatrixXd::Zero(out_channels,
                                  in_shape.channels * kernel * kernel)) {}

void Conv2d::init(Rng& rng) {
  const double fan_in =
      static_cast<double>(in_shape_.channels) * kernel_ * kernel_;
  const double std = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < weight_.size(); ++i) {
    weight_.data()[i] = std * rng.normal();
  }
}

MatrixXd Conv2d::im2col(const VectorXd& sample) const {
  const int oh = out_shape_.rows, ow = out_shape_.cols;
  MatrixXd cols = MatrixXd::Zero(
      static_cast<Eigen::Index>(in_shape_.channels) * kernel_ * kernel_,
      static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < in_shape_.channels; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const int row = (c * kernel_ + ki) * kernel_ + kj;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - padding_ + ki;
          if (iy < 0 || iy >= in_shape_.rows) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - padding_ + kj;
            if (ix < 0 || ix >= in_shape_.cols) continue;
            cols(row, oy * ow + ox) =
                sample[(c * in_shape_.rows + iy) * in_shape_.cols + ix];
          }
        }
      }
    }
  }
  return cols;
}

MatrixXd Conv2d::forward(const MatrixXd& x, bool train) {
  if (x.rows() != in_shape_.size()) {
    throw ConfigError("Conv2d: input size mismatch");
  }
  if (train) cached_input_ = x;
  const int n = static_cast<int>(x.cols());
  const int patch = out_shape_.rows * out_shape_.cols;
  MatrixXd y(out_shape_.size(), n);
  for (int i = 0; i < n; ++i) {
    const MatrixXd out = weight_ * im2col(x.col(i));  // [out_c x oh*ow]
    for (int o = 0; o < out_shape_.channels; ++o) {
      y.col(i).segment(static_cast<Eigen::Index>(o) * patch, patch) =
          out.row(o);
    }
  }
  return y;
}

MatrixXd Conv2d::backward(const MatrixXd& dy) {
  const int n = static_cast<int>(dy.cols());
  const int patch = out_shape_.rows * out_shape_.cols;
  const int oh = out_shape_.rows, ow = out_shape_.cols;
  MatrixXd dx = MatrixXd::Zero(in_shape_.size(), n);
  MatrixXd dy_mat(out_shape_.channels, patch);
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_shape_.channels; ++o) {
      dy_mat.row(o) =
          dy.col(i).segment(static_cast<Eigen::Index>(o) * patch, patch);
    }
    const MatrixXd cols = im2col(cached_input_.col(i));
    grad_weight_ += dy_mat * cols.transpose();
    const MatrixXd dcols = weight_.transpose() * dy_mat;
    // col2im: scatter-add the patch gradients back to input pixels.
    for (int c = 0; c < in_shape_.channels; ++c) {
      for (int ki = 0; ki < kernel_; ++ki) {
        for (int kj = 0; kj < kernel_; ++kj) {
          const int row = (c * kernel_ + ki) * kernel_ + kj;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ki;
            if (iy < 0 || iy >= in_shape_.rows) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - padding_ + kj;
              if (ix < 0 || ix >= in_shape_.cols) continue;
              dx((c * in_shape_.rows + iy) * in_shape_.cols + ix, i) +=
                  dcols(row, oy * ow + ox);
            }
          }
        }
      }
    }
  }
  return dx;
}

std::size_t Conv2d::param_count() const {
  return static_cast<std::size_t>(weight_.size());
}

void Conv2d::export_params(double* dst) const {
  std::copy(weight_.data(), weight_.data() + weight_.size(), dst);
}

void Conv2d::import_params(const double* src) {
  std::copy(src, src + weight_.size(), weight_.data());
}

void Conv2d::export_grads(double* dst) const {
  std::copy(grad_weight_.data(), grad_weight_.data() + grad_weight_.size(),
            dst);
}

void Conv2d::zero_grads() { grad_weight_.setZero(); }

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(DatumShape shape, double eps, double momentum)
    : shape_(shape),
      eps_(eps),
      momentum_(momentum),
      gamma_(VectorXd::Ones(shape.channels)),
      beta_(VectorXd::Zero(shape.channels)),
      grad_gamma_(VectorXd::Zero(shape.channels)),
      grad_beta_(VectorXd::Zero(shape.channels)),
      running_mean_(VectorXd::Zero(shape.channels)),
      running_var_(VectorXd::Ones(shape.channels)) {}

void BatchNorm2d::init(Rng& rng) {
  (void)rng;
  gamma_.setOnes();
  beta_.setZero();
  running_mean_.setZero();
  running_var_.setOnes();
}

MatrixXd BatchNorm2d::forward(const MatrixXd& x, bool train) {
  const int n = static_cast<int>(x.cols());
  const int hw = shape_.rows * shape_.cols;
  MatrixXd y(x.rows(), n);
  cached_train_ = train;
  if (train) {
    cached_mean_.resize(shape_.channels);
    cached_inv_std_.resize(shape_.channels);
    cached_xhat_.resize(x.rows(), n);
    const double count = static_cast<double>(n) * hw;
    for (int c = 0; c < shape_.channels; ++c) {
      double mean = 0.0;
      for (int i = 0; i < n; ++i) {
        mean += x.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw).sum();
      }
      mean /= count;
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        var += (x.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw).array() -
                mean)
                   .square()
                   .sum();
      }
      var /= count;  // biased, used for normalization
      const double inv_std = 1.0 / std::sqrt(var + eps_);
      cached_mean_[c] = mean;
      cached_inv_std_[c] = inv_std;
      for (int i = 0; i < n; ++i) {
        auto xs = x.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw);
        cached_xhat_.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw) =
            (xs.array() - mean) * inv_std;
        y.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw) =
            gamma_[c] *
                cached_xhat_.col(i).segment(static_cast<Eigen::Index>(c) * hw,
                                            hw).array() +
            beta_[c];
      }
      // Running stats keep the unbiased variance estimate.
      const double unbiased =
          count > 1 ? var * count / (count - 1.0) : var;
      running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * unbiased;
    }
  } else {
    for (int c = 0; c < shape_.channels; ++c) {
      const double inv_std = 1.0 / std::sqrt(running_var_[c] + eps_);
      for (int i = 0; i < n; ++i) {
        auto xs = x.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw);
        y.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw) =
            gamma_[c] * ((xs.array() - running_mean_[c]) * inv_std) + beta_[c];
      }
    }
  }
  return y;
}

MatrixXd BatchNorm2d::backward(const MatrixXd& dy) {
  const int n = static_cast<int>(dy.cols());
  const int hw = shape_.rows * shape_.cols;
  MatrixXd dx(dy.rows(), n);
  if (!cached_train_) {
    for (int c = 0; c < shape_.channels; ++c) {
      const double scale = gamma_[c] / std::sqrt(running_var_[c] + eps_);
      for (int i = 0; i < n; ++i) {
        dx.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw) =
            scale * dy.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw);
      }
    }
    return dx;
  }
  const double count = static_cast<double>(n) * hw;
  for (int c = 0; c < shape_.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      auto dys = dy.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw);
      auto xh = cached_xhat_.col(i).segment(static_cast<Eigen::Index>(c) * hw,
                                            hw);
      sum_dy += dys.sum();
      sum_dy_xhat += dys.dot(xh);
    }
    grad_gamma_[c] += sum_dy_xhat;
    grad_beta_[c] += sum_dy;
    const double scale = gamma_[c] * cached_inv_std_[c];
    for (int i = 0; i < n; ++i) {
      auto dys = dy.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw);
      auto xh = cached_xhat_.col(i).segment(static_cast<Eigen::Index>(c) * hw,
                                            hw);
      dx.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw) =
          scale * (dys.array() - sum_dy / count -
                   xh.array() * (sum_dy_xhat / count));
    }
  }
  return dx;
}

std::size_t BatchNorm2d::param_count() const {
  return static_cast<std::size_t>(2 * shape_.channels);
}

void BatchNorm2d::export_params(double* dst) const {
  std::copy(gamma_.data(), gamma_.data() + gamma_.size(), dst);
  std::copy(beta_.data(), beta_.data() + beta_.size(), dst + gamma_.size());
}

void BatchNorm2d::import_params(const double* src) {
  std::copy(src, src + gamma_.size(), gamma_.data());
  std::copy(src + gamma_.size(), src + 2 * gamma_.size(), beta_.data());
}

void BatchNorm2d::export_grads(double* dst) const {
  std::copy(grad_gamma_.data(), grad_gamma_.data() + grad_gamma_.size(), dst);
  std::copy(grad_beta_.data(), grad_beta_.data() + grad_beta_.size(),
            dst + grad_gamma_.size());
}

void BatchNorm2d::zero_grads() {
  grad_gamma_.setZero();
  grad_beta_.setZero();
}

std::size_t BatchNorm2d::buffer_count() const {
  return static_cast<std::size_t>(2 * shape_.channels);
}

void BatchNorm2d::export_buffers(double* dst) const {
  std::copy(running_mean_.data(), running_mean_.data() + running_mean_.size(),
            dst);
  std::copy(running_var_.data(), running_var_.data() + running_var_.size(),
            dst + running_mean_.size());
}

void BatchNorm2d::import_buffers(const double* src) {
  std::copy(src, src + running_mean_.size(), running_mean_.data());
  std::copy(src + running_mean_.size(), src + 2 * running_mean_.size(),
            running_var_.data());
}

// ------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(DatumShape in_shape, int kernel, int stride, int padding)
    : in_shape_(in_shape),
      out_shape_{in_shape.channels,
                 conv_out_extent(in_shape.rows, kernel, stride, padding),
                 conv_out_extent(in_shape.cols, kernel, stride, padding)},
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {}

MatrixXd MaxPool2d::forward(const MatrixXd& x, bool train) {
  const int n = static_cast<int>(x.cols());
  MatrixXd y(out_shape_.size(), n);
  cached_argmax_.resize(out_shape_.size(), n);
  const int oh = out_shape_.rows, ow = out_shape_.cols;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < in_shape_.channels; ++c) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int best_idx = -1;
          for (int ki = 0; ki < kernel_; ++ki) {
            const int iy = oy * stride_ - padding_ + ki;
            if (iy < 0 || iy >= in_shape_.rows) continue;
            for (int kj = 0; kj < kernel_; ++kj) {
              const int ix = ox * stride_ - padding_ + kj;
              if (ix < 0 || ix >= in_shape_.cols) continue;
              const int idx = (c * in_shape_.rows + iy) * in_shape_.cols + ix;
              if (x(idx, i) > best) {
                best = x(idx, i);
                best_idx = idx;
              }
            }
          }
          const int out_idx = (c * oh + oy) * ow + ox;
          y(out_idx, i) = best;
          cached_argmax_(out_idx, i) = best_idx;
        }
      }
    }
  }
  (void)train;
  return y;
}

MatrixXd MaxPool2d::backward(const MatrixXd& dy) {
  MatrixXd dx = MatrixXd::Zero(in_shape_.size(), dy.cols());
  for (int i = 0; i < dy.cols(); ++i) {
    for (int o = 0; o < dy.rows(); ++o) {
      dx(cached_argmax_(o, i), i) += dy(o, i);
    }
  }
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

MatrixXd GlobalAvgPool::forward(const MatrixXd& x, bool train) {
  (void)train;
  const int n = static_cast<int>(x.cols());
  const int hw = in_shape_.rows * in_shape_.cols;
  MatrixXd y(in_shape_.channels, n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < in_shape_.channels; ++c) {
      y(c, i) =
          x.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw).mean();
    }
  }
  return y;
}

MatrixXd GlobalAvgPool::backward(const MatrixXd& dy) {
  const int n = static_cast<int>(dy.cols());
  const int hw = in_shape_.rows * in_shape_.cols;
  MatrixXd dx(in_shape_.size(), n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < in_shape_.channels; ++c) {
      dx.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw)
          .setConstant(dy(c, i) / hw);
    }
  }
  return dx;
}

// ------------------------------------------------------------ BasicBlock

BasicBlock::BasicBlock(DatumShape in_shape, int out_channels, int stride) {
  conv1_ = std::make_unique<Conv2d>(in_shape, out_channels, 3, stride, 1);
  bn1_ = std::make_unique<BatchNorm2d>(conv1_->out_shape());
  conv2_ = std::make_unique<Conv2d>(conv1_->out_shape(), out_channels, 3, 1, 1);
  bn2_ = std::make_unique<BatchNorm2d>(conv2_->out_shape());
  out_shape_ = conv2_->out_shape();
  if (stride != 1 || in_shape.channels != out_channels) {
    conv_down_ = std::make_unique<Conv2d>(in_shape, out_channels, 1, stride, 0);
    bn_down_ = std::make_unique<BatchNorm2d>(conv_down_->out_shape());
  }
}

MatrixXd BasicBlock::forward(const MatrixXd& x, bool train) {
  MatrixXd h = relu1_.forward(bn1_->forward(conv1_->forward(x, train), train),
                              train);
  h = bn2_->forward(conv2_->forward(h, train), train);
  if (conv_down_) {
    h += bn_down_->forward(conv_down_->forward(x, train), train);
  } else {
    h += x;
  }
  if (train) cached_sum_ = h;
  return h.cwiseMax(0.0);
}

MatrixXd BasicBlock::backward(const MatrixXd& dy) {
  const MatrixXd dsum =
      dy.cwiseProduct((cached_sum_.array() > 0.0).cast<double>().matrix());
  MatrixXd dx =
      conv1_->backward(bn1_->backward(relu1_.backward(conv2_->backward(
          bn2_->backward(dsum)))));
  if (conv_down_) {
    dx += conv_down_->backward(bn_down_->backward(dsum));
  } else {
    dx += dsum;
  }
  return dx;
}

std::size_t BasicBlock::param_count() const {
  std::size_t n = conv1_->param_count() + bn1_->param_count() +
                  conv2_->param_count() + bn2_->param_count();
  if (conv_down_) n += conv_down_->param_count() + bn_down_->param_count();
  return n;
}

void BasicBlock::export_params(double* dst) const {
  conv1_->export_params(dst);
  dst += conv1_->param_count();
  bn1_->export_params(dst);
  dst += bn1_->param_count();
  conv2_->export_params(dst);
  dst += conv2_->param_count();
  bn2_->export_params(dst);
  dst += bn2_->param_count();
  if (conv_down_) {
    conv_down_->export_params(dst);
    dst += conv_down_->param_count();
    bn_down_->export_params(dst);
  }
}

void BasicBlock::import_params(const double* src) {
  conv1_->import_params(src);
  src += conv1_->param_count();
  bn1_->import_params(src);
  src += bn1_->param_count();
  conv2_->import_params(src);
  src += conv2_->param_count();
  bn2_->import_params(src);
  src += bn2_->param_count();
  if (conv_down_) {
    conv_down_->import_params(src);
    src += conv_down_->param_count();
    bn_down_->import_params(src);
  }
}

void BasicBlock::export_grads(double* dst) const {
  conv1_->export_grads(dst);
  dst += conv1_->param_count();
  bn1_->export_grads(dst);
  dst += bn1_->param_count();
  conv2_->export_grads(dst);
  dst += conv2_->param_count();
  bn2_->export_grads(dst);
  dst += bn2_->param_count();
  if (conv_down_) {
    conv_down_->export_grads(dst);
    dst += conv_down_->param_count();
    bn_down_->export_grads(dst);
  }
}

void BasicBlock::zero_grads() {
  conv1_->zero_grads();
  bn1_->zero_grads();
  conv2_->zero_grads();
  bn2_->zero_grads();
  if (conv_down_) {
    conv_down_->zero_grads();
    bn_down_->zero_grads();
  }
}

void BasicBlock::init(Rng& rng) {
  conv1_->init(rng);
  bn1_->init(rng);
  conv2_->init(rng);
  bn2_->init(rng);
  if (conv_down_) {
    conv_down_->init(rng);
    bn_down_->init(rng);
  }
}

std::size_t BasicBlock::buffer_count() const {
  std::size_t n = bn1_->buffer_count() + bn2_->buffer_count();
  if (bn_down_) n += bn_down_->buffer_count();
  return n;
}

void BasicBlock::export_buffers(double* dst) const {
  bn1_->export_buffers(dst);
  dst += bn1_->buffer_count();
  bn2_->export_buffers(dst);
  dst += bn2_->buffer_count();
  if (bn_down_) bn_down_->export_buffers(dst);
}

void BasicBlock::import_buffers(const double* src) {
  bn1_->import_buffers(src);
  src += bn1_->buffer_count();
  bn2_->import_buffers(src);
  src += bn2_->buffer_count();
  if (bn_down_) bn_down_->import_buffers(src);
}

}  // namespace hscl
