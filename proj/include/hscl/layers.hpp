#pragma once

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "hscl/rng.hpp"
#include "hscl/types.hpp"

namespace hscl {

// Dense layers over column batches: one flattened sample per column.
// forward(train=true) caches what backward needs; backward accumulates
// parameter gradients internally and returns the input gradient.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) = 0;
  virtual Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) = 0;

  virtual std::size_t param_count() const { return 0; }
  virtual void export_params(double* dst) const { (void)dst; }
  virtual void import_params(const double* src) { (void)src; }
  virtual void export_grads(double* dst) const { (void)dst; }
  virtual void zero_grads() {}
  virtual void init(Rng& rng) { (void)rng; }

  // Non-trainable state (batch-norm running statistics).
  virtual std::size_t buffer_count() const { return 0; }
  virtual void export_buffers(double* dst) const { (void)dst; }
  virtual void import_buffers(const double* src) { (void)src; }
};

class Linear : public Layer {
 public:
  Linear(int in, int out, double init_gain = 2.0);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;
  std::size_t param_count() const override;
  void export_params(double* dst) const override;
  void import_params(const double* src) override;
  void export_grads(double* dst) const override;
  void zero_grads() override;
  void init(Rng& rng) override;

  const Eigen::MatrixXd& weight() const { return weight_; }
  const Eigen::VectorXd& bias() const { return bias_; }

 private:
  int in_, out_;
  double init_gain_;
  Eigen::MatrixXd weight_, grad_weight_;
  Eigen::VectorXd bias_, grad_bias_;
  Eigen::MatrixXd cached_input_;
};

class Relu : public Layer {
 public:
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;

 private:
  Eigen::MatrixXd cached_output_;
};

class Conv2d : public Layer {
 public:
  Conv2d(DatumShape in_shape, int out_channels, int kernel, int stride,
         int padding);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;
  std::size_t param_count() const override;
  void export_params(double* dst) const override;
  void import_params(const double* src) override;
  void export_grads(double* dst) const override;
  void zero_grads() override;
  void init(Rng& rng) override;

  DatumShape out_shape() const { return out_shape_; }

 private:
  Eigen::MatrixXd im2col(const Eigen::VectorXd& sample) const;

  DatumShape in_shape_, out_shape_;
  int kernel_, stride_, padding_;
  Eigen::MatrixXd weight_, grad_weight_;  // [out_c x in_c*k*k]
  Eigen::MatrixXd cached_input_;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(DatumShape shape, double eps = 1e-5, double momentum = 0.1);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;
  std::size_t param_count() const override;
  void export_params(double* dst) const override;
  void import_params(const double* src) override;
  void export_grads(double* dst) const override;
  void zero_grads() override;
  void init(Rng& rng) override;
  std::size_t buffer_count() const override;
  void export_buffers(double* dst) const override;
  void import_buffers(const double* src) override;

 private:
  DatumShape shape_;
  double eps_, momentum_;
  Eigen::VectorXd gamma_, beta_, grad_gamma_, grad_beta_;
  Eigen::VectorXd running_mean_, running_var_;
  // Training cache.
  Eigen::MatrixXd cached_xhat_;
  Eigen::VectorXd cached_mean_, cached_inv_std_;
  bool cached_train_ = false;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(DatumShape in_shape, int kernel, int stride, int padding);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;
  DatumShape out_shape() const { return out_shape_; }

 private:
  DatumShape in_shape_, out_shape_;
  int kernel_, stride_, padding_;
  Eigen::MatrixXi cached_argmax_;
};

class GlobalAvgPool : public Layer {
 public:
  explicit GlobalAvgPool(DatumShape in_shape) : in_shape_(in_shape) {}

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;

 private:
  DatumShape in_shape_;
};

// Standard two-conv residual block with optional 1x1 downsample projection.
class BasicBlock : public Layer {
 public:
  BasicBlock(DatumShape in_shape, int out_channels, int stride);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train) override;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override;
  std::size_t param_count() const override;
  void export_params(double* dst) const override;
  void import_params(const double* src) override;
  void export_grads(double* dst) const override;
  void zero_grads() override;
  void init(Rng& rng) override;
  std::size_t buffer_count() const override;
  void export_buffers(double* dst) const override;
  void import_buffers(const double* src) override;

  DatumShape out_shape() const { return out_shape_; }

 private:
  DatumShape out_shape_;
  std::unique_ptr<Conv2d> conv1_, conv2_, conv_down_;
  std::unique_ptr<BatchNorm2d> bn1_, bn2_, bn_down_;
  Relu relu1_;
  Eigen::MatrixXd cached_sum_;  // pre-activation of the final ReLU
};

}  // namespace hscl
