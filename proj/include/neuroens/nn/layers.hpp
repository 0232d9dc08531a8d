#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "neuroens/nn/tensor.hpp"
#include "neuroens/rng.hpp"

namespace neuroens::nn {

struct Parameter {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool trainable = true;

  Tensor& ensure_grad();
  void zero_grad();
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

/// Layer with an explicit backward pass. forward() records what backward()
/// needs (only while grad_enabled()); backward() takes dL/d(output), accumulates
/// parameter gradients and returns dL/d(input).
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  /// Appends this module's parameters and buffers, names prefixed.
  virtual void collect(const std::string& /*prefix*/, std::vector<NamedParameter>& /*out*/) {}
  virtual void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

 protected:
  bool training_ = true;
};

using ModulePtr = std::unique_ptr<Module>;

/// Module owning named children; names form the dotted parameter paths.
class Composite : public Module {
 public:
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) override;
  void set_training(bool training) override;

 protected:
  template <class M>
  M* add_child(std::string name, std::unique_ptr<M> m) {
    M* raw = m.get();
    children_.emplace_back(std::move(name), std::move(m));
    return raw;
  }
  std::vector<std::pair<std::string, ModulePtr>> children_;
};

class Sequential : public Composite {
 public:
  template <class M>
  M* add(std::string name, std::unique_ptr<M> m) {
    return add_child(std::move(name), std::move(m));
  }
  /// Appends under the next positional index ("0", "1", ...).
  template <class M>
  M* push(std::unique_ptr<M> m) {
    return add_child(std::to_string(children_.size()), std::move(m));
  }
  std::size_t size() const { return children_.size(); }

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
};

struct Conv2dOptions {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = true;
};

class Conv2d : public Module {
 public:
  Conv2d(const Conv2dOptions& opt, Rng& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) override;

  const Conv2dOptions& options() const { return opt_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  std::size_t out_size(std::size_t in) const;
  bool depthwise() const;
  void im2col(const Tensor& x, std::size_t n, std::size_t g, std::size_t oh, std::size_t ow,
              std::vector<double>& cols) const;
  void col2im(const std::vector<double>& cols, std::size_t n, std::size_t g, std::size_t oh, std::size_t ow,
              Tensor& gx) const;

  Conv2dOptions opt_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class Linear : public Module {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& init);
  /// Flattens (N, C, H, W) to (N, C*H*W); output is (N, out, 1, 1).
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) override;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(std::size_t channels, double eps = 1e-5, double momentum = 0.1);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  std::size_t channels_;
  double eps_, momentum_;
  Parameter weight_, bias_, running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool batch_stats_ = true;
};

/// max(0, x), or min(max(0, x), cap) when cap > 0.
class ReLU : public Module {
 public:
  explicit ReLU(double cap = 0.0) : cap_(cap) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double cap_;
  Tensor input_;
};

class Identity : public Module {
 public:
  Tensor forward(const Tensor& x) override { return x; }
  Tensor backward(const Tensor& g) override { return g; }
};

class MaxPool2d : public Module {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding = 0, bool ceil_mode = false);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t out_size(std::size_t in) const;
  std::size_t kernel_, stride_, padding_;
  bool ceil_mode_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

class AvgPool2d : public Module {
 public:
  AvgPool2d(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t kernel_, stride_;
  std::vector<std::size_t> in_shape_;
};

class AdaptiveAvgPool2d : public Module {
 public:
  AdaptiveAvgPool2d(std::size_t out_h, std::size_t out_w) : oh_(out_h), ow_(out_w) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t oh_, ow_;
  std::vector<std::size_t> in_shape_;
};

}  // namespace neuroens::nn
