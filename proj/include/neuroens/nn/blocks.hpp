#pragma once

#include "neuroens/nn/layers.hpp"

namespace neuroens::nn {

/// 1x1 -> 3x3(stride) -> 1x1 residual unit with optional projection shortcut.
class Bottleneck : public Composite {
 public:
  static constexpr std::size_t kExpansion = 4;
  Bottleneck(std::size_t in_channels, std::size_t width, std::size_t stride, Rng& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<Module*> main_;
  Sequential* downsample_ = nullptr;
  ReLU out_relu_;
};

/// Squeeze 1x1, then parallel 1x1 and 3x3 expansions concatenated.
class Fire : public Composite {
 public:
  Fire(std::size_t in_channels, std::size_t squeeze, std::size_t expand1x1, std::size_t expand3x3, Rng& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Conv2d *squeeze_, *expand1_, *expand3_;
  ReLU squeeze_relu_, expand1_relu_, expand3_relu_;
  std::size_t e1_, e3_;
};

/// BN-ReLU-1x1-BN-ReLU-3x3 producing `growth` new channels appended to the input.
class DenseLayer : public Sequential {
 public:
  DenseLayer(std::size_t in_channels, std::size_t growth, std::size_t bn_size, Rng& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t in_channels_, growth_;
};

/// Expand 1x1 (when t > 1) -> depthwise 3x3 -> linear 1x1, residual when shapes allow.
class InvertedResidual : public Composite {
 public:
  InvertedResidual(std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::size_t expand_ratio,
                   Rng& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Sequential* conv_;
  bool residual_;
};

/// Channel-split unit (stride 1) or two-branch downsampling unit (stride 2),
/// followed by a two-group channel shuffle.
class ShuffleUnit : public Composite {
 public:
  ShuffleUnit(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t stride_, branch_features_;
  Sequential* branch1_ = nullptr;
  Sequential* branch2_ = nullptr;
};

Tensor channel_shuffle(const Tensor& x, std::size_t groups);
Tensor channel_unshuffle(const Tensor& x, std::size_t groups);

}  // namespace neuroens::nn
