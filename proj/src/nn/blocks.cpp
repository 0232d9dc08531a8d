#include "neuroens/nn/blocks.hpp"

#include "neuroens/error.hpp"

namespace neuroens::nn {

namespace {

std::unique_ptr<Conv2d> conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                             Rng& init, std::size_t groups = 1, bool bias = false) {
  return std::make_unique<Conv2d>(Conv2dOptions{in, out, k, stride, pad, groups, bias}, init);
}

}  // namespace

// ---------------------------------------------------------------------------

Bottleneck::Bottleneck(std::size_t in_channels, std::size_t width, std::size_t stride, Rng& init) {
  const std::size_t out = width * kExpansion;
  main_.push_back(add_child("conv1", conv(in_channels, width, 1, 1, 0, init)));
  main_.push_back(add_child("bn1", std::make_unique<BatchNorm2d>(width)));
  main_.push_back(add_child("relu1", std::make_unique<ReLU>()));
  main_.push_back(add_child("conv2", conv(width, width, 3, stride, 1, init)));
  main_.push_back(add_child("bn2", std::make_unique<BatchNorm2d>(width)));
  main_.push_back(add_child("relu2", std::make_unique<ReLU>()));
  main_.push_back(add_child("conv3", conv(width, out, 1, 1, 0, init)));
  main_.push_back(add_child("bn3", std::make_unique<BatchNorm2d>(out)));
  if (stride != 1 || in_channels != out) {
    auto ds = std::make_unique<Sequential>();
    ds->push(conv(in_channels, out, 1, stride, 0, init));
    ds->push(std::make_unique<BatchNorm2d>(out));
    downsample_ = add_child("downsample", std::move(ds));
  }
}

Tensor Bottleneck::forward(const Tensor& x) {
  Tensor cur = x;
  for (Module* m : main_) cur = m->forward(cur);
  if (downsample_) cur.add(downsample_->forward(x));
  else cur.add(x);
  return out_relu_.forward(cur);
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
  Tensor g = out_relu_.backward(grad_out);
  Tensor shortcut = downsample_ ? downsample_->backward(g) : g;
  for (auto it = main_.rbegin(); it != main_.rend(); ++it) g = (*it)->backward(g);
  g.add(shortcut);
  return g;
}

// ---------------------------------------------------------------------------

Fire::Fire(std::size_t in_channels, std::size_t squeeze, std::size_t expand1x1, std::size_t expand3x3, Rng& init)
    : e1_(expand1x1), e3_(expand3x3) {
  squeeze_ = add_child("squeeze", conv(in_channels, squeeze, 1, 1, 0, init, 1, true));
  expand1_ = add_child("expand1x1", conv(squeeze, expand1x1, 1, 1, 0, init, 1, true));
  expand3_ = add_child("expand3x3", conv(squeeze, expand3x3, 3, 1, 1, init, 1, true));
}

Tensor Fire::forward(const Tensor& x) {
  const Tensor s = squeeze_relu_.forward(squeeze_->forward(x));
  const Tensor a = expand1_relu_.forward(expand1_->forward(s));
  const Tensor b = expand3_relu_.forward(expand3_->forward(s));
  return concat_channels({&a, &b});
}

Tensor Fire::backward(const Tensor& grad_out) {
  auto parts = split_channels(grad_out, {e1_, e3_});
  Tensor gs = expand1_->backward(expand1_relu_.backward(parts[0]));
  gs.add(expand3_->backward(expand3_relu_.backward(parts[1])));
  return squeeze_->backward(squeeze_relu_.backward(gs));
}

// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_channels, std::size_t growth, std::size_t bn_size, Rng& init)
    : in_channels_(in_channels), growth_(growth) {
  add("norm1", std::make_unique<BatchNorm2d>(in_channels));
  add("relu1", std::make_unique<ReLU>());
  add("conv1", conv(in_channels, bn_size * growth, 1, 1, 0, init));
  add("norm2", std::make_unique<BatchNorm2d>(bn_size * growth));
  add("relu2", std::make_unique<ReLU>());
  add("conv2", conv(bn_size * growth, growth, 3, 1, 1, init));
}

Tensor DenseLayer::forward(const Tensor& x) {
  const Tensor fresh = Sequential::forward(x);
  return concat_channels({&x, &fresh});
}

Tensor DenseLayer::backward(const Tensor& grad_out) {
  auto parts = split_channels(grad_out, {in_channels_, growth_});
  Tensor g = Sequential::backward(parts[1]);
  g.add(parts[0]);
  return g;
}

// ---------------------------------------------------------------------------

InvertedResidual::InvertedResidual(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                   std::size_t expand_ratio, Rng& init)
    : residual_(stride == 1 && in_channels == out_channels) {
  const std::size_t hidden = in_channels * expand_ratio;
  auto body = std::make_unique<Sequential>();
  auto conv_bn_relu6 = [&](std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t groups) {
    auto block = std::make_unique<Sequential>();
    block->push(conv(in, out, k, s, (k - 1) / 2, init, groups));
    block->push(std::make_unique<BatchNorm2d>(out));
    block->push(std::make_unique<ReLU>(6.0));
    return block;
  };
  if (expand_ratio != 1) body->push(conv_bn_relu6(in_channels, hidden, 1, 1, 1));
  body->push(conv_bn_relu6(hidden, hidden, 3, stride, hidden));
  body->push(conv(hidden, out_channels, 1, 1, 0, init));
  body->push(std::make_unique<BatchNorm2d>(out_channels));
  conv_ = add_child("conv", std::move(body));
}

Tensor InvertedResidual::forward(const Tensor& x) {
  Tensor y = conv_->forward(x);
  if (residual_) y.add(x);
  return y;
}

Tensor InvertedResidual::backward(const Tensor& grad_out) {
  Tensor g = conv_->backward(grad_out);
  if (residual_) g.add(grad_out);
  return g;
}

// ---------------------------------------------------------------------------

Tensor channel_shuffle(const Tensor& x, std::size_t groups) {
  const std::size_t C = x.c(), per = C / groups, plane = x.h() * x.w();
  if (C % groups) throw Error("channel_shuffle: channels not divisible by groups");
  Tensor y(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < per; ++i) {
        const double* src = x.data() + (n * C + g * per + i) * plane;
        double* dst = y.data() + (n * C + i * groups + g) * plane;
        std::copy(src, src + plane, dst);
      }
  return y;
}

Tensor channel_unshuffle(const Tensor& x, std::size_t groups) {
  const std::size_t C = x.c(), per = C / groups, plane = x.h() * x.w();
  Tensor y(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < per; ++i) {
        const double* src = x.data() + (n * C + i * groups + g) * plane;
        double* dst = y.data() + (n * C + g * per + i) * plane;
        std::copy(src, src + plane, dst);
      }
  return y;
}

ShuffleUnit::ShuffleUnit(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& init)
    : stride_(stride), branch_features_(out_channels / 2) {
  if (out_channels % 2) throw Error("ShuffleUnit: output channels must be even");
  if (stride == 1 && in_channels != out_channels) throw Error("ShuffleUnit: stride-1 unit must keep channels");
  const std::size_t bf = branch_features_;
  if (stride > 1) {
    auto b1 = std::make_unique<Sequential>();
    b1->push(conv(in_channels, in_channels, 3, stride, 1, init, in_channels));
    b1->push(std::make_unique<BatchNorm2d>(in_channels));
    b1->push(conv(in_channels, bf, 1, 1, 0, init));
    b1->push(std::make_unique<BatchNorm2d>(bf));
    b1->push(std::make_unique<ReLU>());
    branch1_ = add_child("branch1", std::move(b1));
  }
  const std::size_t b2_in = stride > 1 ? in_channels : bf;
  auto b2 = std::make_unique<Sequential>();
  b2->push(conv(b2_in, bf, 1, 1, 0, init));
  b2->push(std::make_unique<BatchNorm2d>(bf));
  b2->push(std::make_unique<ReLU>());
  b2->push(conv(bf, bf, 3, stride, 1, init, bf));
  b2->push(std::make_unique<BatchNorm2d>(bf));
  b2->push(conv(bf, bf, 1, 1, 0, init));
  b2->push(std::make_unique<BatchNorm2d>(bf));
  b2->push(std::make_unique<ReLU>());
  branch2_ = add_child("branch2", std::move(b2));
}

Tensor ShuffleUnit::forward(const Tensor& x) {
  Tensor out;
  if (stride_ == 1) {
    auto halves = split_channels(x, {branch_features_, branch_features_});
    const Tensor b = branch2_->forward(halves[1]);
    out = concat_channels({&halves[0], &b});
  } else {
    const Tensor a = branch1_->forward(x);
    const Tensor b = branch2_->forward(x);
    out = concat_channels({&a, &b});
  }
  return channel_shuffle(out, 2);
}

Tensor ShuffleUnit::backward(const Tensor& grad_out) {
  auto parts = split_channels(channel_unshuffle(grad_out, 2), {branch_features_, branch_features_});
  if (stride_ == 1) {
    Tensor g2 = branch2_->backward(parts[1]);
    return concat_channels({&parts[0], &g2});
  }
  Tensor g = branch1_->backward(parts[0]);
  g.add(branch2_->backward(parts[1]));
  return g;
}

}  // namespace neuroens::nn
