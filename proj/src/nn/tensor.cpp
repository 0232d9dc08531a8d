#include "neuroens/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "neuroens/error.hpp"

namespace neuroens::nn {

namespace {
thread_local bool g_grad_enabled = true;

std::size_t product(const std::vector<std::size_t>& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_))
    throw Error("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add(const Tensor& other) {
  if (!same_shape(other))
    throw Error("tensor add shape mismatch " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  const auto& first = *parts.front();
  std::size_t channels = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 4 || p->n() != first.n() || p->h() != first.h() || p->w() != first.w())
      throw Error("concat_channels: incompatible shapes " + shape_string(first.shape()) + " and " +
                  shape_string(p->shape()));
    channels += p->c();
  }
  Tensor out = Tensor::nchw(first.n(), channels, first.h(), first.w());
  const std::size_t plane = first.h() * first.w();
  for (std::size_t n = 0; n < first.n(); ++n) {
    double* dst = out.data() + n * channels * plane;
    for (const Tensor* p : parts) {
      const std::size_t block = p->c() * plane;
      std::memcpy(dst, p->data() + n * block, block * sizeof(double));
      dst += block;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, const std::vector<std::size_t>& sizes) {
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != t.c())
    throw Error("split_channels: sizes do not sum to channel count");
  const std::size_t plane = t.h() * t.w();
  std::vector<Tensor> out;
  for (auto s : sizes) out.push_back(Tensor::nchw(t.n(), s, t.h(), t.w()));
  for (std::size_t n = 0; n < t.n(); ++n) {
    const double* src = t.data() + n * t.c() * plane;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const std::size_t block = sizes[i] * plane;
      std::memcpy(out[i].data() + n * block, src, block * sizeof(double));
      src += block;
    }
  }
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

InferenceGuard::InferenceGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
InferenceGuard::~InferenceGuard() { g_grad_enabled = previous_; }

}  // namespace neuroens::nn
