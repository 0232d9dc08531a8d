#include "neuroens/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "neuroens/error.hpp"

namespace neuroens::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_4d(const Tensor& x, const char* layer) {
  if (x.rank() != 4) throw Error(std::string(layer) + ": expected a 4D input, got " + shape_string(x.shape()));
}

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

}  // namespace

Tensor& Parameter::ensure_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Parameter::zero_grad() {
  if (!grad.empty()) grad.fill(0.0);
}

// ---------------------------------------------------------------------------

void Composite::collect(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

void Composite::set_training(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->set_training(training);
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor cur = x;
  for (auto& [name, child] : children_) cur = child->forward(cur);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
  return g;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(const Conv2dOptions& opt, Rng& init) : opt_(opt) {
  if (opt.in_channels == 0 || opt.out_channels == 0) throw Error("Conv2d: zero-channel configuration");
  if (opt.groups == 0 || opt.in_channels % opt.groups || opt.out_channels % opt.groups)
    throw Error("Conv2d: channels not divisible by groups");
  if (opt.kernel == 0 || opt.stride == 0) throw Error("Conv2d: kernel and stride must be positive");
  const std::size_t fan_in = opt.in_channels / opt.groups * opt.kernel * opt.kernel;
  weight_.value = Tensor({opt.out_channels, opt.in_channels / opt.groups, opt.kernel, opt.kernel});
  init_uniform(weight_.value, std::sqrt(6.0 / static_cast<double>(fan_in)), init);
  if (opt.bias) {
    bias_.value = Tensor({opt.out_channels});
    init_uniform(bias_.value, 1.0 / std::sqrt(static_cast<double>(fan_in)), init);
  }
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  if (opt_.bias) out.push_back({prefix + "bias", &bias_});
}

std::size_t Conv2d::out_size(std::size_t in) const {
  const std::size_t padded = in + 2 * opt_.padding;
  if (padded < opt_.kernel) throw Error("Conv2d: input spatial size too small for kernel");
  return (padded - opt_.kernel) / opt_.stride + 1;
}

bool Conv2d::depthwise() const {
  return opt_.groups == opt_.in_channels && opt_.groups == opt_.out_channels && opt_.groups > 1;
}

void Conv2d::im2col(const Tensor& x, std::size_t n, std::size_t g, std::size_t oh, std::size_t ow,
                    std::vector<double>& cols) const {
  const std::size_t cin = opt_.in_channels / opt_.groups, k = opt_.kernel;
  const std::size_t H = x.h(), W = x.w(), P = oh * ow;
  const auto pad = static_cast<long long>(opt_.padding);
  cols.assign(cin * k * k * P, 0.0);
  for (std::size_t c = 0; c < cin; ++c) {
    const double* src = x.data() + ((n * x.c() + g * cin + c) * H) * W;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((c * k + ky) * k + kx) * P;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long long iy = static_cast<long long>(oy * opt_.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(H)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long long ix = static_cast<long long>(ox * opt_.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long long>(W)) continue;
            row[oy * ow + ox] = src[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)];
          }
        }
      }
  }
}

void Conv2d::col2im(const std::vector<double>& cols, std::size_t n, std::size_t g, std::size_t oh,
                    std::size_t ow, Tensor& gx) const {
  const std::size_t cin = opt_.in_channels / opt_.groups, k = opt_.kernel;
  const std::size_t H = gx.h(), W = gx.w(), P = oh * ow;
  const auto pad = static_cast<long long>(opt_.padding);
  for (std::size_t c = 0; c < cin; ++c) {
    double* dst = gx.data() + ((n * gx.c() + g * cin + c) * H) * W;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((c * k + ky) * k + kx) * P;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long long iy = static_cast<long long>(oy * opt_.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(H)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long long ix = static_cast<long long>(ox * opt_.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long long>(W)) continue;
            dst[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)] += row[oy * ow + ox];
          }
        }
      }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  require_4d(x, "Conv2d");
  if (x.c() != opt_.in_channels)
    throw Error("Conv2d: expected " + std::to_string(opt_.in_channels) + " input channels, got " +
                std::to_string(x.c()));
  const std::size_t oh = out_size(x.h()), ow = out_size(x.w()), P = oh * ow;
  Tensor y = Tensor::nchw(x.n(), opt_.out_channels, oh, ow);
  const std::size_t k = opt_.kernel;

  if (depthwise()) {
    const auto pad = static_cast<long long>(opt_.padding);
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t c = 0; c < x.c(); ++c) {
        const double* src = x.data() + (n * x.c() + c) * x.h() * x.w();
        const double* wk = weight_.value.data() + c * k * k;
        double* dst = y.data() + (n * y.c() + c) * P;
        const double b = opt_.bias ? bias_.value[c] : 0.0;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            double acc = b;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long long iy = static_cast<long long>(oy * opt_.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long long>(x.h())) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long long ix = static_cast<long long>(ox * opt_.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long long>(x.w())) continue;
                acc += wk[ky * k + kx] * src[static_cast<std::size_t>(iy) * x.w() + static_cast<std::size_t>(ix)];
              }
            }
            dst[oy * ow + ox] = acc;
          }
      }
  } else {
    const std::size_t cin = opt_.in_channels / opt_.groups, cout = opt_.out_channels / opt_.groups;
    const std::size_t K = cin * k * k;
    const bool pointwise = k == 1 && opt_.stride == 1 && opt_.padding == 0;
    std::vector<double> cols;
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t g = 0; g < opt_.groups; ++g) {
        const double* cptr;
        if (pointwise) {
          cptr = x.data() + (n * x.c() + g * cin) * P;
        } else {
          im2col(x, n, g, oh, ow, cols);
          cptr = cols.data();
        }
        CMapR C(cptr, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        CMapR Wg(weight_.value.data() + g * cout * K, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
        MapR Y(y.data() + (n * opt_.out_channels + g * cout) * P, static_cast<Eigen::Index>(cout),
               static_cast<Eigen::Index>(P));
        Y.noalias() = Wg * C;
        if (opt_.bias)
          for (std::size_t o = 0; o < cout; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bias_.value[g * cout + o];
      }
  }
  if (grad_enabled()) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error("Conv2d: backward without a recorded forward");
  const Tensor& x = input_;
  const std::size_t oh = grad_out.h(), ow = grad_out.w(), P = oh * ow, k = opt_.kernel;
  Tensor gx(x.shape(), 0.0);
  Tensor& gw = weight_.ensure_grad();
  if (opt_.bias) {
    Tensor& gb = bias_.ensure_grad();
    for (std::size_t n = 0; n < grad_out.n(); ++n)
      for (std::size_t o = 0; o < opt_.out_channels; ++o) {
        const double* g = grad_out.data() + (n * opt_.out_channels + o) * P;
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += g[p];
        gb[o] += s;
      }
  }

  if (depthwise()) {
    const auto pad = static_cast<long long>(opt_.padding);
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t c = 0; c < x.c(); ++c) {
        const double* src = x.data() + (n * x.c() + c) * x.h() * x.w();
        double* gsrc = gx.data() + (n * x.c() + c) * x.h() * x.w();
        const double* wk = weight_.value.data() + c * k * k;
        double* gwk = gw.data() + c * k * k;
        const double* g = grad_out.data() + (n * opt_.out_channels + c) * P;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double go = g[oy * ow + ox];
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long long iy = static_cast<long long>(oy * opt_.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long long>(x.h())) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long long ix = static_cast<long long>(ox * opt_.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long long>(x.w())) continue;
                const std::size_t idx = static_cast<std::size_t>(iy) * x.w() + static_cast<std::size_t>(ix);
                gwk[ky * k + kx] += go * src[idx];
                gsrc[idx] += go * wk[ky * k + kx];
              }
            }
          }
      }
    return gx;
  }

  const std::size_t cin = opt_.in_channels / opt_.groups, cout = opt_.out_channels / opt_.groups;
  const std::size_t K = cin * k * k;
  const bool pointwise = k == 1 && opt_.stride == 1 && opt_.padding == 0;
  std::vector<double> cols, gcols(K * P);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t g = 0; g < opt_.groups; ++g) {
      const double* cptr;
      if (pointwise) {
        cptr = x.data() + (n * x.c() + g * cin) * P;
      } else {
        im2col(x, n, g, oh, ow, cols);
        cptr = cols.data();
      }
      CMapR C(cptr, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      CMapR G(grad_out.data() + (n * opt_.out_channels + g * cout) * P, static_cast<Eigen::Index>(cout),
              static_cast<Eigen::Index>(P));
      CMapR Wg(weight_.value.data() + g * cout * K, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
      MapR GW(gw.data() + g * cout * K, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
      GW.noalias() += G * C.transpose();
      if (pointwise) {
        MapR GX(gx.data() + (n * x.c() + g * cin) * P, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        GX.noalias() += Wg.transpose() * G;
      } else {
        MapR GC(gcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        GC.noalias() = Wg.transpose() * G;
        col2im(gcols, n, g, oh, ow, gx);
      }
    }
  return gx;
}

// ---------------------------------------------------------------------------

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& init)
    : in_(in_features), out_(out_features) {
  if (in_ == 0 || out_ == 0) throw Error("Linear: zero-width configuration");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  weight_.value = Tensor({out_, in_});
  init_uniform(weight_.value, bound, init);
  bias_.value = Tensor({out_});
  init_uniform(bias_.value, bound, init);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() < 2) throw Error("Linear: input must have a batch axis");
  const std::size_t N = x.dim(0);
  if (x.size() != N * in_)
    throw Error("Linear: expected " + std::to_string(in_) + " features, got " + std::to_string(x.size() / N));
  Tensor y = Tensor::nchw(N, out_, 1, 1);
  CMapR X(x.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in_));
  CMapR Wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  MapR Y(y.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(out_));
  Y.noalias() = X * Wm.transpose();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_; ++o) y[n * out_ + o] += bias_.value[o];
  if (grad_enabled()) input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error("Linear: backward without a recorded forward");
  const std::size_t N = input_.dim(0);
  CMapR G(grad_out.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(out_));
  CMapR X(input_.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in_));
  CMapR Wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  MapR GW(weight_.ensure_grad().data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  GW.noalias() += G.transpose() * X;
  Tensor& gb = bias_.ensure_grad();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_; ++o) gb[o] += grad_out[n * out_ + o];
  Tensor gx(input_.shape(), 0.0);
  MapR GX(gx.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in_));
  GX.noalias() = G * Wm;
  return gx;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::size_t channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  if (channels == 0) throw Error("BatchNorm2d: zero-channel configuration");
  weight_.value = Tensor({channels}, 1.0);
  bias_.value = Tensor({channels}, 0.0);
  running_mean_.value = Tensor({channels}, 0.0);
  running_var_.value = Tensor({channels}, 1.0);
  running_mean_.trainable = false;
  running_var_.trainable = false;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  require_4d(x, "BatchNorm2d");
  if (x.c() != channels_) throw Error("BatchNorm2d: channel mismatch");
  const std::size_t N = x.n(), C = channels_, P = x.h() * x.w();
  const double M = static_cast<double>(N * P);
  Tensor y(x.shape());
  const bool record = grad_enabled();
  Tensor xhat = record ? Tensor(x.shape()) : Tensor();
  std::vector<double> inv_std(C);
  if (record) batch_stats_ = training_;
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (training_) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = x.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      mean = s / M;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = x.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / M;
      const double unbiased = M > 1.0 ? var * M / (M - 1.0) : var;
      running_mean_.value[c] = (1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean;
      running_var_.value[c] = (1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std[c] = inv;
    const double gamma = weight_.value[c], beta = bias_.value[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const double h = (x[off + i] - mean) * inv;
        if (record) xhat[off + i] = h;
        y[off + i] = gamma * h + beta;
      }
    }
  }
  if (record) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (xhat_.empty()) throw Error("BatchNorm2d: backward without a recorded forward");
  const std::size_t N = xhat_.n(), C = channels_, P = xhat_.h() * xhat_.w();
  const double M = static_cast<double>(N * P);
  Tensor gx(xhat_.shape());
  Tensor& gw = weight_.ensure_grad();
  Tensor& gb = bias_.ensure_grad();
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += grad_out[off + i] * xhat_[off + i];
      }
    }
    gw[c] += sum_gx;
    gb[c] += sum_g;
    const double gamma = weight_.value[c], inv = inv_std_[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        if (batch_stats_)
          gx[off + i] = gamma * inv / M * (M * grad_out[off + i] - sum_g - xhat_[off + i] * sum_gx);
        else
          gx[off + i] = gamma * inv * grad_out[off + i];
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i] > 0.0 ? x[i] : 0.0;
    if (cap_ > 0.0 && v > cap_) v = cap_;
    y[i] = v;
  }
  if (grad_enabled()) input_ = x;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error("ReLU: backward without a recorded forward");
  Tensor gx(input_.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double v = input_[i];
    const bool pass = v > 0.0 && (cap_ <= 0.0 || v < cap_);
    gx[i] = pass ? grad_out[i] : 0.0;
  }
  return gx;
}

// ---------------------------------------------------------------------------

MaxPool2d::MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding, bool ceil_mode)
    : kernel_(kernel), stride_(stride), padding_(padding), ceil_mode_(ceil_mode) {}

std::size_t MaxPool2d::out_size(std::size_t in) const {
  const std::size_t padded = in + 2 * padding_;
  if (padded < kernel_) throw Error("MaxPool2d: input spatial size too small");
  std::size_t span = padded - kernel_;
  std::size_t out = (ceil_mode_ ? (span + stride_ - 1) / stride_ : span / stride_) + 1;
  // the last window must start inside the input or left padding
  if (ceil_mode_ && (out - 1) * stride_ >= in + padding_) --out;
  return out;
}

Tensor MaxPool2d::forward(const Tensor& x) {
  require_4d(x, "MaxPool2d");
  const std::size_t oh = out_size(x.h()), ow = out_size(x.w());
  Tensor y = Tensor::nchw(x.n(), x.c(), oh, ow);
  const bool record = grad_enabled();
  std::vector<std::size_t> argmax(record ? y.size() : 0);
  const auto pad = static_cast<long long>(padding_);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const std::size_t base = nc * x.h() * x.w();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = base;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          const long long iy = static_cast<long long>(oy * stride_ + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(x.h())) continue;
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const long long ix = static_cast<long long>(ox * stride_ + kx) - pad;
            if (ix < 0 || ix >= static_cast<long long>(x.w())) continue;
            const std::size_t idx = base + static_cast<std::size_t>(iy) * x.w() + static_cast<std::size_t>(ix);
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        y[o] = best;
        if (record) argmax[o] = best_idx;
      }
  }
  if (record) {
    argmax_ = std::move(argmax);
    in_shape_ = x.shape();
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("MaxPool2d: backward without a recorded forward");
  Tensor gx(in_shape_, 0.0);
  for (std::size_t i = 0; i < grad_out.size(); ++i) gx[argmax_[i]] += grad_out[i];
  return gx;
}

// ---------------------------------------------------------------------------

Tensor AvgPool2d::forward(const Tensor& x) {
  require_4d(x, "AvgPool2d");
  if (x.h() < kernel_ || x.w() < kernel_) throw Error("AvgPool2d: input spatial size too small");
  const std::size_t oh = (x.h() - kernel_) / stride_ + 1, ow = (x.w() - kernel_) / stride_ + 1;
  Tensor y = Tensor::nchw(x.n(), x.c(), oh, ow);
  const double scale = 1.0 / static_cast<double>(kernel_ * kernel_);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const double* src = x.data() + nc * x.h() * x.w();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < kernel_; ++ky)
          for (std::size_t kx = 0; kx < kernel_; ++kx) s += src[(oy * stride_ + ky) * x.w() + ox * stride_ + kx];
        y[o] = s * scale;
      }
  }
  if (grad_enabled()) in_shape_ = x.shape();
  return y;
}

Tensor AvgPool2d::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("AvgPool2d: backward without a recorded forward");
  Tensor gx(in_shape_, 0.0);
  const std::size_t H = gx.h(), W = gx.w(), oh = grad_out.h(), ow = grad_out.w();
  const double scale = 1.0 / static_cast<double>(kernel_ * kernel_);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < gx.n() * gx.c(); ++nc) {
    double* dst = gx.data() + nc * H * W;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        const double g = grad_out[o] * scale;
        for (std::size_t ky = 0; ky < kernel_; ++ky)
          for (std::size_t kx = 0; kx < kernel_; ++kx) dst[(oy * stride_ + ky) * W + ox * stride_ + kx] += g;
      }
  }
  return gx;
}

// ---------------------------------------------------------------------------

namespace {
std::size_t bin_start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t bin_end(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; }
}  // namespace

Tensor AdaptiveAvgPool2d::forward(const Tensor& x) {
  require_4d(x, "AdaptiveAvgPool2d");
  Tensor y = Tensor::nchw(x.n(), x.c(), oh_, ow_);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const double* src = x.data() + nc * x.h() * x.w();
    for (std::size_t oy = 0; oy < oh_; ++oy)
      for (std::size_t ox = 0; ox < ow_; ++ox, ++o) {
        const std::size_t y0 = bin_start(oy, x.h(), oh_), y1 = bin_end(oy, x.h(), oh_);
        const std::size_t x0 = bin_start(ox, x.w(), ow_), x1 = bin_end(ox, x.w(), ow_);
        double s = 0.0;
        for (std::size_t iy = y0; iy < y1; ++iy)
          for (std::size_t ix = x0; ix < x1; ++ix) s += src[iy * x.w() + ix];
        y[o] = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
  }
  if (grad_enabled()) in_shape_ = x.shape();
  return y;
}

Tensor AdaptiveAvgPool2d::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("AdaptiveAvgPool2d: backward without a recorded forward");
  Tensor gx(in_shape_, 0.0);
  const std::size_t H = gx.h(), W = gx.w();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < gx.n() * gx.c(); ++nc) {
    double* dst = gx.data() + nc * H * W;
    for (std::size_t oy = 0; oy < oh_; ++oy)
      for (std::size_t ox = 0; ox < ow_; ++ox, ++o) {
        const std::size_t y0 = bin_start(oy, H, oh_), y1 = bin_end(oy, H, oh_);
        const std::size_t x0 = bin_start(ox, W, ow_), x1 = bin_end(ox, W, ow_);
        const double g = grad_out[o] / static_cast<double>((y1 - y0) * (x1 - x0));
        for (std::size_t iy = y0; iy < y1; ++iy)
          for (std::size_t ix = x0; ix < x1; ++ix) dst[iy * W + ix] += g;
      }
  }
  return gx;
}

}  // namespace neuroens::nn
