#include "neuroens/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "neuroens/error.hpp"
#include "neuroens/rng.hpp"

namespace neuroens {

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

double SmoothingSpec::sigma_mm() const { return fwhm_to_sigma(fwhm_mm); }

Volume normalize_intensity(const Volume& v) {
  const auto vals = v.values();
  const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(vals.size(), 0.0);
  if (hi > lo) {
    const double range = hi - lo;
    for (std::size_t i = 0; i < vals.size(); ++i) out[i] = (vals[i] - lo) / range;
  }
  return v.with_values(std::move(out));
}

Volume clamp_artifacts(const Volume& v) {
  std::vector<double> out(v.values().begin(), v.values().end());
  for (double& x : out) x = std::clamp(x, 0.0, 1.0);
  return v.with_values(std::move(out));
}

namespace {

struct AxisSample {
  std::size_t lo, hi;
  double frac;
};

std::vector<AxisSample> axis_samples(std::size_t src, std::size_t dst) {
  std::vector<AxisSample> out(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<std::size_t>(std::floor(x));
    const std::size_t hi = std::min(lo + 1, src - 1);
    out[i] = {lo, hi, x - static_cast<double>(lo)};
  }
  return out;
}

// a + t*(b - a), kept inside [min(a,b), max(a,b)]
double lerp_bounded(double a, double b, double t) {
  if (t == 0.0) return a;
  const double r = a + t * (b - a);
  return std::clamp(r, std::min(a, b), std::max(a, b));
}

// Half-sample symmetric index extension: ... b a | a b c ... c | c b ...
std::size_t reflect_index(long long i, long long n) {
  const long long period = 2 * n;
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

// Convolves along one axis; stride/length describe the axis inside the flat buffer.
void convolve_axis(std::vector<double>& data, const Dims3& dims, int axis, const std::vector<double>& kernel) {
  if (kernel.size() == 1) return;
  const long long radius = static_cast<long long>(kernel.size() / 2);
  const std::size_t n = axis == 0 ? dims.d : axis == 1 ? dims.h : dims.w;
  const std::size_t stride = axis == 0 ? dims.h * dims.w : axis == 1 ? dims.w : 1;
  const std::size_t outer = data.size() / n;
  std::vector<double> line(n), result(n);
  for (std::size_t o = 0; o < outer; ++o) {
    // decompose the line start
    std::size_t base;
    if (axis == 0) base = o;
    else if (axis == 1) base = (o / dims.w) * dims.h * dims.w + (o % dims.w);
    else base = o * dims.w;
    for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * stride];
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (long long k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               line[reflect_index(static_cast<long long>(i) + k, static_cast<long long>(n))];
      result[i] = acc;
    }
    for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = result[i];
  }
}

}  // namespace

Volume resample_to_shape(const Volume& v, const Dims3& target) {
  if (target.d == 0 || target.h == 0 || target.w == 0)
    throw Error("resample target dimensions must be positive, got " + to_string(target));
  const auto& src = v.dims();
  const auto sd = axis_samples(src.d, target.d);
  const auto sh = axis_samples(src.h, target.h);
  const auto sw = axis_samples(src.w, target.w);
  std::vector<double> out(target.count());
  std::size_t idx = 0;
  for (std::size_t z = 0; z < target.d; ++z)
    for (std::size_t y = 0; y < target.h; ++y)
      for (std::size_t x = 0; x < target.w; ++x) {
        const auto &a = sd[z], &b = sh[y], &c = sw[x];
        const double c00 = lerp_bounded(v.at(a.lo, b.lo, c.lo), v.at(a.lo, b.lo, c.hi), c.frac);
        const double c01 = lerp_bounded(v.at(a.lo, b.hi, c.lo), v.at(a.lo, b.hi, c.hi), c.frac);
        const double c10 = lerp_bounded(v.at(a.hi, b.lo, c.lo), v.at(a.hi, b.lo, c.hi), c.frac);
        const double c11 = lerp_bounded(v.at(a.hi, b.hi, c.lo), v.at(a.hi, b.hi, c.hi), c.frac);
        const double c0 = lerp_bounded(c00, c01, b.frac);
        const double c1 = lerp_bounded(c10, c11, b.frac);
        out[idx++] = lerp_bounded(c0, c1, a.frac);
      }
  const auto& vs = v.voxel_size_mm();
  VoxelSize vox{vs[0] * static_cast<double>(src.d) / static_cast<double>(target.d),
                vs[1] * static_cast<double>(src.h) / static_cast<double>(target.h),
                vs[2] * static_cast<double>(src.w) / static_cast<double>(target.w)};
  return Volume(target, vox, v.space_tag(), std::move(out));
}

std::vector<double> gaussian_kernel(double sigma_vox, double truncation_radius_sigmas) {
  if (!(sigma_vox >= 0.5)) return {1.0};
  const auto radius = static_cast<std::size_t>(std::ceil(truncation_radius_sigmas * sigma_vox));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * x * x / (sigma_vox * sigma_vox));
    sum += k[i];
  }
  for (double& x : k) x /= sum;
  return k;
}

Volume smooth_gaussian(const Volume& v, const SmoothingSpec& spec) {
  if (!(spec.fwhm_mm > 0.0)) throw Error("smoothing FWHM must be positive");
  if (!(spec.truncation_radius_sigmas > 0.0)) throw Error("truncation radius must be positive");
  const double sigma = spec.sigma_mm();
  std::vector<double> data(v.values().begin(), v.values().end());
  for (int axis = 0; axis < 3; ++axis) {
    const double vox = v.voxel_size_mm()[static_cast<std::size_t>(axis)];
    convolve_axis(data, v.dims(), axis, gaussian_kernel(sigma / vox, spec.truncation_radius_sigmas));
  }
  return v.with_values(std::move(data));
}

std::pair<Volume, Volume> split_tissues_synthetic(const Volume& v, std::uint64_t seed) {
  for (double x : v.values())
    if (!(x >= 0.0 && x <= 1.0)) throw Error("tissue split requires values in [0, 1]");
  Rng rng(derive_seed(seed, "tissue-split"));
  std::vector<double> gm(v.size()), wm(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v.values()[i];
    const double retained = 0.9 + 0.09 * rng.uniform();
    const double gm_share = 1.0 / (1.0 + std::exp((x - 0.45) / 0.08));
    gm[i] = x * retained * gm_share;
    wm[i] = x * retained * (1.0 - gm_share);
  }
  return {v.with_values(std::move(gm)), v.with_values(std::move(wm))};
}

}  // namespace neuroens
