#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "neuroens/ensemble.hpp"
#include "neuroens/rng.hpp"
#include "neuroens/trainer.hpp"

namespace neuroens::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("neuroens_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline nn::Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = 0.0,
                                double hi = 1.0) {
  nn::Tensor t(std::move(shape));
  Rng r(seed);
  for (double& v : t.values()) v = r.uniform(lo, hi);
  return t;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::string worst_name;
};

/// Central finite differences against analytic gradients of `loss` for a
/// sample of entries per parameter tensor. `loss` runs a forward pass and
/// returns the scalar; `analytic` runs forward + backward, leaving gradients
/// in the parameters. Entries whose difference straddles a kink are retried
/// with smaller steps before they count as failures.
inline GradCheckResult grad_check(std::vector<nn::NamedParameter> params, const std::function<double()>& loss,
                                  const std::function<void()>& analytic, std::size_t per_tensor, std::uint64_t seed,
                                  double rel_tol = 1e-4, double abs_floor = 1e-9) {
  for (auto& p : params) p.param->zero_grad();
  analytic();
  GradCheckResult out;
  Rng pick(seed);
  for (auto& np : params) {
    nn::Parameter& p = *np.param;
    if (!p.trainable) continue;
    const nn::Tensor g = p.ensure_grad();
    const std::size_t n = p.value.size();
    std::vector<std::size_t> idx;
    if (n <= per_tensor) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t k = 0; k < per_tensor; ++k) idx.push_back(static_cast<std::size_t>(pick.below(n)));
    }
    for (std::size_t i : idx) {
      const double a = g[i];
      const double x0 = p.value[i];
      bool ok = false;
      double best_rel = 0.0;
      for (double h : {1e-6, 1e-7, 1e-5, 1e-8}) {
        p.value[i] = x0 + h;
        const double lp = loss();
        p.value[i] = x0 - h;
        const double lm = loss();
        p.value[i] = x0;
        const double num = (lp - lm) / (2.0 * h);
        const double diff = std::abs(num - a);
        const double scale = std::max(std::abs(num), std::abs(a));
        const double rel = scale > 0.0 ? diff / scale : 0.0;
        if (diff <= rel_tol * scale || diff <= abs_floor) {
          ok = true;
          break;
        }
        if (best_rel == 0.0 || rel < best_rel) best_rel = rel;
      }
      ++out.checked;
      if (!ok) {
        ++out.failed;
        if (best_rel > out.worst_rel) {
          out.worst_rel = best_rel;
          out.worst_name = np.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return out;
}

/// Gradient check of a whole ensemble under mean cross-entropy, in training mode.
inline GradCheckResult ensemble_grad_check(Ensemble& m, const std::vector<nn::Tensor>& inputs,
                                           const std::vector<int>& labels, std::size_t per_tensor,
                                           std::uint64_t seed) {
  m.set_training(true);
  auto loss = [&] { return cross_entropy_batch(m.forward(inputs), labels); };
  auto analytic = [&] {
    nn::Tensor g;
    cross_entropy_batch(m.forward(inputs), labels, &g);
    m.backward(g);
  };
  return grad_check(m.parameters(), loss, analytic, per_tensor, seed);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace neuroens::testing
