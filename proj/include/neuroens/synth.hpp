#pragma once

#include <cstdint>
#include <filesystem>

#include "neuroens/manifest.hpp"
#include "neuroens/volume.hpp"

namespace neuroens {

struct CohortSpec {
  std::size_t n_subjects = 20;
  Dims3 dims{16, 16, 16};
  double class_effect = 0.5;
  std::uint64_t seed = 0;
  double voxel_size_mm = 2.0;
  double smoothing_fwhm_mm = 8.0;
};

/// Semi-axis of the lesion ellipsoid as a fraction of each dimension; the
/// ellipsoid then covers ~5% of the grid.
inline constexpr double kLesionSemiAxisFraction = 0.2285;

/// True inside the fixed, centred lesion ellipsoid.
bool in_lesion(const Dims3& dims, std::size_t d, std::size_t h, std::size_t w);
std::vector<bool> lesion_mask(const Dims3& dims);

/// Smooth clipped background noise in [0, 1]; PD phantoms add class_effect
/// inside the lesion ellipsoid and are re-clamped.
Volume make_phantom(const Dims3& dims, Label label, double class_effect, std::uint64_t seed,
                    double voxel_size_mm = 2.0);

/// Writes n/2 PD and n/2 HC subjects into out_dir. Per subject: WHOLE, GM, WM
/// (unsmoothed) and smoothed GM, WM. Also writes out_dir/manifest.csv, with
/// paths relative to out_dir. Deterministic in the spec.
Manifest generate_synthetic_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

}  // namespace neuroens
