#pragma once

#include <utility>
#include <vector>

#include "neuroens/volume.hpp"

namespace neuroens {

struct SmoothingSpec {
  double fwhm_mm = 8.0;
  double truncation_radius_sigmas = 4.0;

  double sigma_mm() const;
};

/// FWHM = 2*sqrt(2*ln 2)*sigma.
double fwhm_to_sigma(double fwhm);

/// Maps [min, max] linearly onto [0, 1]. A constant volume maps to all zeros.
Volume normalize_intensity(const Volume& v);

/// Clamps every voxel into [0, 1].
Volume clamp_artifacts(const Volume& v);

/// Trilinear resampling with voxel centres aligned; voxel sizes are rescaled so
/// the physical extent is unchanged.
Volume resample_to_shape(const Volume& v, const Dims3& target);

/// Normalised 1D Gaussian taps for a sigma in voxels. Sigma below half a voxel
/// gives the single tap {1}.
std::vector<double> gaussian_kernel(double sigma_vox, double truncation_radius_sigmas);

/// Separable Gaussian smoothing with half-sample symmetric ("reflect") boundaries.
Volume smooth_gaussian(const Volume& v, const SmoothingSpec& spec);

/// Stand-in for an atlas-based tissue segmentation: splits each voxel's value
/// between a gray-matter share (darker voxels) and a white-matter share
/// (brighter voxels), with a seeded per-voxel partial-volume loss so that
/// gm + wm <= v everywhere.
std::pair<Volume, Volume> split_tissues_synthetic(const Volume& v, std::uint64_t seed);

}  // namespace neuroens
