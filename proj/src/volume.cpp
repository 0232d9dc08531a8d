#include "neuroens/volume.hpp"

#include <cmath>

#include "neuroens/error.hpp"

namespace neuroens {

std::string to_string(const Dims3& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

namespace {

void check_geometry(const Dims3& dims, const VoxelSize& vox) {
  if (dims.d == 0 || dims.h == 0 || dims.w == 0)
    throw Error("volume dimensions must be >= 1, got " + to_string(dims));
  for (double v : vox)
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("voxel sizes must be positive and finite");
}

}  // namespace

Volume::Volume(Dims3 dims, VoxelSize voxel_size_mm, std::string space_tag, double fill)
    : dims_(dims), voxel_size_(voxel_size_mm), space_tag_(std::move(space_tag)) {
  check_geometry(dims_, voxel_size_);
  data_.assign(dims_.count(), fill);
}

Volume::Volume(Dims3 dims, VoxelSize voxel_size_mm, std::string space_tag, std::vector<double> data)
    : dims_(dims), voxel_size_(voxel_size_mm), space_tag_(std::move(space_tag)), data_(std::move(data)) {
  check_geometry(dims_, voxel_size_);
  if (data_.size() != dims_.count())
    throw Error("volume data has " + std::to_string(data_.size()) + " values, expected " +
                std::to_string(dims_.count()));
}

void Volume::set_voxel_size_mm(const VoxelSize& v) {
  check_geometry(dims_, v);
  voxel_size_ = v;
}

Volume Volume::with_values(std::vector<double> data) const {
  return Volume(dims_, voxel_size_, space_tag_, std::move(data));
}

bool Volume::same_geometry(const Volume& other) const {
  return dims_ == other.dims_ && voxel_size_ == other.voxel_size_;
}

bool Volume::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace neuroens
