#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace neuroens {

/// Grid extent in voxels, ordered (depth, height, width); width varies fastest.
struct Dims3 {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t count() const { return d * h * w; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

std::string to_string(const Dims3& dims);

using VoxelSize = std::array<double, 3>;

/// Dense 3D scalar grid with voxel geometry. Every pipeline stage consumes and
/// produces these.
class Volume {
 public:
  Volume() = default;
  Volume(Dims3 dims, VoxelSize voxel_size_mm, std::string space_tag = "", double fill = 0.0);
  Volume(Dims3 dims, VoxelSize voxel_size_mm, std::string space_tag, std::vector<double> data);

  const Dims3& dims() const { return dims_; }
  const VoxelSize& voxel_size_mm() const { return voxel_size_; }
  const std::string& space_tag() const { return space_tag_; }
  void set_voxel_size_mm(const VoxelSize& v);
  void set_space_tag(std::string tag) { space_tag_ = std::move(tag); }

  std::size_t size() const { return data_.size(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const {
    return (d * dims_.h + h) * dims_.w + w;
  }
  double& at(std::size_t d, std::size_t h, std::size_t w) { return data_[index(d, h, w)]; }
  double at(std::size_t d, std::size_t h, std::size_t w) const { return data_[index(d, h, w)]; }

  /// Same geometry, new contents.
  Volume with_values(std::vector<double> data) const;
  bool same_geometry(const Volume& other) const;
  bool all_finite() const;

 private:
  Dims3 dims_;
  VoxelSize voxel_size_{1.0, 1.0, 1.0};
  std::string space_tag_;
  std::vector<double> data_;
};

}  // namespace neuroens
