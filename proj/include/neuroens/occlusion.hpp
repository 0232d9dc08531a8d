#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "neuroens/ensemble.hpp"
#include "neuroens/volume.hpp"

namespace neuroens {

struct OcclusionConfig {
  std::array<std::size_t, 3> patch_size_vox{10, 10, 10};
  std::array<std::size_t, 3> stride_vox{5, 5, 5};
  double occlusion_value = 0.0;
  Modality target_modality = Modality::GM;

  /// 1 <= stride <= patch on every axis.
  void validate() const;
};

struct RelevanceMap {
  Volume values;
  OcclusionConfig config;
  Label target_class = Label::PD;
};

/// Integer region labels on the input grid; 0 is background.
struct AtlasLabelMap {
  Dims3 dims;
  std::vector<int> labels;
  std::map<int, std::string> names;

  void validate() const;
};

/// Patch origins along one axis: 0, s, 2s, ... plus a final origin flush with
/// the far edge when the stride grid does not reach it. Patches longer than the
/// axis are clamped to the axis.
std::vector<std::size_t> patch_origins(std::size_t extent, std::size_t patch, std::size_t stride);

/// Probability of the target class for one set of input volumes (one per slot).
using TargetProbability = std::function<double(const std::vector<Volume>& inputs)>;

/// Slides the patch over inputs[slot]; every other input stays intact. Each
/// position adds p_original - p_occluded to the voxels it covers, and every
/// voxel is divided by its coverage count. Positions run on `jobs` threads;
/// the merge is sequential in position order, so the result does not depend
/// on the thread count.
Volume occlusion_map(const TargetProbability& prob, const std::vector<Volume>& inputs, std::size_t slot,
                     const OcclusionConfig& cfg, unsigned jobs = 1);

/// Occludes the slot holding cfg.target_modality of a frozen ensemble.
RelevanceMap occlusion_heatmap(Ensemble& model, const std::vector<Volume>& inputs, const OcclusionConfig& cfg,
                               Label target_class, unsigned jobs = 1);

/// Voxel-wise mean of maps with equal dims.
RelevanceMap mean_relevance(const std::vector<RelevanceMap>& maps);

AtlasLabelMap atlas_from_volume(const Volume& labels, std::map<int, std::string> names);
/// Label volume in any supported volume format plus a `label,region_name` table.
AtlasLabelMap load_atlas(const std::filesystem::path& label_volume, const std::filesystem::path& names_csv);
std::map<int, std::string> load_region_names(const std::filesystem::path& csv);

/// Mean relevance per named region, background excluded, sorted descending
/// (ties by region name). Regions without voxels are omitted.
std::vector<std::pair<std::string, double>> region_relevance(const Volume& map, const AtlasLabelMap& atlas);
void save_region_relevance(const std::vector<std::pair<std::string, double>>& rows,
                           const std::filesystem::path& path);

/// Writes <dir>/slice_<axis>_<index>.csv for every slice along `axis`, plus a
/// binary PPM of each slice with a blue-white-red colormap when render is set.
/// Returns the CSV paths.
std::vector<std::filesystem::path> export_heatmap(const Volume& map, int axis, const std::filesystem::path& dir,
                                                  bool render = true);
/// Rows of a slice CSV.
std::vector<std::vector<double>> read_slice_csv(const std::filesystem::path& path);
/// RGB of a relevance value scaled by the map's largest magnitude; 0 is white.
std::array<std::uint8_t, 3> relevance_color(double value, double max_abs);

}  // namespace neuroens
