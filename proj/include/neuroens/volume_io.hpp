#pragma once

#include <filesystem>

#include "neuroens/volume.hpp"

namespace neuroens {

enum class StorageType { Float64, Float32, Int16, Uint8 };

/// Reads a single-file little-endian NIfTI-1 image (uint8, int16 or float32)
/// or the native header + raw pair. Rejects non-finite voxels.
Volume load_volume(const std::filesystem::path& path);

/// Writes the native format unless the path ends in ".nii", in which case a
/// float32 NIfTI-1 image is written.
///
/// Native layout: `path` holds a JSON header
///   {"format":"neuroens-volume","version":1,"dims":[D,H,W],
///    "voxel_size_mm":[..],"space_tag":"..","dtype":"float64","data_file":"<stem>.raw"}
/// and `<stem>.raw` next to it holds the voxels, little-endian, width fastest.
void save_volume(const Volume& v, const std::filesystem::path& path,
                 StorageType dtype = StorageType::Float64);

void save_nifti(const Volume& v, const std::filesystem::path& path,
                StorageType dtype = StorageType::Float32);

/// Raw data file paired with a native header path.
std::filesystem::path raw_path_for(const std::filesystem::path& header_path);

}  // namespace neuroens
