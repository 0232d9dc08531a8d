#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "neuroens/nn/tensor.hpp"

namespace neuroens::nn {

/// Named-tensor container used for weight files and checkpoints.
///
/// Binary layout, all integers little-endian:
///   "NTEN" | u32 version (1)
///   u32 n_meta   | n_meta   x (u32 len, key bytes, u32 len, value bytes)
///   u32 n_tensor | n_tensor x (u32 len, name bytes, u8 dtype (1 = f32, 2 = f64),
///                              u32 rank, rank x u64 dim, raw values)
struct TensorArchive {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

enum class ArchiveDtype { F32, F64 };

void save_archive(const TensorArchive& archive, const std::filesystem::path& path,
                  ArchiveDtype dtype = ArchiveDtype::F64);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace neuroens::nn
