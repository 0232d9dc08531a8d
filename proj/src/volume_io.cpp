#include "neuroens/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <limits>

#include "neuroens/error.hpp"

namespace neuroens {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr const char* kNativeFormat = "neuroens-volume";

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T read_at(const std::vector<char>& buf, std::size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

template <class T>
void write_at(std::vector<char>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

std::size_t bytes_per_voxel(StorageType t) {
  switch (t) {
    case StorageType::Float64: return 8;
    case StorageType::Float32: return 4;
    case StorageType::Int16: return 2;
    case StorageType::Uint8: return 1;
  }
  return 0;
}

std::string dtype_name(StorageType t) {
  switch (t) {
    case StorageType::Float64: return "float64";
    case StorageType::Float32: return "float32";
    case StorageType::Int16: return "int16";
    case StorageType::Uint8: return "uint8";
  }
  return "";
}

StorageType parse_dtype(const std::string& s) {
  if (s == "float64") return StorageType::Float64;
  if (s == "float32") return StorageType::Float32;
  if (s == "int16") return StorageType::Int16;
  if (s == "uint8") return StorageType::Uint8;
  throw Error("unsupported datatype \"" + s + "\"");
}

double decode(const char* p, StorageType t) {
  switch (t) {
    case StorageType::Float64: { double v; std::memcpy(&v, p, 8); return v; }
    case StorageType::Float32: { float v; std::memcpy(&v, p, 4); return v; }
    case StorageType::Int16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case StorageType::Uint8: return static_cast<unsigned char>(*p);
  }
  return 0.0;
}

void encode(char* p, double v, StorageType t) {
  switch (t) {
    case StorageType::Float64: std::memcpy(p, &v, 8); break;
    case StorageType::Float32: { float f = static_cast<float>(v); std::memcpy(p, &f, 4); break; }
    case StorageType::Int16: {
      double r = std::clamp(std::round(v), -32768.0, 32767.0);
      auto i = static_cast<std::int16_t>(r);
      std::memcpy(p, &i, 2);
      break;
    }
    case StorageType::Uint8: {
      double r = std::clamp(std::round(v), 0.0, 255.0);
      *p = static_cast<char>(static_cast<unsigned char>(r));
      break;
    }
  }
}

void require_finite(const Volume& v, const fs::path& path) {
  if (!v.all_finite()) throw Error("non-finite voxel values in " + path.string());
}

Volume load_nifti(const std::vector<char>& buf, const fs::path& path) {
  const auto ndim = read_at<std::int16_t>(buf, 40);
  if (ndim < 1 || ndim > 7) throw Error("invalid NIfTI dim[0] in " + path.string());
  std::vector<std::int64_t> dim;
  for (int i = 1; i <= ndim; ++i) dim.push_back(read_at<std::int16_t>(buf, 40 + 2 * i));
  while (dim.size() > 3 && dim.back() == 1) dim.pop_back();
  if (dim.size() != 3)
    throw Error("dimension count " + std::to_string(dim.size()) + " != 3 in " + path.string());
  for (auto d : dim)
    if (d < 1) throw Error("non-positive NIfTI dimension in " + path.string());

  const auto code = read_at<std::int16_t>(buf, 70);
  StorageType dtype;
  switch (code) {
    case kDtUint8: dtype = StorageType::Uint8; break;
    case kDtInt16: dtype = StorageType::Int16; break;
    case kDtFloat32: dtype = StorageType::Float32; break;
    default: throw Error("unsupported datatype code " + std::to_string(code) + " in " + path.string());
  }

  VoxelSize vox{};
  for (int i = 0; i < 3; ++i) {
    const float p = read_at<float>(buf, 76 + 4 * (i + 1));
    vox[i] = (p > 0.0f && std::isfinite(p)) ? p : 1.0;
  }
  const float vox_offset = read_at<float>(buf, 108);
  float slope = read_at<float>(buf, 112);
  const float inter = read_at<float>(buf, 116);
  const bool scaled = slope != 0.0f && std::isfinite(slope);
  if (!scaled) slope = 1.0f;

  const std::size_t offset = vox_offset > 0.0f ? static_cast<std::size_t>(vox_offset) : 352;
  const Dims3 dims{static_cast<std::size_t>(dim[0]), static_cast<std::size_t>(dim[1]),
                   static_cast<std::size_t>(dim[2])};
  const std::size_t bpv = bytes_per_voxel(dtype);
  if (buf.size() < offset + dims.count() * bpv) throw Error("truncated NIfTI data in " + path.string());

  const auto sform = read_at<std::int16_t>(buf, 254);
  const auto qform = read_at<std::int16_t>(buf, 252);
  std::string tag = (sform == 4 || qform == 4) ? "MNI152" : "";

  Volume v(dims, vox, tag);
  // NIfTI stores x fastest; the volume stores its last axis fastest, so axis 0 = x.
  const char* base = buf.data() + offset;
  for (std::size_t z = 0; z < dims.w; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.d; ++x) {
        const std::size_t file_idx = x + dims.d * (y + dims.h * z);
        double val = decode(base + file_idx * bpv, dtype);
        if (scaled) val = slope * val + inter;
        v.at(x, y, z) = val;
      }
  require_finite(v, path);
  return v;
}

Volume load_native(const std::vector<char>& buf, const fs::path& path) {
  json hdr;
  try {
    hdr = json::parse(buf.begin(), buf.end());
  } catch (const json::exception&) {
    throw Error("unrecognized format: " + path.string());
  }
  if (!hdr.is_object() || hdr.value("format", "") != kNativeFormat)
    throw Error("unrecognized format: " + path.string());
  try {
    const auto d = hdr.at("dims").get<std::vector<std::int64_t>>();
    if (d.size() != 3) throw Error("dimension count " + std::to_string(d.size()) + " != 3 in " + path.string());
    for (auto x : d)
      if (x < 1) throw Error("non-positive dimension in " + path.string());
    const auto vs = hdr.at("voxel_size_mm").get<std::vector<double>>();
    if (vs.size() != 3) throw Error("voxel_size_mm must have 3 entries in " + path.string());
    const StorageType dtype = parse_dtype(hdr.at("dtype").get<std::string>());
    const fs::path raw = path.parent_path() / hdr.at("data_file").get<std::string>();
    const Dims3 dims{static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]),
                     static_cast<std::size_t>(d[2])};
    const auto bytes = read_file(raw);
    const std::size_t bpv = bytes_per_voxel(dtype);
    if (bytes.size() != dims.count() * bpv)
      throw Error("raw data size mismatch in " + raw.string());
    std::vector<double> data(dims.count());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = decode(bytes.data() + i * bpv, dtype);
    Volume v(dims, {vs[0], vs[1], vs[2]}, hdr.value("space_tag", ""), std::move(data));
    require_finite(v, path);
    return v;
  } catch (const json::exception& e) {
    throw Error("malformed volume header " + path.string() + ": " + e.what());
  }
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

fs::path raw_path_for(const fs::path& header_path) {
  fs::path raw = header_path;
  raw.replace_extension(".raw");
  if (raw == header_path) raw += ".raw";
  return raw;
}

Volume load_volume(const fs::path& path) {
  if (!fs::exists(path)) throw Error("file not found: " + path.string());
  const auto buf = read_file(path);
  if (buf.size() >= kNiftiHeaderSize) {
    const auto sizeof_hdr = read_at<std::int32_t>(buf, 0);
    const std::string magic(buf.data() + 344, 4);
    if (sizeof_hdr == 348 && magic == std::string("n+1\0", 4)) return load_nifti(buf, path);
    if (sizeof_hdr == 348 && magic == std::string("ni1\0", 4))
      throw Error("unrecognized format: two-file NIfTI is not supported: " + path.string());
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == 348u)
      throw Error("unrecognized format: big-endian NIfTI is not supported: " + path.string());
  }
  return load_native(buf, path);
}

void save_volume(const Volume& v, const fs::path& path, StorageType dtype) {
  if (path.extension() == ".nii") {
    save_nifti(v, path, dtype == StorageType::Float64 ? StorageType::Float32 : dtype);
    return;
  }
  if (!path.parent_path().empty() && !fs::is_directory(path.parent_path()))
    throw Error("cannot write " + path.string() + ": directory does not exist");
  const fs::path raw = raw_path_for(path);
  const auto& d = v.dims();
  json hdr = {{"format", kNativeFormat},
              {"version", 1},
              {"dims", {d.d, d.h, d.w}},
              {"voxel_size_mm", {v.voxel_size_mm()[0], v.voxel_size_mm()[1], v.voxel_size_mm()[2]}},
              {"space_tag", v.space_tag()},
              {"dtype", dtype_name(dtype)},
              {"data_file", raw.filename().string()}};
  const std::string text = hdr.dump(2) + "\n";
  const std::size_t bpv = bytes_per_voxel(dtype);
  std::vector<char> bytes(v.size() * bpv);
  for (std::size_t i = 0; i < v.size(); ++i) encode(bytes.data() + i * bpv, v.values()[i], dtype);
  write_bytes(path, std::vector<char>(text.begin(), text.end()));
  write_bytes(raw, bytes);
}

void save_nifti(const Volume& v, const fs::path& path, StorageType dtype) {
  if (!path.parent_path().empty() && !fs::is_directory(path.parent_path()))
    throw Error("cannot write " + path.string() + ": directory does not exist");
  std::int16_t code;
  switch (dtype) {
    case StorageType::Uint8: code = kDtUint8; break;
    case StorageType::Int16: code = kDtInt16; break;
    case StorageType::Float32: code = kDtFloat32; break;
    default: throw Error("unsupported datatype for NIfTI output");
  }
  const auto& d = v.dims();
  constexpr auto kMax = static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max());
  if (d.d > kMax || d.h > kMax || d.w > kMax) throw Error("dimension too large for NIfTI-1");
  const std::size_t bpv = bytes_per_voxel(dtype);
  std::vector<char> buf(352 + v.size() * bpv, 0);
  write_at<std::int32_t>(buf, 0, 348);
  write_at<std::int16_t>(buf, 40, 3);
  write_at<std::int16_t>(buf, 42, static_cast<std::int16_t>(d.d));
  write_at<std::int16_t>(buf, 44, static_cast<std::int16_t>(d.h));
  write_at<std::int16_t>(buf, 46, static_cast<std::int16_t>(d.w));
  for (int i = 4; i <= 7; ++i) write_at<std::int16_t>(buf, 40 + 2 * i, 1);
  write_at<std::int16_t>(buf, 70, code);
  write_at<std::int16_t>(buf, 72, static_cast<std::int16_t>(bpv * 8));
  write_at<float>(buf, 76, 1.0f);
  for (int i = 0; i < 3; ++i) write_at<float>(buf, 80 + 4 * i, static_cast<float>(v.voxel_size_mm()[i]));
  write_at<float>(buf, 108, 352.0f);
  write_at<float>(buf, 112, 1.0f);
  if (v.space_tag() == "MNI152") write_at<std::int16_t>(buf, 254, 4);
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  char* base = buf.data() + 352;
  for (std::size_t z = 0; z < d.w; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.d; ++x)
        encode(base + (x + d.d * (y + d.h * z)) * bpv, v.at(x, y, z), dtype);
  write_bytes(path, buf);
}

}  // namespace neuroens
