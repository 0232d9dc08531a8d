#include "neuroens/occlusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "neuroens/volume_io.hpp"

namespace neuroens {

namespace fs = std::filesystem;

void OcclusionConfig::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (patch_size_vox[a] < 1) throw Error("occlusion patch size must be >= 1");
    if (stride_vox[a] < 1 || stride_vox[a] > patch_size_vox[a])
      throw Error("occlusion stride must satisfy 1 <= stride <= patch size on every axis");
  }
  if (!std::isfinite(occlusion_value)) throw Error("occlusion value must be finite");
}

void AtlasLabelMap::validate() const {
  if (labels.size() != dims.count()) throw Error("atlas label count does not match its dims");
  bool any = false;
  for (int l : labels) {
    if (l < 0) throw Error("atlas labels must be >= 0");
    if (l == 0) continue;
    any = true;
    if (!names.count(l)) throw Error("atlas label " + std::to_string(l) + " has no region name");
  }
  if (!any) throw Error("atlas has no nonzero labels");
}

std::vector<std::size_t> patch_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  const std::size_t p = std::min(patch, extent);
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + p <= extent; o += stride) out.push_back(o);
  if (out.back() + p < extent) out.push_back(extent - p);
  return out;
}

Volume occlusion_map(const TargetProbability& prob, const std::vector<Volume>& inputs, std::size_t slot,
                     const OcclusionConfig& cfg, unsigned jobs) {
  cfg.validate();
  if (slot >= inputs.size()) throw Error("occlusion slot out of range");
  const Volume& target = inputs[slot];
  const Dims3 d = target.dims();
  const std::array<std::size_t, 3> ext{d.d, d.h, d.w};
  std::array<std::vector<std::size_t>, 3> origins;
  std::array<std::size_t, 3> p{};
  for (std::size_t a = 0; a < 3; ++a) {
    origins[a] = patch_origins(ext[a], cfg.patch_size_vox[a], cfg.stride_vox[a]);
    p[a] = std::min(cfg.patch_size_vox[a], ext[a]);
  }
  struct Pos {
    std::size_t z, y, x;
  };
  std::vector<Pos> positions;
  for (std::size_t z : origins[0])
    for (std::size_t y : origins[1])
      for (std::size_t x : origins[2]) positions.push_back({z, y, x});

  const double p_orig = prob(inputs);
  std::vector<double> diff(positions.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(std::max(1u, jobs));
  auto worker = [&](unsigned wid) {
    try {
      std::vector<Volume> work = inputs;
      std::span<double> buf = work[slot].values();
      std::span<const double> orig = target.values();
      for (std::size_t i = next++; i < positions.size(); i = next++) {
        const Pos& q = positions[i];
        for (std::size_t z = q.z; z < q.z + p[0]; ++z)
          for (std::size_t y = q.y; y < q.y + p[1]; ++y)
            for (std::size_t x = q.x; x < q.x + p[2]; ++x) buf[target.index(z, y, x)] = cfg.occlusion_value;
        diff[i] = p_orig - prob(work);
        for (std::size_t z = q.z; z < q.z + p[0]; ++z)
          for (std::size_t y = q.y; y < q.y + p[1]; ++y)
            for (std::size_t x = q.x; x < q.x + p[2]; ++x) {
              const std::size_t k = target.index(z, y, x);
              buf[k] = orig[k];
            }
      }
    } catch (const std::exception& e) {
      errors[wid] = e.what();
      next = positions.size();
    }
  };
  if (jobs <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error("occlusion: " + e);

  std::vector<double> sum(d.count(), 0.0);
  std::vector<std::size_t> count(d.count(), 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Pos& q = positions[i];
    for (std::size_t z = q.z; z < q.z + p[0]; ++z)
      for (std::size_t y = q.y; y < q.y + p[1]; ++y)
        for (std::size_t x = q.x; x < q.x + p[2]; ++x) {
          const std::size_t k = target.index(z, y, x);
          sum[k] += diff[i];
          ++count[k];
        }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= static_cast<double>(count[k]);
  return Volume(d, target.voxel_size_mm(), target.space_tag(), std::move(sum));
}

RelevanceMap occlusion_heatmap(Ensemble& model, const std::vector<Volume>& inputs, const OcclusionConfig& cfg,
                               Label target_class, unsigned jobs) {
  const auto& mods = model.input_modalities();
  if (inputs.size() != mods.size())
    throw Error("model expects " + std::to_string(mods.size()) + " input volumes, got " +
                std::to_string(inputs.size()));
  auto it = std::find(mods.begin(), mods.end(), cfg.target_modality);
  if (it == mods.end()) throw Error("modality " + to_string(cfg.target_modality) + " is not a model input");
  const std::size_t slot = static_cast<std::size_t>(it - mods.begin());
  model.set_training(false);
  const std::size_t cls = static_cast<std::size_t>(class_index(target_class));
  TargetProbability prob = [&model, cls](const std::vector<Volume>& in) {
    nn::InferenceGuard guard;
    std::vector<nn::Tensor> t;
    for (const auto& v : in) t.push_back(to_tensor(v));
    const nn::Tensor z = model.forward(t);
    return predict_proba({z[0], z[1]})[cls];
  };
  RelevanceMap out{occlusion_map(prob, inputs, slot, cfg, jobs), cfg, target_class};
  return out;
}

RelevanceMap mean_relevance(const std::vector<RelevanceMap>& maps) {
  if (maps.empty()) throw Error("mean_relevance: no maps");
  std::vector<double> acc(maps.front().values.size(), 0.0);
  for (const auto& m : maps) {
    if (!m.values.same_geometry(maps.front().values)) throw Error("mean_relevance: map dims differ");
    const auto v = m.values.values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  }
  for (double& a : acc) a /= static_cast<double>(maps.size());
  RelevanceMap out = maps.front();
  out.values = maps.front().values.with_values(std::move(acc));
  return out;
}

AtlasLabelMap atlas_from_volume(const Volume& labels, std::map<int, std::string> names) {
  AtlasLabelMap a;
  a.dims = labels.dims();
  a.names = std::move(names);
  for (double v : labels.values()) {
    if (v != std::round(v)) throw Error("atlas label volume holds a non-integer value");
    a.labels.push_back(static_cast<int>(v));
  }
  a.validate();
  return a;
}

std::map<int, std::string> load_region_names(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error("cannot open region names " + csv.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "label,region_name") throw Error("region names: expected header label,region_name");
  std::map<int, std::string> names;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("region names line " + std::to_string(row) + ": missing comma");
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(line.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error("region names line " + std::to_string(row) + ": bad label");
    }
    if (!names.emplace(label, line.substr(comma + 1)).second)
      throw Error("region names: duplicate label " + std::to_string(label));
  }
  return names;
}

AtlasLabelMap load_atlas(const fs::path& label_volume, const fs::path& names_csv) {
  return atlas_from_volume(load_volume(label_volume), load_region_names(names_csv));
}

std::vector<std::pair<std::string, double>> region_relevance(const Volume& map, const AtlasLabelMap& atlas) {
  atlas.validate();
  if (!(map.dims() == atlas.dims))
    throw Error("atlas dims " + to_string(atlas.dims) + " differ from map dims " + to_string(map.dims()));
  std::map<int, std::pair<double, std::size_t>> acc;
  const auto v = map.values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    const int l = atlas.labels[k];
    if (l == 0) continue;
    auto& a = acc[l];
    a.first += v[k];
    ++a.second;
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [label, a] : acc) out.emplace_back(atlas.names.at(label), a.first / static_cast<double>(a.second));
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  return out;
}

void save_region_relevance(const std::vector<std::pair<std::string, double>>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "region,mean_relevance\n";
  char buf[64];
  for (const auto& [name, value] : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out << name << ',' << buf << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::array<std::uint8_t, 3> relevance_color(double value, double max_abs) {
  const double t = max_abs > 0.0 ? std::clamp(value / max_abs, -1.0, 1.0) : 0.0;
  const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
  if (t > 0.0) return {255, fade, fade};
  if (t < 0.0) return {fade, fade, 255};
  return {255, 255, 255};
}

std::vector<fs::path> export_heatmap(const Volume& map, int axis, const fs::path& dir, bool render) {
  if (axis < 0 || axis > 2) throw Error("axis must be 0, 1 or 2");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
  const Dims3 d = map.dims();
  const std::array<std::size_t, 3> ext{d.d, d.h, d.w};
  const std::size_t a = static_cast<std::size_t>(axis);
  const std::size_t r_axis = a == 0 ? 1 : 0;
  const std::size_t c_axis = a == 2 ? 1 : 2;
  double max_abs = 0.0;
  for (double v : map.values()) max_abs = std::max(max_abs, std::abs(v));

  std::vector<fs::path> written;
  char num[32];
  for (std::size_t s = 0; s < ext[a]; ++s) {
    std::snprintf(num, sizeof num, "slice_%d_%03zu", axis, s);
    const fs::path csv = dir / (std::string(num) + ".csv");
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw Error("cannot write " + csv.string());
    std::vector<std::uint8_t> rgb;
    char buf[64];
    for (std::size_t r = 0; r < ext[r_axis]; ++r) {
      for (std::size_t c = 0; c < ext[c_axis]; ++c) {
        std::array<std::size_t, 3> idx{};
        idx[a] = s;
        idx[r_axis] = r;
        idx[c_axis] = c;
        const double v = map.at(idx[0], idx[1], idx[2]);
        std::snprintf(buf, sizeof buf, "%.17g", v);
        if (c) out << ',';
        out << buf;
        if (render) {
          const auto col = relevance_color(v, max_abs);
          rgb.insert(rgb.end(), col.begin(), col.end());
        }
      }
      out << '\n';
    }
    if (!out) throw Error("write failed: " + csv.string());
    written.push_back(csv);
    if (render) {
      const fs::path ppm = dir / (std::string(num) + ".ppm");
      std::ofstream img(ppm, std::ios::binary);
      if (!img) throw Error("cannot write " + ppm.string());
      img << "P6\n" << ext[c_axis] << ' ' << ext[r_axis] << "\n255\n";
      img.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    }
  }
  return written;
}

std::vector<std::vector<double>> read_slice_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace neuroens
