#include "neuroens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "neuroens/error.hpp"
#include "neuroens/preprocess.hpp"
#include "neuroens/rng.hpp"
#include "neuroens/volume_io.hpp"

namespace neuroens {

namespace fs = std::filesystem;

namespace {

constexpr double kBackgroundMean = 0.4;
constexpr double kBackgroundSpread = 0.12;
constexpr double kNoiseSigmaVox = 1.5;

// Demographic draws follow the reference cohort's per-class statistics.
constexpr double kPdAgeMean = 62.0, kPdAgeStd = 9.54, kPdMaleRate = 189.0 / 299.0;
constexpr double kHcAgeMean = 49.2, kHcAgeStd = 16.9, kHcMaleRate = 172.0 / 299.0;

}  // namespace

bool in_lesion(const Dims3& dims, std::size_t d, std::size_t h, std::size_t w) {
  auto term = [](std::size_t i, std::size_t n) {
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    const double r = kLesionSemiAxisFraction * static_cast<double>(n);
    const double x = (static_cast<double>(i) - c) / r;
    return x * x;
  };
  return term(d, dims.d) + term(h, dims.h) + term(w, dims.w) <= 1.0;
}

std::vector<bool> lesion_mask(const Dims3& dims) {
  std::vector<bool> mask(dims.count());
  std::size_t i = 0;
  for (std::size_t d = 0; d < dims.d; ++d)
    for (std::size_t h = 0; h < dims.h; ++h)
      for (std::size_t w = 0; w < dims.w; ++w) mask[i++] = in_lesion(dims, d, h, w);
  return mask;
}

Volume make_phantom(const Dims3& dims, Label label, double class_effect, std::uint64_t seed,
                    double voxel_size_mm) {
  if (dims.d < 8 || dims.h < 8 || dims.w < 8)
    throw Error("phantom dims must each be >= 8 to contain the lesion, got " + to_string(dims));
  if (!(class_effect > 0.0 && class_effect <= 1.0)) throw Error("class_effect must lie in (0, 1]");

  Rng rng(derive_seed(seed, "phantom-noise"));
  Volume noise(dims, {1.0, 1.0, 1.0}, "SYNTH");
  for (double& x : noise.values()) x = rng.uniform();
  // smoothing in voxel units: FWHM chosen so sigma = kNoiseSigmaVox at 1 mm voxels
  noise = smooth_gaussian(noise, {kNoiseSigmaVox * 2.0 * std::sqrt(2.0 * std::log(2.0)), 4.0});

  double mean = 0.0;
  for (double x : noise.values()) mean += x;
  mean /= static_cast<double>(noise.size());
  double var = 0.0;
  for (double x : noise.values()) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(noise.size()));

  Volume out(dims, {voxel_size_mm, voxel_size_mm, voxel_size_mm}, "SYNTH");
  const auto mask = lesion_mask(dims);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = sd > 0.0 ? (noise.values()[i] - mean) / sd : 0.0;
    double x = std::clamp(kBackgroundMean + kBackgroundSpread * z, 0.0, 1.0);
    if (label == Label::PD && mask[i]) x = std::clamp(x + class_effect, 0.0, 1.0);
    out.values()[i] = x;
  }
  return out;
}

Manifest generate_synthetic_cohort(const CohortSpec& spec, const fs::path& out_dir) {
  if (spec.n_subjects == 0 || spec.n_subjects % 2 != 0)
    throw Error("n_subjects must be a positive even number, got " + std::to_string(spec.n_subjects));
  if (spec.dims.d < 8 || spec.dims.h < 8 || spec.dims.w < 8)
    throw Error("dims too small to contain the lesion blob: " + to_string(spec.dims));
  if (!(spec.class_effect > 0.0 && spec.class_effect <= 1.0)) throw Error("class_effect must lie in (0, 1]");
  fs::create_directories(out_dir);

  Manifest manifest;
  const SmoothingSpec smoothing{spec.smoothing_fwhm_mm, 4.0};
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    const Label label = i % 2 == 0 ? Label::PD : Label::HC;
    const std::uint64_t subject_seed = derive_seed({spec.seed, i});
    char id[32];
    std::snprintf(id, sizeof id, "SYN%04zu", i + 1);

    Rng demo(derive_seed(subject_seed, "demographics"));
    const bool pd = label == Label::PD;
    const double age =
        std::clamp(std::round(((pd ? kPdAgeMean : kHcAgeMean) + (pd ? kPdAgeStd : kHcAgeStd) * demo.normal()) * 10.0) / 10.0,
                   18.0, 95.0);
    const Sex sex = demo.bernoulli(pd ? kPdMaleRate : kHcMaleRate) ? Sex::M : Sex::F;

    const Volume whole = make_phantom(spec.dims, label, spec.class_effect, subject_seed, spec.voxel_size_mm);
    auto [gm, wm] = split_tissues_synthetic(whole, subject_seed);
    const Volume gm_s = smooth_gaussian(gm, smoothing);
    const Volume wm_s = smooth_gaussian(wm, smoothing);

    auto emit = [&](const Volume& v, Modality m, bool smoothed, const char* suffix) {
      const std::string file = std::string(id) + suffix + ".json";
      save_volume(v, out_dir / file);
      SubjectRecord r;
      r.subject_id = id;
      r.label = label;
      r.modality = m;
      r.smoothed = smoothed;
      r.source = Source::SYNTH;
      r.age_years = age;
      r.sex = sex;
      r.path = file;
      manifest.add(r);
    };
    emit(whole, Modality::WHOLE, false, "_whole");
    emit(gm, Modality::GM, false, "_gm");
    emit(wm, Modality::WM, false, "_wm");
    emit(gm_s, Modality::GM, true, "_gm_s");
    emit(wm_s, Modality::WM, true, "_wm_s");
  }
  save_manifest(manifest, out_dir / "manifest.csv");

  Manifest resolved;
  for (auto r : manifest.records()) {
    r.path = out_dir / r.path;
    resolved.add(std::move(r));
  }
  return resolved;
}

}  // namespace neuroens
