// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "neuroens/ensemble.hpp"
#include "neuroens/model_zoo.hpp"
#include "neuroens/nn/tensor.hpp"
#include "neuroens/occlusion.hpp"
#include "neuroens/preprocess.hpp"
#include "neuroens/report.hpp"
#include "neuroens/rng.hpp"
#include "neuroens/synth.hpp"
#include "neuroens/trainer.hpp"
#include "test_support.hpp"

using namespace neuroens;
using neuroens::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " FAILED: " << what << ';';
    }
  }
};

Manifest cohort(const fs::path& dir, std::size_t n, std::uint64_t seed, double effect = 0.5) {
  CohortSpec s;
  s.n_subjects = n;
  s.seed = seed;
  s.class_effect = effect;
  return generate_synthetic_cohort(s, dir);
}

// 1. Default protocol: 25 epochs x 5 repetitions x 2 learning rates.
void protocol_fidelity(Outcome& o) {
  TempDir t("acc1");
  const ExperimentConfig c;
  const ExperimentResult r = run_experiment(c, cohort(t.path(), 20, 101));
  o.check(r.table.rows.size() == 2, "table has 2 rows");
  o.check(r.runs.size() == 10, "10 runs");
  for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
    o.check(r.table.rows[i].rep_accuracies.size() == 5, "5 repetitions per row");
    o.check(r.table.rows[i].learning_rate == c.learning_rates[i], "row learning rate");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& run : r.runs) {
    o.check(run.history.size() == 25, "25 epochs per run");
    o.check(run.test_subjects.size() == 4, "test split of 4");
    seen.insert({run.lr_index, run.repetition});
  }
  o.check(seen.size() == 10, "distinct (lr, repetition) pairs");
  o.check(c.learning_rates == std::vector<double>{1e-3, 1e-4}, "default learning rates");
  o.detail << " 2 lr x 5 reps x 25 epochs on 20 subjects";
}

// 2. Synthetic end-to-end accuracy.
void synthetic_end_to_end(Outcome& o) {
  TempDir t("acc2");
  const Manifest m = cohort(t.path(), 100, 2024);
  ExperimentConfig c;
  c.learning_rates = {1e-3};
  c.master_seed = 5;
  c.model_kind = ModelKind::MODEL2;
  const auto t0 = std::chrono::steady_clock::now();
  const double m2 = run_experiment(c, m).table.rows[0].acc_mean;
  const double s2 = testing::seconds_since(t0);
  c.model_kind = ModelKind::MODEL1;
  const auto t1 = std::chrono::steady_clock::now();
  const double m1 = run_experiment(c, m).table.rows[0].acc_mean;
  const double s1 = testing::seconds_since(t1);
  o.check(m2 >= 0.90, "Model 2 mean accuracy >= 0.90");
  o.check(m1 >= 0.80, "Model 1 mean accuracy >= 0.80");
  o.check(s2 < 600 && s1 < 600, "each run under 10 min");
  char buf[160];
  std::snprintf(buf, sizeof buf, " Model 2 %.4f (%.1f s), Model 1 %.4f (%.1f s)", m2, s2, m1, s1);
  o.detail << buf;
}

// 3. Finite-difference gradients for every family and both fusion heads.
void gradient_correctness(Outcome& o) {
  std::size_t checked = 0;
  for (Family f : {Family::RESNET, Family::SQUEEZENET, Family::DENSENET, Family::VGG, Family::MOBILENET,
                   Family::SHUFFLENET}) {
    BackboneModel m = build_backbone(toy_spec(f, 4, 16, 16, 31));
    m.set_training(true);
    const nn::Tensor x = testing::random_tensor({2, 4, 16, 16}, 32);
    const std::vector<int> y{0, 1};
    auto loss = [&] { return cross_entropy_batch(m.forward(x), y); };
    auto analytic = [&] {
      nn::Tensor g;
      cross_entropy_batch(m.forward(x), y, &g);
      m.backward(g);
    };
    const auto r = testing::grad_check(m.parameters(), loss, analytic, 4, 33);
    checked += r.checked;
    o.check(r.failed == 0, to_string(f) + " worst " + r.worst_name + " rel " + std::to_string(r.worst_rel));
  }
  for (ModelKind k : {ModelKind::MODEL1, ModelKind::MODEL2}) {
    std::unique_ptr<Ensemble> m;
    if (k == ModelKind::MODEL1)
      m = std::make_unique<EnsembleModel1>(build_model1(architecture_specs(k, {4, 16, 16}, false, 34), 35));
    else
      m = std::make_unique<EnsembleModel2>(build_model2(architecture_specs(k, {4, 16, 16}, false, 34), 35));
    std::vector<nn::Tensor> in;
    for (std::size_t s = 0; s < m->input_modalities().size(); ++s)
      in.push_back(testing::random_tensor({2, 4, 16, 16}, 36 + s));
    const std::vector<int> y{1, 0};
    m->set_training(true);
    auto loss = [&] { return cross_entropy_batch(m->forward(in), y); };
    auto analytic = [&] {
      nn::Tensor g;
      cross_entropy_batch(m->forward(in), y, &g);
      m->backward(g);
    };
    std::vector<nn::NamedParameter> fusion;
    for (const auto& p : m->parameters())
      if (p.name.rfind("fusion.", 0) == 0) fusion.push_back(p);
    const auto r = testing::grad_check(fusion, loss, analytic, 1000, 37);
    checked += r.checked;
    o.check(r.checked == 2 * m->fusion_width() + 2, "every fusion entry checked");
    o.check(r.failed == 0, to_string(k) + " fusion worst " + r.worst_name);
  }
  o.detail << ' ' << checked << " entries at 1e-4 relative";
}

// 4. Smoothing sigma, mean preservation, variance reduction.
void smoothing_math(Outcome& o) {
  const double sigma = fwhm_to_sigma(8.0) / 2.0;
  o.check(std::abs(sigma - 1.69864) <= 1e-5, "sigma " + std::to_string(sigma));
  double worst_mean = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng r(1000 + s);
    const Dims3 d{8 + s % 5, 9 + s % 4, 10 + s % 3};
    Volume v(d, {2.0, 2.0, 2.0});
    for (auto& x : v.values()) x = r.uniform();
    const Volume sm = smooth_gaussian(v, SmoothingSpec{8.0});
    double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < v.size(); ++i) m0 += v.values()[i], m1 += sm.values()[i];
    m0 /= static_cast<double>(v.size());
    m1 /= static_cast<double>(v.size());
    double v0 = 0, v1 = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v0 += (v.values()[i] - m0) * (v.values()[i] - m0);
      v1 += (sm.values()[i] - m1) * (sm.values()[i] - m1);
    }
    worst_mean = std::max(worst_mean, std::abs(m1 - m0) / std::abs(m0));
    o.check(v1 <= v0, "variance increased for volume " + std::to_string(s));
  }
  o.check(worst_mean <= 1e-6, "mean drift " + std::to_string(worst_mean));
  char buf[96];
  std::snprintf(buf, sizeof buf, " sigma %.6f, worst relative mean drift %.2e", sigma, worst_mean);
  o.detail << buf;
}

Volume brute_force_map(const TargetProbability& prob, const std::vector<Volume>& in, std::size_t slot,
                       const OcclusionConfig& c) {
  const Dims3 d = in[slot].dims();
  const std::array<std::size_t, 3> ext{d.d, d.h, d.w};
  std::array<std::vector<std::size_t>, 3> origins;
  for (int a = 0; a < 3; ++a) {
    const std::size_t p = std::min(c.patch_size_vox[a], ext[a]);
    for (std::size_t x = 0;; x += c.stride_vox[a]) {
      if (x + p >= ext[a]) {
        origins[a].push_back(ext[a] - p);
        break;
      }
      origins[a].push_back(x);
    }
  }
  const double p0 = prob(in);
  std::vector<double> sum(d.count(), 0.0), count(d.count(), 0.0);
  for (auto z : origins[0])
    for (auto y : origins[1])
      for (auto x : origins[2]) {
        std::vector<Volume> occ = in;
        const std::size_t z1 = std::min(z + c.patch_size_vox[0], d.d), y1 = std::min(y + c.patch_size_vox[1], d.h),
                          x1 = std::min(x + c.patch_size_vox[2], d.w);
        for (std::size_t i = z; i < z1; ++i)
          for (std::size_t j = y; j < y1; ++j)
            for (std::size_t k = x; k < x1; ++k) occ[slot].at(i, j, k) = c.occlusion_value;
        const double diff = p0 - prob(occ);
        for (std::size_t i = z; i < z1; ++i)
          for (std::size_t j = y; j < y1; ++j)
            for (std::size_t k = x; k < x1; ++k) {
              sum[in[slot].index(i, j, k)] += diff;
              count[in[slot].index(i, j, k)] += 1.0;
            }
      }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
  return in[slot].with_values(sum);
}

// 5. Occlusion equals brute force; argmax lands in the lesion ellipsoid.
void occlusion_oracle(Outcome& o) {
  const Dims3 d{16, 16, 16};
  const std::vector<bool> mask = lesion_mask(d);
  double lesion_voxels = 0;
  for (bool b : mask) lesion_voxels += b;
  // Probability of PD as a monotone function of the mean lesion intensity.
  const TargetProbability analytic = [&](const std::vector<Volume>& in) {
    double s = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) s += in[0].values()[i];
    return 1.0 / (1.0 + std::exp(-8.0 * (s / lesion_voxels - 0.5)));
  };

  OcclusionConfig cfg;  // 10^3 patch, stride 5
  std::size_t exact = 0, compared = 0;
  const Volume pd = make_phantom(d, Label::PD, 0.5, 71, 2.0);
  {
    const std::vector<Volume> in{pd};
    const Volume a = occlusion_map(analytic, in, 0, cfg, 2);
    const Volume b = brute_force_map(analytic, in, 0, cfg);
    exact += a.data() == b.data();
    ++compared;
  }
  {
    auto m = build_model2(architecture_specs(ModelKind::MODEL2, d, false, 72), 73);
    m.set_training(false);
    const std::vector<Volume> in{make_phantom(d, Label::PD, 0.5, 74, 2.0), make_phantom(d, Label::HC, 0.5, 75, 2.0)};
    OcclusionConfig c2 = cfg;
    c2.occlusion_value = 0.5;
    const Volume a = occlusion_heatmap(m, in, c2, Label::PD).values;
    const Volume b = brute_force_map(
        [&](const std::vector<Volume>& v) { return predict_proba(forward_model2(m, v[0], v[1]))[0]; }, in, 0, c2);
    exact += a.data() == b.data();
    ++compared;
  }
  o.check(exact == compared, "strided map differs from brute force");

  OcclusionConfig fine;
  fine.patch_size_vox = {4, 4, 4};
  fine.stride_vox = {2, 2, 2};
  int inside = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<Volume> in{make_phantom(d, Label::PD, 0.5, 500 + trial, 2.0)};
    const Volume map = occlusion_map(analytic, in, 0, fine);
    const auto v = map.values();
    const std::size_t arg = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    inside += mask[arg];
  }
  o.check(inside >= 19, "argmax inside ellipsoid in >= 95% of trials");
  o.detail << ' ' << exact << '/' << compared << " maps bit-identical to brute force, argmax inside ellipsoid "
           << inside << "/20";
}

// 6. Split hygiene over 100 seeded runs.
void split_hygiene(Outcome& o) {
  std::vector<SubjectRecord> rs;
  for (int i = 0; i < 598; ++i)
    for (Modality mod : {Modality::GM, Modality::WM}) {
      SubjectRecord r;
      r.subject_id = "P" + std::to_string(i);
      r.label = i < 299 ? Label::PD : Label::HC;
      r.modality = mod;
      r.path = "unused";
      rs.push_back(r);
    }
  const Manifest m(rs);
  std::size_t overlaps = 0, bad_sizes = 0;
  auto overlap = [](const Manifest& a, const Manifest& b) {
    const auto ia = a.subject_ids(), ib = b.subject_ids();
    const std::set<std::string> sa(ia.begin(), ia.end());
    std::size_t n = 0;
    for (const auto& id : ib) n += sa.count(id);
    return n + (ia.size() + ib.size() == 0);
  };
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto [train, test] = split_train_test(m, 0.2, repetition_seed(s, s % 2, s % 5));
    bad_sizes += test.subject_count() != 120 || train.subject_count() != 478;
    overlaps += overlap(train, test);
    const auto [fit, val] = split_validation(train, 0.2, epoch_seed(s, s % 25));
    bad_sizes += val.subject_count() != static_cast<std::size_t>(std::llround(0.2 * 478));
    bad_sizes += fit.subject_count() + val.subject_count() != 478;
    overlaps += overlap(fit, val) + overlap(val, test) + overlap(fit, test);
  }
  for (std::size_t n = 2; n < 200; n += 13) {
    std::vector<SubjectRecord> small(rs.begin(), rs.begin() + static_cast<std::ptrdiff_t>(2 * n));
    const auto [a, b] = split_train_test(Manifest(small), 0.2, n);
    bad_sizes += b.subject_count() != static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  }
  o.check(overlaps == 0, std::to_string(overlaps) + " overlapping subjects");
  o.check(bad_sizes == 0, std::to_string(bad_sizes) + " wrong split sizes");
  o.detail << " 100 runs on N = 598: |test| 120, |val| 96, no overlap";
}

// 7. Stored aggregates equal recomputation; "m ± s" cells to 4 decimals.
void aggregation_exactness(Outcome& o) {
  TempDir t("acc7");
  ExperimentConfig c;
  c.epochs = 3;
  c.repetitions = 4;
  c.learning_rates = {1e-3, 3e-4, 1e-4};
  c.master_seed = 7;
  const ExperimentResult r = run_experiment(c, cohort(t.path(), 20, 107));
  std::size_t rows = 0;
  for (const ResultTable& tab : {r.table, results_from_csv(results_to_csv(r.table))}) {
    for (const ResultRow& row : tab.rows) {
      double sum = 0.0;
      for (double a : row.rep_accuracies) sum += a;
      const double mean = sum / static_cast<double>(row.rep_accuracies.size());
      double ss = 0.0;
      for (double a : row.rep_accuracies) ss += (a - mean) * (a - mean);
      const double sd = std::sqrt(ss / static_cast<double>(row.rep_accuracies.size() - 1));
      o.check(row.acc_mean == mean, "stored mean differs from recomputation");
      o.check(row.acc_std == sd, "stored std differs from recomputation");
      ++rows;
    }
  }
  o.check(r.runs.size() == 12, "runs");
  for (std::size_t i = 0; i < r.runs.size(); ++i)
    o.check(r.table.rows[i / 4].rep_accuracies[i % 4] == r.runs[i].test_accuracy, "per-run accuracy stored");
  ResultTable reference;
  reference.rows.push_back({ModelKind::MODEL2, true, true, 1e-4, 0.9470, 0.0083, {}});
  reference.rows.push_back({ModelKind::MODEL1, std::nullopt, false, 1e-3, 0.7617, 0.0041, {}});
  const std::string text = render_results(reference);
  o.check(text.find("0.9470 ± 0.0083") != std::string::npos, "Model 2 cell format");
  o.check(text.find("0.7617 ± 0.0041") != std::string::npos, "Model 1 cell format");
  const std::string rendered = render_results(r.table);
  for (const ResultRow& row : r.table.rows) {
    char cell[64];
    std::snprintf(cell, sizeof cell, "%.4f ± %.4f", row.acc_mean, row.acc_std);
    o.check(rendered.find(cell) != std::string::npos, std::string("rendered cell ") + cell);
  }
  o.detail << ' ' << rows << " rows recomputed bit-exactly (in memory and via CSV)";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + NEUROENS_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

// 8. Two CLI runs with identical seeds give byte-identical outputs.
void determinism(Outcome& o) {
  TempDir t("acc8");
  std::vector<fs::path> roots;
  for (const char* name : {"a", "b"}) {
    const fs::path root = t / name;
    fs::create_directories(root);
    {
      std::ofstream f(root / "config.json");
      f << R"({"model": 2, "learning_rates": [0.001, 0.0001], "epochs": 3, "repetitions": 2, "master_seed": 17})";
    }
    const std::string r = "\"" + root.string() + "\"";
    int rc = run_cli("synth --n 12 --seed 9 --out " + r + "/cohort");
    rc |= run_cli("train --manifest " + r + "/cohort/manifest.csv --config " + r + "/config.json --out " + r +
                  "/results.csv --history " + r + "/history.csv --checkpoint-dir " + r + "/ck --jobs 2");
    rc |= run_cli("occlude --checkpoint " + r + "/ck/model2_lr0_rep0.nten --manifest " + r +
                  "/cohort/manifest.csv --out " + r + "/occ --patch 8,8,8 --stride 4,4,4 --jobs 2");
    rc |= run_cli("report --results " + r + "/results.csv --out " + r + "/table.txt");
    o.check(rc == 0, std::string("CLI pipeline failed in run ") + name);
    roots.push_back(root);
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(roots[0])) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), roots[0]);
    const fs::path other = roots[1] / rel;
    ++files;
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
      ++differing;
      o.check(false, "differs: " + rel.string());
    }
  }
  for (const char* must : {"results.csv", "occ/heatmap.json", "occ/slices/slice_0_000.csv", "table.txt"})
    o.check(fs::exists(roots[0] / must), std::string("missing ") + must);
  o.detail << ' ' << files << " files compared, " << differing << " differing";
}

// 9. Full-scale construction and one forward pass.
void shape_contract(Outcome& o) {
  nn::InferenceGuard guard;
  {
    const Dims3 d{91, 109, 91};
    auto m = build_model1(architecture_specs(ModelKind::MODEL1, d, true, 91), 92);
    m.set_training(false);
    o.check(m.fusion_width() == 12, "Model 1 fusion width 12");
    const Logits z = forward_model1(m, make_phantom(d, Label::PD, 0.5, 93, 2.0));
    const nn::Tensor raw = m.forward(to_tensor(make_phantom(d, Label::HC, 0.5, 94, 2.0)));
    o.check(raw.size() == 2, "Model 1 emits 2 logits");
    o.check(std::isfinite(z[0]) && std::isfinite(z[1]), "Model 1 logits finite");
  }
  {
    const Dims3 d{121, 145, 121};
    auto m = build_model2(architecture_specs(ModelKind::MODEL2, d, true, 95), 96);
    m.set_training(false);
    o.check(m.fusion_width() == 8, "Model 2 fusion width 8");
    const Volume gm = make_phantom(d, Label::PD, 0.5, 97, 1.5), wm = make_phantom(d, Label::HC, 0.5, 98, 1.5);
    const Logits z = forward_model2(m, gm, wm);
    const nn::Tensor raw = m.forward(to_tensor(gm), to_tensor(wm));
    o.check(raw.size() == 2, "Model 2 emits 2 logits");
    o.check(std::isfinite(z[0]) && std::isfinite(z[1]), "Model 2 logits finite");
  }
  o.detail << " 91x109x91 -> 2 logits (width 12), 121x145x121 pair -> 2 logits (width 8)";
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "protocol fidelity", 900, protocol_fidelity},
      {2, "synthetic end-to-end", 1200, synthetic_end_to_end},
      {3, "gradient correctness", 120, gradient_correctness},
      {4, "smoothing math", 600, smoothing_math},
      {5, "occlusion oracle", 600, occlusion_oracle},
      {6, "split hygiene", 600, split_hygiene},
      {7, "aggregation exactness", 600, aggregation_exactness},
      {8, "determinism", 600, determinism},
      {9, "shape contract", 1800, shape_contract},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double s = testing::seconds_since(t0);
    if (s > c.budget_s) o.check(false, "over time budget");
    failures += !o.pass;
    std::printf("[%s] criterion %d %s (%.1f s):%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, s,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
