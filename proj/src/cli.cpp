#include "neuroens/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "neuroens/ensemble.hpp"
#include "neuroens/manifest.hpp"
#include "neuroens/occlusion.hpp"
#include "neuroens/preprocess.hpp"
#include "neuroens/report.hpp"
#include "neuroens/synth.hpp"
#include "neuroens/trainer.hpp"
#include "neuroens/volume_io.hpp"

namespace neuroens {

namespace fs = std::filesystem;

namespace {

std::array<std::size_t, 3> triple(const std::string& s, const char* flag) {
  std::array<std::size_t, 3> out{};
  std::size_t i = 0, start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    const std::string tok = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (i == 3 || tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
      throw Error(std::string(flag) + " expects three comma-separated positive integers, got \"" + s + "\"");
    out[i++] = std::stoul(tok);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (i != 3) throw Error(std::string(flag) + " expects three comma-separated positive integers, got \"" + s + "\"");
  for (auto v : out)
    if (v == 0) throw Error(std::string(flag) + " values must be positive");
  return out;
}

Dims3 dims_of(const std::string& s, const char* flag) {
  const auto t = triple(s, flag);
  return {t[0], t[1], t[2]};
}

fs::path cache_path(const fs::path& input, const std::string& suffix) {
  const char* env = std::getenv("NEUROENS_CACHE_DIR");
  const fs::path dir = env && *env ? fs::path(env) : input.parent_path();
  fs::create_directories(dir);
  return dir / (input.stem().string() + suffix + ".json");
}

std::vector<Volume> subject_inputs(const Manifest& m, const std::string& id, const std::vector<Modality>& mods,
                                   bool smoothed) {
  std::vector<Volume> out;
  for (Modality mod : mods) {
    const SubjectRecord* r = m.find(id, mod, smoothed);
    if (!r) throw Error("subject " + id + " has no " + to_string(mod) + " record");
    out.push_back(load_volume(r->path));
  }
  return out;
}

bool checkpoint_smoothed(const LoadedEnsemble& e, std::optional<int> flag) {
  if (flag) return *flag != 0;
  auto it = e.metadata.find("smoothed");
  return it != e.metadata.end() && it->second == "1";
}

void flag01(CLI::Option* o) { o->check(CLI::IsMember({0, 1})); }

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ensemble CNN pipeline for PD/HC classification of brain volumes", "neuroens"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic PD/HC phantom cohort");
  std::size_t n_subjects = 20;
  std::string dims_s = "16,16,16";
  std::uint64_t seed = 0;
  double class_effect = 0.5;
  std::string out_path;
  synth->add_option("--n", n_subjects, "number of subjects (even)");
  synth->add_option("--dims", dims_s, "D,H,W");
  synth->add_option("--seed", seed);
  synth->add_option("--class-effect", class_effect)->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", out_path, "output directory")->required();

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "normalize, clamp, resample and smooth one volume");
  std::string in_path, shape_s;
  double fwhm = 8.0;
  bool no_smooth = false;
  prep->add_option("--in", in_path)->required();
  prep->add_option("--out", out_path, "output volume (default: cache directory)");
  prep->add_option("--shape", shape_s, "resample to D,H,W");
  prep->add_option("--fwhm", fwhm, "smoothing FWHM in mm");
  prep->add_flag("--no-smooth", no_smooth);

  // split-tissues
  auto* split = app.add_subcommand("split-tissues", "synthetic GM/WM split of a volume in [0,1]");
  std::string gm_out, wm_out;
  split->add_option("--in", in_path)->required();
  split->add_option("--seed", seed);
  split->add_option("--gm", gm_out, "GM output volume")->required();
  split->add_option("--wm", wm_out, "WM output volume")->required();

  // train
  auto* train = app.add_subcommand("train", "run the repeated train/test protocol");
  std::string manifest_path, config_path, lr_s, checkpoint_dir, history_path;
  std::optional<std::uint64_t> seed_opt;
  std::optional<int> model_opt, smoothed_opt, pretrained_opt, epochs_opt, reps_opt;
  std::optional<unsigned> jobs_opt;
  train->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  train->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "result table CSV")->required();
  train->add_option("--seed", seed_opt, "master seed");
  train->add_option("--jobs", jobs_opt);
  train->add_option("--model", model_opt)->check(CLI::IsMember({1, 2}));
  flag01(train->add_option("--smoothed", smoothed_opt));
  flag01(train->add_option("--pretrained", pretrained_opt));
  train->add_option("--lr", lr_s, "comma-separated learning rates");
  train->add_option("--epochs", epochs_opt);
  train->add_option("--repetitions", reps_opt);
  train->add_option("--checkpoint-dir", checkpoint_dir);
  train->add_option("--history", history_path, "per-epoch history CSV");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "accuracy of a checkpoint on a manifest");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  flag01(eval->add_option("--smoothed", smoothed_opt));
  eval->add_option("--out", out_path, "per-subject predictions CSV");

  // occlude
  auto* occ = app.add_subcommand("occlude", "occlusion relevance heatmaps");
  std::vector<std::string> subjects;
  std::string modality_s = "GM", target_s = "PD", patch_s = "10,10,10", stride_s = "5,5,5", atlas_path, names_path;
  double occ_value = 0.0;
  int axis = 0;
  bool per_subject = false, no_render = false;
  unsigned jobs = 1;
  occ->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  occ->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  occ->add_option("--out", out_path, "output directory")->required();
  occ->add_option("--subject", subjects, "subject id (repeatable; default all)");
  occ->add_option("--modality", modality_s, "WHOLE, GM or WM");
  occ->add_option("--target", target_s, "PD or HC");
  occ->add_option("--patch", patch_s);
  occ->add_option("--stride", stride_s);
  occ->add_option("--value", occ_value, "occlusion value");
  occ->add_option("--axis", axis)->check(CLI::IsMember({0, 1, 2}));
  occ->add_option("--atlas", atlas_path, "integer label volume")->check(CLI::ExistingFile);
  occ->add_option("--atlas-names", names_path, "label,region_name table")->check(CLI::ExistingFile);
  occ->add_option("--jobs", jobs)->check(CLI::PositiveNumber);
  occ->add_flag("--per-subject", per_subject, "also write each subject's map");
  occ->add_flag("--no-render", no_render, "skip slice images");
  flag01(occ->add_option("--smoothed", smoothed_opt));

  // report
  auto* rep = app.add_subcommand("report", "render a result table");
  std::string results_path;
  rep->add_option("--results", results_path)->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out_path, "write the rendered table here too");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (*synth) {
      CohortSpec spec;
      spec.n_subjects = n_subjects;
      spec.dims = dims_of(dims_s, "--dims");
      spec.class_effect = class_effect;
      spec.seed = seed;
      fs::create_directories(out_path);
      const Manifest m = generate_synthetic_cohort(spec, out_path);
      out << "wrote " << m.size() << " volumes for " << m.subject_count() << " subjects to " << out_path << '\n';
    } else if (*prep) {
      Volume v = clamp_artifacts(normalize_intensity(load_volume(in_path)));
      if (!shape_s.empty()) v = resample_to_shape(v, dims_of(shape_s, "--shape"));
      if (!no_smooth) v = smooth_gaussian(v, SmoothingSpec{fwhm});
      const fs::path dst = out_path.empty() ? cache_path(in_path, "_pre") : fs::path(out_path);
      save_volume(v, dst);
      out << dst.string() << '\n';
    } else if (*split) {
      auto [gm, wm] = split_tissues_synthetic(load_volume(in_path), seed);
      save_volume(gm, gm_out);
      save_volume(wm, wm_out);
    } else if (*train) {
      ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
      if (seed_opt) c.master_seed = *seed_opt;
      if (jobs_opt) c.jobs = *jobs_opt;
      if (model_opt) c.model_kind = *model_opt == 1 ? ModelKind::MODEL1 : ModelKind::MODEL2;
      if (smoothed_opt) c.use_smoothed = *smoothed_opt != 0;
      if (pretrained_opt) c.pretrained = *pretrained_opt != 0;
      if (epochs_opt) c.epochs = *epochs_opt;
      if (reps_opt) c.repetitions = *reps_opt;
      if (!checkpoint_dir.empty()) c.checkpoint_dir = checkpoint_dir;
      if (!lr_s.empty()) {
        c.learning_rates.clear();
        std::stringstream ss(lr_s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          try {
            c.learning_rates.push_back(std::stod(tok));
          } catch (const std::exception&) {
            throw Error("--lr: bad learning rate \"" + tok + "\"");
          }
        }
      }
      c.validate();
      const ExperimentResult r = run_experiment(c, load_manifest(manifest_path));
      save_results(r.table, out_path);
      if (!history_path.empty()) save_history(r.runs, history_path);
      out << render_results(r.table);
    } else if (*eval) {
      LoadedEnsemble e = load_ensemble(checkpoint);
      const bool smoothed = checkpoint_smoothed(e, smoothed_opt);
      const Dataset d = Dataset::load(load_manifest(manifest_path), e.model->kind(), smoothed);
      const std::vector<int> p = predict(*e.model, d);
      std::vector<int> y;
      for (const auto& s : d.samples()) y.push_back(class_index(s.label));
      const double acc = accuracy(p, y);
      if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw Error("cannot write " + out_path);
        f << "subject_id,label,predicted\n";
        for (std::size_t i = 0; i < p.size(); ++i)
          f << d.samples()[i].subject_id << ',' << to_string(d.samples()[i].label) << ','
            << to_string(label_from_index(p[i])) << '\n';
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", acc);
      out << "accuracy " << buf << " (" << d.size() << " subjects)\n";
    } else if (*occ) {
      LoadedEnsemble e = load_ensemble(checkpoint);
      const bool smoothed = checkpoint_smoothed(e, smoothed_opt);
      OcclusionConfig cfg;
      cfg.patch_size_vox = triple(patch_s, "--patch");
      cfg.stride_vox = triple(stride_s, "--stride");
      cfg.occlusion_value = occ_value;
      cfg.target_modality = parse_modality(modality_s);
      cfg.validate();
      const Label target = parse_label(target_s);
      if (atlas_path.empty() != names_path.empty()) throw Error("--atlas and --atlas-names go together");
      const Manifest m = load_manifest(manifest_path);
      if (subjects.empty()) subjects = m.subject_ids();
      const fs::path dir = out_path;
      fs::create_directories(dir);
      std::vector<RelevanceMap> maps;
      for (const auto& id : subjects) {
        maps.push_back(occlusion_heatmap(*e.model, subject_inputs(m, id, e.model->input_modalities(), smoothed),
                                         cfg, target, jobs));
        if (per_subject) save_volume(maps.back().values, dir / ("heatmap_" + id + ".json"));
      }
      const RelevanceMap mean = mean_relevance(maps);
      save_volume(mean.values, dir / "heatmap.json");
      export_heatmap(mean.values, axis, dir / "slices", !no_render);
      if (!atlas_path.empty()) {
        const auto rows = region_relevance(mean.values, load_atlas(atlas_path, names_path));
        save_region_relevance(rows, dir / "region_relevance.csv");
        for (const auto& [name, v] : rows) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%+.6f", v);
          out << buf << "  " << name << '\n';
        }
      }
      out << "heatmap over " << maps.size() << " subject(s) written to " << dir.string() << '\n';
    } else if (*rep) {
      const std::string text = render_results(load_results(results_path));
      out << text;
      if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw Error("cannot write " + out_path);
        f << text;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace neuroens
