#include <gtest/gtest.h>

#include <fstream>
#include <optional>
#include <sstream>

#include "neuroens/cli.hpp"
#include "neuroens/manifest.hpp"
#include "neuroens/report.hpp"
#include "neuroens/volume_io.hpp"
#include "test_support.hpp"

using namespace neuroens;
using neuroens::testing::TempDir;

namespace {

ResultTable sample_table() {
  ResultTable t;
  t.rows.push_back({ModelKind::MODEL1, std::nullopt, true, 1e-3, 0.947, 0.0083, {0.94, 0.95, 0.96}});
  t.rows.push_back({ModelKind::MODEL2, false, false, 1e-4, 2.0 / 3.0, 0.0, {2.0 / 3.0}});
  t.rows.push_back({ModelKind::MODEL2, true, true, 0.1 / 3.0, 0.5, 1.0 / 7.0, {0.1, 0.2}});
  return t;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream o, e;
  const int c = cli_dispatch(args, o, e);
  return {c, o.str(), e.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Render, AccuracyCellAndColumns) {
  const std::string s = render_results(sample_table());
  for (const char* col : {"Model", "Use Smoothed Scan", "Pre Trained", "Learning Rate", "Accuracy"})
    EXPECT_NE(s.substr(0, s.find('\n')).find(col), std::string::npos) << s;
  EXPECT_LT(s.find("Use Smoothed Scan"), s.find("Pre Trained"));
  EXPECT_LT(s.find("Learning Rate"), s.find("Accuracy"));
  EXPECT_NE(s.find("0.9470 ± 0.0083"), std::string::npos);
  EXPECT_NE(s.find("0.6667 ± 0.0000"), std::string::npos);
  std::istringstream in(s);
  std::string header, rule, row1, row2;
  std::getline(in, header);
  std::getline(in, rule);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(row1.find("Model 1"), 0u);
  EXPECT_NE(row1.find("N/A"), std::string::npos);
  EXPECT_NE(row1.find("Yes"), std::string::npos);
  EXPECT_NE(row2.find("No"), std::string::npos);
  EXPECT_NE(row2.find("0.0001"), std::string::npos);
}

TEST(Render, ReferenceResultCells) {
  struct Cell {
    ModelKind model;
    std::optional<bool> smoothed;
    bool pretrained;
    double lr, mean, sd;
    const char* text;
  };
  const std::vector<Cell> cells = {
      {ModelKind::MODEL1, std::nullopt, false, 1e-3, 0.7617, 0.0041, "0.7617 ± 0.0041"},
      {ModelKind::MODEL1, std::nullopt, false, 1e-4, 0.7459, 0.0042, "0.7459 ± 0.0042"},
      {ModelKind::MODEL1, std::nullopt, true, 1e-3, 0.6800, 0.0113, "0.6800 ± 0.0113"},
      {ModelKind::MODEL1, std::nullopt, true, 1e-4, 0.6613, 0.0311, "0.6613 ± 0.0311"},
      {ModelKind::MODEL2, false, false, 1e-3, 0.5487, 0.0002, "0.5487 ± 0.0002"},
      {ModelKind::MODEL2, false, false, 1e-4, 0.6847, 0.0093, "0.6847 ± 0.0093"},
      {ModelKind::MODEL2, false, true, 1e-3, 0.9231, 0.0258, "0.9231 ± 0.0258"},
      {ModelKind::MODEL2, false, true, 1e-4, 0.9366, 0.0170, "0.9366 ± 0.0170"},
      {ModelKind::MODEL2, true, false, 1e-3, 0.5410, 0.0106, "0.5410 ± 0.0106"},
      {ModelKind::MODEL2, true, false, 1e-4, 0.7276, 0.0476, "0.7276 ± 0.0476"},
      {ModelKind::MODEL2, true, true, 1e-3, 0.9291, 0.0170, "0.9291 ± 0.0170"},
      {ModelKind::MODEL2, true, true, 1e-4, 0.9470, 0.0083, "0.9470 ± 0.0083"},
  };
  ResultTable t;
  for (const auto& c : cells) t.rows.push_back({c.model, c.smoothed, c.pretrained, c.lr, c.mean, c.sd, {}});
  std::istringstream in(render_results(t));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  for (const auto& c : cells) {
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_NE(line.find(c.text), std::string::npos) << line;
    EXPECT_EQ(line.find("N/A") != std::string::npos, c.model == ModelKind::MODEL1) << line;
  }
  const ResultTable back = parse_rendered(render_results(t));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(back.rows[i].acc_mean, cells[i].mean);
    EXPECT_EQ(back.rows[i].acc_std, cells[i].sd);
  }
}

TEST(Render, EmptyAndInvalidTables) {
  EXPECT_THROW(render_results(ResultTable{}), Error);
  ResultTable t = sample_table();
  t.rows[0].smoothed = true;
  EXPECT_THROW(validate(t), Error);
  EXPECT_THROW(render_results(t), Error);
}

TEST(Render, ParseRenderedRecoversPrintedValues) {
  const ResultTable t = sample_table();
  const ResultTable p = parse_rendered(render_results(t));
  ASSERT_EQ(p.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(p.rows[i].model, t.rows[i].model);
    EXPECT_EQ(p.rows[i].smoothed, t.rows[i].smoothed);
    EXPECT_EQ(p.rows[i].pretrained, t.rows[i].pretrained);
    EXPECT_NEAR(p.rows[i].learning_rate, t.rows[i].learning_rate, 1e-6 * t.rows[i].learning_rate);
    EXPECT_NEAR(p.rows[i].acc_mean, t.rows[i].acc_mean, 5e-5);
    EXPECT_NEAR(p.rows[i].acc_std, t.rows[i].acc_std, 5e-5);
  }
}

TEST(ResultsCsv, ExactRoundTrip) {
  const ResultTable t = sample_table();
  const std::string csv = results_to_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kResultHeader);
  const ResultTable back = results_from_csv(csv);
  ASSERT_EQ(back.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.rows[i].model, t.rows[i].model);
    EXPECT_EQ(back.rows[i].smoothed, t.rows[i].smoothed);
    EXPECT_EQ(back.rows[i].pretrained, t.rows[i].pretrained);
    EXPECT_EQ(back.rows[i].learning_rate, t.rows[i].learning_rate);
    EXPECT_EQ(back.rows[i].acc_mean, t.rows[i].acc_mean);
    EXPECT_EQ(back.rows[i].acc_std, t.rows[i].acc_std);
    EXPECT_EQ(back.rows[i].rep_accuracies, t.rows[i].rep_accuracies);
  }
  EXPECT_EQ(results_to_csv(back), csv);
  EXPECT_THROW(results_from_csv("model,smoothed\nMODEL2,0\n"), Error);
  EXPECT_THROW(results_from_csv(std::string(kResultHeader) + "\nMODEL3,0,0,0.1,0.5,0,\n"), Error);
}

TEST(ResultsCsv, FileRoundTripAndHistory) {
  TempDir t;
  save_results(sample_table(), t / "r.csv");
  EXPECT_EQ(results_to_csv(load_results(t / "r.csv")), results_to_csv(sample_table()));
  RunLog run;
  run.lr_index = 1;
  run.learning_rate = 1e-4;
  run.repetition = 2;
  run.history = {{0.7, 0.5, 0.25}, {0.5, 0.75, 0.5}};
  save_history({run}, t / "h.csv");
  std::istringstream in(slurp(t / "h.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "lr_index,learning_rate,repetition,epoch,train_loss,train_accuracy,val_accuracy");
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 2);
}

TEST(Cli, UnknownSubcommandAndMissingArguments) {
  const CliRun a = cli({"frobnicate"});
  EXPECT_NE(a.code, 0);
  EXPECT_NE(a.err.find("synth"), std::string::npos);
  EXPECT_NE(cli({}).code, 0);
  EXPECT_NE(cli({"train"}).code, 0);
  EXPECT_NE(cli({"train", "--manifest", "/nonexistent.csv", "--out", "x.csv"}).code, 0);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, SynthThenPreprocessAndSplit) {
  TempDir t;
  const CliRun s = cli({"synth", "--n", "4", "--dims", "8,10,12", "--seed", "3", "--out", (t / "c").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  const Manifest m = load_manifest(t / "c" / "manifest.csv");
  EXPECT_EQ(m.subject_count(), 4u);
  const std::string first = m.records().front().path.string();
  const CliRun p = cli({"preprocess", "--in", first, "--out", (t / "p.json").string(), "--shape", "6,6,6"});
  ASSERT_EQ(p.code, 0) << p.err;
  const Volume v = load_volume(t / "p.json");
  EXPECT_EQ(v.dims(), (Dims3{6, 6, 6}));
  const CliRun q = cli({"split-tissues", "--in", (t / "p.json").string(), "--gm", (t / "gm.json").string(), "--wm",
                     (t / "wm.json").string()});
  ASSERT_EQ(q.code, 0) << q.err;
  EXPECT_TRUE(std::filesystem::exists(t / "wm.json"));
  EXPECT_NE(cli({"synth", "--n", "3", "--out", (t / "odd").string()}).code, 0);
}

TEST(Cli, TrainEvaluateOccludeReport) {
  TempDir t;
  ASSERT_EQ(cli({"synth", "--n", "10", "--seed", "5", "--out", (t / "c").string()}).code, 0);
  const std::string manifest = (t / "c" / "manifest.csv").string();
  const CliRun tr = cli({"train", "--manifest", manifest, "--out", (t / "r.csv").string(), "--epochs", "2",
                      "--repetitions", "2", "--lr", "0.001", "--seed", "1", "--checkpoint-dir",
                      (t / "ck").string(), "--history", (t / "h.csv").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("Model 2"), std::string::npos);
  EXPECT_EQ(load_results(t / "r.csv").rows.size(), 1u);
  const auto ck = t / "ck" / "model2_lr0_rep1.nten";
  ASSERT_TRUE(std::filesystem::exists(ck));

  const CliRun ev = cli({"evaluate", "--checkpoint", ck.string(), "--manifest", manifest, "--out",
                      (t / "pred.csv").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("(10 subjects)"), std::string::npos);

  const CliRun oc = cli({"occlude", "--checkpoint", ck.string(), "--manifest", manifest, "--out", (t / "o").string(),
                      "--subject", "SYN0001", "--patch", "8,8,8", "--stride", "8,8,8", "--no-render"});
  ASSERT_EQ(oc.code, 0) << oc.err;
  EXPECT_EQ(load_volume(t / "o" / "heatmap.json").dims(), (Dims3{16, 16, 16}));
  EXPECT_TRUE(std::filesystem::exists(t / "o" / "slices" / "slice_0_000.csv"));

  const CliRun rp = cli({"report", "--results", (t / "r.csv").string(), "--out", (t / "table.txt").string()});
  ASSERT_EQ(rp.code, 0) << rp.err;
  EXPECT_EQ(rp.out, render_results(load_results(t / "r.csv")));
  EXPECT_EQ(slurp(t / "table.txt"), rp.out);
}
