#include "neuroens/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace neuroens {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string full(double v) { return fmt("%.17g", v); }

double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error("bad " + what + " \"" + s + "\"");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

/// Display width of UTF-8 text.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w - width(s), ' '); }

}  // namespace

void validate(const ResultTable& t) {
  for (const auto& r : t.rows)
    if (r.model == ModelKind::MODEL1 && r.smoothed.has_value())
      throw Error("Model 1 rows carry smoothed = N/A");
}

std::string results_to_csv(const ResultTable& t) {
  validate(t);
  std::ostringstream out;
  out << kResultHeader << '\n';
  for (const auto& r : t.rows) {
    out << to_string(r.model) << ',' << (r.smoothed ? (*r.smoothed ? "1" : "0") : "N/A") << ','
        << (r.pretrained ? 1 : 0) << ',' << full(r.learning_rate) << ',' << full(r.acc_mean) << ','
        << full(r.acc_std) << ',';
    for (std::size_t i = 0; i < r.rep_accuracies.size(); ++i) out << (i ? ";" : "") << full(r.rep_accuracies[i]);
    out << '\n';
  }
  return out.str();
}

ResultTable results_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kResultHeader)
    throw Error(std::string("result table: expected header ") + kResultHeader);
  ResultTable t;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 7) throw Error("result table line " + std::to_string(row) + ": expected 7 fields");
    ResultRow r;
    r.model = parse_model_kind(c[0]);
    if (c[1] == "1") r.smoothed = true;
    else if (c[1] == "0") r.smoothed = false;
    else if (c[1] != "N/A") throw Error("result table line " + std::to_string(row) + ": bad smoothed flag");
    if (c[2] != "0" && c[2] != "1") throw Error("result table line " + std::to_string(row) + ": bad pretrained flag");
    r.pretrained = c[2] == "1";
    r.learning_rate = parse_real(c[3], "learning_rate");
    r.acc_mean = parse_real(c[4], "acc_mean");
    r.acc_std = parse_real(c[5], "acc_std");
    if (!c[6].empty())
      for (const auto& a : split(c[6], ';')) r.rep_accuracies.push_back(parse_real(a, "accuracy"));
    t.rows.push_back(std::move(r));
  }
  validate(t);
  return t;
}

void save_results(const ResultTable& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << results_to_csv(t);
  if (!out) throw Error("write failed: " + path.string());
}

ResultTable load_results(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return results_from_csv(ss.str());
}

void save_history(const std::vector<RunLog>& runs, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "lr_index,learning_rate,repetition,epoch,train_loss,train_accuracy,val_accuracy\n";
  for (const auto& r : runs)
    for (std::size_t e = 0; e < r.history.size(); ++e)
      out << r.lr_index << ',' << full(r.learning_rate) << ',' << r.repetition << ',' << e << ','
          << full(r.history[e].train_loss) << ',' << full(r.history[e].train_accuracy) << ','
          << full(r.history[e].val_accuracy) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

std::string render_results(const ResultTable& t) {
  if (t.rows.empty()) throw Error("cannot render an empty result table");
  validate(t);
  std::vector<std::vector<std::string>> cells = {
      {"Model", "Use Smoothed Scan", "Pre Trained", "Learning Rate", "Accuracy"}};
  for (const auto& r : t.rows)
    cells.push_back({r.model == ModelKind::MODEL1 ? "Model 1" : "Model 2",
                     r.smoothed ? (*r.smoothed ? "Yes" : "No") : "N/A", r.pretrained ? "Yes" : "No",
                     fmt("%g", r.learning_rate), fmt("%.4f", r.acc_mean) + " ± " + fmt("%.4f", r.acc_std)});
  std::vector<std::size_t> w(5, 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < 5; ++i) w[i] = std::max(w[i], width(row[i]));
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < 5; ++i) out << (i ? " | " : "") << (i < 4 ? pad(row[i], w[i]) : row[i]);
    out << '\n';
  };
  emit(cells[0]);
  for (std::size_t i = 0; i < 5; ++i) out << (i ? "-+-" : "") << std::string(w[i], '-');
  out << '\n';
  for (std::size_t r = 1; r < cells.size(); ++r) emit(cells[r]);
  return out.str();
}

ResultTable parse_rendered(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  ResultTable t;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> c;
    std::size_t start = 0;
    for (;;) {
      const auto bar = line.find(" | ", start);
      c.push_back(trim(line.substr(start, bar == std::string::npos ? std::string::npos : bar - start)));
      if (bar == std::string::npos) break;
      start = bar + 3;
    }
    if (c.size() != 5) throw Error("rendered table: expected 5 columns in \"" + line + "\"");
    ResultRow r;
    if (c[0] == "Model 1") r.model = ModelKind::MODEL1;
    else if (c[0] == "Model 2") r.model = ModelKind::MODEL2;
    else throw Error("rendered table: bad model \"" + c[0] + "\"");
    if (c[1] != "N/A") r.smoothed = c[1] == "Yes";
    r.pretrained = c[2] == "Yes";
    r.learning_rate = parse_real(c[3], "learning rate");
    const auto pm = c[4].find(" ± ");
    if (pm == std::string::npos) throw Error("rendered table: bad accuracy \"" + c[4] + "\"");
    r.acc_mean = parse_real(c[4].substr(0, pm), "accuracy");
    r.acc_std = parse_real(c[4].substr(pm + std::string(" ± ").size()), "accuracy std");
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace neuroens
