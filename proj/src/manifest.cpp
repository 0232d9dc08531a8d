#include "neuroens/manifest.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace neuroens {

namespace fs = std::filesystem;

std::string to_string(Label l) { return l == Label::PD ? "PD" : "HC"; }

std::string to_string(Modality m) {
  switch (m) {
    case Modality::WHOLE: return "WHOLE";
    case Modality::GM: return "GM";
    case Modality::WM: return "WM";
  }
  return "";
}

std::string to_string(Source s) {
  switch (s) {
    case Source::PPMI: return "PPMI";
    case Source::IXI: return "IXI";
    case Source::SYNTH: return "SYNTH";
  }
  return "";
}

std::string to_string(Sex s) { return s == Sex::M ? "M" : "F"; }

Label parse_label(const std::string& token) {
  if (token == "PD") return Label::PD;
  if (token == "HC") return Label::HC;
  throw Error("unknown label \"" + token + "\"");
}

Modality parse_modality(const std::string& token) {
  if (token == "WHOLE") return Modality::WHOLE;
  if (token == "GM") return Modality::GM;
  if (token == "WM") return Modality::WM;
  throw Error("unknown modality \"" + token + "\"");
}

namespace {

Source parse_source(const std::string& token) {
  if (token == "PPMI") return Source::PPMI;
  if (token == "IXI") return Source::IXI;
  if (token == "SYNTH") return Source::SYNTH;
  throw Error("unknown source \"" + token + "\"");
}

Sex parse_sex(const std::string& token) {
  if (token == "M") return Sex::M;
  if (token == "F") return Sex::F;
  throw Error("unknown sex \"" + token + "\"");
}

bool parse_flag(const std::string& token, const char* column) {
  if (token == "0") return false;
  if (token == "1") return true;
  throw Error(std::string("invalid ") + column + " value \"" + token + "\" (expected 0 or 1)");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

using Key = std::tuple<std::string, Modality, bool>;

DemographicColumn summarize(const std::vector<const SubjectRecord*>& subjects) {
  DemographicColumn col;
  col.subjects = subjects.size();
  if (subjects.empty()) return col;
  double sum = 0.0;
  for (auto* s : subjects) {
    sum += s->age_years;
    (s->sex == Sex::M ? col.male : col.female)++;
  }
  col.age_mean = sum / static_cast<double>(subjects.size());
  if (subjects.size() > 1) {
    double ss = 0.0;
    for (auto* s : subjects) ss += (s->age_years - col.age_mean) * (s->age_years - col.age_mean);
    col.age_std = std::sqrt(ss / static_cast<double>(subjects.size() - 1));
  }
  return col;
}

// Mean to one decimal, spread to three significant figures: "62.0 ± 9.54".
std::string format_age(const DemographicColumn& c) {
  char mean[32], sd[32];
  std::snprintf(mean, sizeof mean, "%.1f", c.age_mean);
  int decimals = 2;
  if (c.age_std >= 100.0) decimals = 0;
  else if (c.age_std >= 10.0) decimals = 1;
  std::snprintf(sd, sizeof sd, "%.*f", decimals, c.age_std);
  return std::string(mean) + " ± " + sd;
}

}  // namespace

Manifest::Manifest(std::vector<SubjectRecord> records) {
  for (auto& r : records) add(std::move(r));
}

void Manifest::add(SubjectRecord r) {
  for (const auto& e : records_)
    if (e.subject_id == r.subject_id && e.modality == r.modality && e.smoothed == r.smoothed)
      throw Error("duplicate (subject_id, modality, smoothed) for subject " + r.subject_id);
  records_.push_back(std::move(r));
}

std::vector<std::string> Manifest::subject_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& r : records_)
    if (seen.insert(r.subject_id).second) ids.push_back(r.subject_id);
  return ids;
}

Manifest Manifest::subset(const std::vector<std::string>& subject_ids) const {
  const std::set<std::string> keep(subject_ids.begin(), subject_ids.end());
  Manifest out;
  for (const auto& r : records_)
    if (keep.count(r.subject_id)) out.records_.push_back(r);
  return out;
}

const SubjectRecord* Manifest::find(const std::string& subject_id, Modality m, bool smoothed) const {
  for (const auto& r : records_)
    if (r.subject_id == subject_id && r.modality == m && r.smoothed == smoothed) return &r;
  return nullptr;
}

Manifest Manifest::resolved(const fs::path& base_dir) const {
  Manifest out;
  for (auto r : records_) {
    if (r.path.is_relative()) r.path = base_dir / r.path;
    if (!fs::exists(r.path)) throw Error("manifest references missing file " + r.path.string());
    out.records_.push_back(std::move(r));
  }
  return out;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("empty manifest file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  const auto expected = split_csv_line(kManifestHeader);
  const bool has_excluded = header.size() == expected.size() + 1 && header.back() == "excluded";
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (i >= header.size() || header[i] != expected[i])
      throw Error("manifest header missing column \"" + expected[i] + "\"");
  if (header.size() != expected.size() && !has_excluded)
    throw Error("manifest header has unexpected columns");

  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error("manifest line " + std::to_string(lineno) + ": expected " +
                  std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    if (has_excluded && parse_flag(f[8], "excluded")) continue;
    SubjectRecord r;
    r.subject_id = f[0];
    if (r.subject_id.empty()) throw Error("manifest line " + std::to_string(lineno) + ": empty subject_id");
    r.label = parse_label(f[1]);
    r.modality = parse_modality(f[2]);
    r.smoothed = parse_flag(f[3], "smoothed");
    r.source = parse_source(f[4]);
    try {
      std::size_t used = 0;
      r.age_years = std::stod(f[5], &used);
      if (used != f[5].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error("manifest line " + std::to_string(lineno) + ": invalid age \"" + f[5] + "\"");
    }
    if (!(r.age_years >= 0.0)) throw Error("manifest line " + std::to_string(lineno) + ": negative age");
    r.sex = parse_sex(f[6]);
    r.path = f[7];
    if (r.path.is_relative()) r.path = path.parent_path() / r.path;
    m.add(std::move(r));
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << kManifestHeader << "\n";
  for (const auto& r : m.records()) {
    std::ostringstream age;
    age.precision(17);
    age << r.age_years;
    out << r.subject_id << ',' << to_string(r.label) << ',' << to_string(r.modality) << ','
        << (r.smoothed ? 1 : 0) << ',' << to_string(r.source) << ',' << age.str() << ','
        << to_string(r.sex) << ',' << r.path.generic_string() << "\n";
  }
  if (!out) throw Error("write failed for manifest " + path.string());
}

DemographicTable summarize_demographics(const Manifest& m) {
  if (m.empty()) throw Error("cannot summarize an empty manifest");
  std::vector<const SubjectRecord*> pd, hc, all;
  std::set<std::string> seen;
  for (const auto& r : m.records()) {
    if (!seen.insert(r.subject_id).second) continue;
    all.push_back(&r);
    (r.label == Label::PD ? pd : hc).push_back(&r);
  }
  return {summarize(pd), summarize(hc), summarize(all)};
}

std::string render_demographics(const DemographicTable& t) {
  auto sex = [](const DemographicColumn& c) {
    return std::to_string(c.male) + " / " + std::to_string(c.female);
  };
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-22s| %-16s| %-16s| %-16s\n", "", "PD", "HC", "Average");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-22s| %-17s| %-17s| %-17s\n", "Age(Years)", format_age(t.pd).c_str(),
                format_age(t.hc).c_str(), format_age(t.overall).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-22s| %-16s| %-16s| %-16s\n", "Sex (Male / Female)", sex(t.pd).c_str(),
                sex(t.hc).c_str(), sex(t.overall).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-22s| %-16zu| %-16zu| %-16zu\n", "Subjects", t.pd.subjects, t.hc.subjects,
                t.overall.subjects);
  out += buf;
  return out;
}

}  // namespace neuroens
