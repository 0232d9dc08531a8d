#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neuroens/error.hpp"

namespace neuroens {

enum class Source { PPMI, IXI, SYNTH };
enum class Sex { M, F };

std::string to_string(Source s);
std::string to_string(Sex s);

struct SubjectRecord {
  std::string subject_id;
  Label label = Label::HC;
  Modality modality = Modality::WHOLE;
  bool smoothed = false;
  Source source = Source::SYNTH;
  double age_years = 0.0;
  Sex sex = Sex::M;
  std::filesystem::path path;
};

/// Ordered subject index. (subject_id, modality, smoothed) is unique.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<SubjectRecord> records);

  const std::vector<SubjectRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  /// Throws on a duplicate triple.
  void add(SubjectRecord r);

  /// Distinct subject ids in order of first appearance.
  std::vector<std::string> subject_ids() const;
  std::size_t subject_count() const { return subject_ids().size(); }

  /// Records of the listed subjects, preserving manifest order.
  Manifest subset(const std::vector<std::string>& subject_ids) const;

  const SubjectRecord* find(const std::string& subject_id, Modality m, bool smoothed) const;

  /// Checks every referenced file exists (relative paths resolved against base_dir)
  /// and rewrites paths to their resolved form.
  Manifest resolved(const std::filesystem::path& base_dir) const;

 private:
  std::vector<SubjectRecord> records_;
};

inline constexpr const char* kManifestHeader =
    "subject_id,label,modality,smoothed,source,age_years,sex,path";

/// Parses the comma-delimited manifest. An optional trailing `excluded` column
/// drops rows flagged 1. Relative paths are resolved against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct DemographicColumn {
  std::size_t subjects = 0;
  double age_mean = 0.0;
  double age_std = 0.0;  // sample std; 0 for a single subject
  std::size_t male = 0;
  std::size_t female = 0;
};

struct DemographicTable {
  DemographicColumn pd;
  DemographicColumn hc;
  DemographicColumn overall;
};

/// One entry per subject: age, sex and label come from the subject's first record.
DemographicTable summarize_demographics(const Manifest& m);

/// Text table in the layout of the cohort demographics table (PD | HC | Average).
std::string render_demographics(const DemographicTable& t);

}  // namespace neuroens
