#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "neuroens/ensemble.hpp"
#include "neuroens/manifest.hpp"
#include "neuroens/volume.hpp"

namespace neuroens {

enum class ModelSelection { FINAL_EPOCH, BEST_VALIDATION };

struct ExperimentConfig {
  ModelKind model_kind = ModelKind::MODEL2;
  bool use_smoothed = false;
  bool pretrained = false;
  std::vector<double> learning_rates{1e-3, 1e-4};
  int epochs = 25;
  int repetitions = 5;
  double test_fraction = 0.2;
  double val_fraction = 0.2;
  std::size_t batch_size = 8;
  std::uint64_t master_seed = 0;
  ModelSelection model_selection = ModelSelection::FINAL_EPOCH;
  bool stratified = false;
  /// Full-size backbone topologies instead of the toy presets.
  bool full_scale = false;
  /// Directory of per-family weight files (`resnet.nten`, ...), used when pretrained.
  std::filesystem::path pretrained_dir;
  /// When non-empty, every trained model is saved there.
  std::filesystem::path checkpoint_dir;
  /// Worker threads over (learning rate, repetition) runs.
  unsigned jobs = 1;

  void validate() const;
};

/// JSON object whose keys mirror the fields above (model is 1 or 2).
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& c);

/// Subject-level split: the second manifest gets round(fraction * N) subjects.
std::pair<Manifest, Manifest> split_train_test(const Manifest& m, double test_fraction, std::uint64_t seed,
                                               bool stratified = false);
/// Same rule for the per-epoch fit/validation split.
std::pair<Manifest, Manifest> split_validation(const Manifest& train, double val_fraction, std::uint64_t epoch_seed,
                                               bool stratified = false);

std::uint64_t repetition_seed(std::uint64_t master_seed, std::size_t lr_index, std::size_t repetition);
std::uint64_t epoch_seed(std::uint64_t rep_seed, std::size_t epoch);

/// -log softmax(logits)[label].
double cross_entropy(const Logits& logits, int label);
/// Mean cross-entropy over a (N, 2, 1, 1) batch; writes dL/dlogits when grad is given.
double cross_entropy_batch(const nn::Tensor& logits, std::span<const int> labels, nn::Tensor* grad = nullptr);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opt = {});

class Adam {
 public:
  /// Non-trainable entries (batch-norm buffers) are ignored.
  explicit Adam(const std::vector<nn::NamedParameter>& params, AdamOptions opt = {});
  void step(double lr);

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<AdamState> states_;
  AdamOptions opt_;
};

struct Sample {
  std::string subject_id;
  Label label = Label::HC;
  /// One volume per model input slot.
  std::vector<Volume> inputs;
};

/// Volumes loaded for one model kind, one sample per subject.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Manifest manifest, std::vector<Sample> samples);

  /// WHOLE for Model 1, GM and WM for Model 2, filtered by the smoothed flag.
  static Dataset load(const Manifest& m, ModelKind kind, bool smoothed);

  const Manifest& manifest() const { return manifest_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  Dims3 dims() const;

  /// Samples of the subjects present in `m`, in the order of `m`.
  Dataset subset(const Manifest& m) const;

 private:
  Manifest manifest_;
  std::vector<Sample> samples_;
};

struct EpochRecord {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};
using History = std::vector<EpochRecord>;

struct TrainOptions {
  int epochs = 25;
  std::size_t batch_size = 8;
  double val_fraction = 0.2;
  double learning_rate = 1e-3;
  ModelSelection model_selection = ModelSelection::FINAL_EPOCH;
  bool stratified = false;
};

TrainOptions train_options(const ExperimentConfig& c, double learning_rate);

/// Minibatch Adam on cross-entropy, fit/val re-split every epoch.
History train_once(Ensemble& model, const Dataset& train, const TrainOptions& opt, std::uint64_t rep_seed);

/// Class-0/1 predictions, argmax of the logits (ties go to class 0).
std::vector<int> predict(Ensemble& model, const Dataset& data, std::size_t batch_size = 8);
double accuracy(std::span<const int> predicted, std::span<const int> truth);
double evaluate(Ensemble& model, const Dataset& test, std::size_t batch_size = 8);

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(std::span<const double> xs);

struct ResultRow {
  ModelKind model = ModelKind::MODEL2;
  /// Empty for Model 1 (rendered N/A).
  std::optional<bool> smoothed;
  bool pretrained = false;
  double learning_rate = 0.0;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  std::vector<double> rep_accuracies;
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

struct RunLog {
  std::size_t lr_index = 0;
  double learning_rate = 0.0;
  std::size_t repetition = 0;
  std::uint64_t rep_seed = 0;
  std::vector<std::string> test_subjects;
  History history;
  double test_accuracy = 0.0;
};

struct ExperimentResult {
  ResultTable table;
  /// Ordered by learning rate, then repetition.
  std::vector<RunLog> runs;
};

/// Fresh initialization for one run: toy or full-scale specs seeded from rep_seed,
/// with pretrained weights attached when configured.
std::unique_ptr<Ensemble> make_model(const ExperimentConfig& c, const Dims3& dims, std::uint64_t rep_seed);

/// Every learning rate x repetition: fresh split, fresh model, train, evaluate.
ExperimentResult run_experiment(const ExperimentConfig& config, const Manifest& manifest);

}  // namespace neuroens
