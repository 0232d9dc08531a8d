#include "neuroens/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "neuroens/rng.hpp"
#include "neuroens/volume_io.hpp"

namespace neuroens {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test_fraction must lie in (0,1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw Error("val_fraction must lie in (0,1)");
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (repetitions < 1) throw Error("repetitions must be >= 1");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (learning_rates.empty()) throw Error("at least one learning rate required");
  for (double lr : learning_rates)
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("learning rates must be positive");
  if (pretrained && pretrained_dir.empty()) throw Error("pretrained runs need pretrained_dir");
  if (jobs < 1) throw Error("jobs must be >= 1");
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw Error("config: expected a JSON object");
  static const std::vector<std::string> known = {
      "model",      "use_smoothed", "pretrained",      "learning_rates", "epochs",         "repetitions",
      "test_fraction", "val_fraction", "batch_size",   "master_seed",    "model_selection", "stratified",
      "full_scale", "pretrained_dir", "checkpoint_dir", "jobs"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw Error("config: unknown key \"" + it.key() + "\"");
  ExperimentConfig c;
  try {
    if (j.contains("model")) {
      const auto& v = j["model"];
      c.model_kind = parse_model_kind(v.is_number() ? std::to_string(v.get<int>()) : v.get<std::string>());
    }
    if (j.contains("use_smoothed")) c.use_smoothed = j["use_smoothed"].get<bool>();
    if (j.contains("pretrained")) c.pretrained = j["pretrained"].get<bool>();
    if (j.contains("learning_rates")) c.learning_rates = j["learning_rates"].get<std::vector<double>>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("repetitions")) c.repetitions = j["repetitions"].get<int>();
    if (j.contains("test_fraction")) c.test_fraction = j["test_fraction"].get<double>();
    if (j.contains("val_fraction")) c.val_fraction = j["val_fraction"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("master_seed")) c.master_seed = j["master_seed"].get<std::uint64_t>();
    if (j.contains("model_selection")) {
      const auto s = j["model_selection"].get<std::string>();
      if (s == "final_epoch") c.model_selection = ModelSelection::FINAL_EPOCH;
      else if (s == "best_validation") c.model_selection = ModelSelection::BEST_VALIDATION;
      else throw Error("config: model_selection must be final_epoch or best_validation");
    }
    if (j.contains("stratified")) c.stratified = j["stratified"].get<bool>();
    if (j.contains("full_scale")) c.full_scale = j["full_scale"].get<bool>();
    if (j.contains("pretrained_dir")) c.pretrained_dir = j["pretrained_dir"].get<std::string>();
    if (j.contains("checkpoint_dir")) c.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
    if (j.contains("jobs")) c.jobs = j["jobs"].get<unsigned>();
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = config_from_json(ss.str());
  if (!c.pretrained_dir.empty() && c.pretrained_dir.is_relative())
    c.pretrained_dir = path.parent_path() / c.pretrained_dir;
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j = {{"model", c.model_kind == ModelKind::MODEL1 ? 1 : 2},
            {"use_smoothed", c.use_smoothed},
            {"pretrained", c.pretrained},
            {"learning_rates", c.learning_rates},
            {"epochs", c.epochs},
            {"repetitions", c.repetitions},
            {"test_fraction", c.test_fraction},
            {"val_fraction", c.val_fraction},
            {"batch_size", c.batch_size},
            {"master_seed", c.master_seed},
            {"model_selection",
             c.model_selection == ModelSelection::FINAL_EPOCH ? "final_epoch" : "best_validation"},
            {"stratified", c.stratified},
            {"full_scale", c.full_scale},
            {"jobs", c.jobs}};
  if (!c.pretrained_dir.empty()) j["pretrained_dir"] = c.pretrained_dir.string();
  if (!c.checkpoint_dir.empty()) j["checkpoint_dir"] = c.checkpoint_dir.string();
  return j.dump(2);
}

namespace {

std::size_t split_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

std::pair<Manifest, Manifest> subject_split(const Manifest& m, double fraction, std::uint64_t seed,
                                            bool stratified) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split fraction must lie in (0,1)");
  if (m.empty()) throw Error("cannot split an empty manifest");
  std::vector<std::string> ids = m.subject_ids();
  Rng rng(seed);
  std::vector<std::string> held, kept;
  if (!stratified) {
    rng.shuffle(ids);
    const std::size_t k = split_count(fraction, ids.size());
    held.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    kept.assign(ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
  } else {
    std::map<std::string, Label> label_of;
    for (const auto& r : m.records()) label_of.emplace(r.subject_id, r.label);
    for (Label l : {Label::PD, Label::HC}) {
      std::vector<std::string> group;
      for (const auto& id : ids)
        if (label_of[id] == l) group.push_back(id);
      rng.shuffle(group);
      const std::size_t k = split_count(fraction, group.size());
      held.insert(held.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(k));
      kept.insert(kept.end(), group.begin() + static_cast<std::ptrdiff_t>(k), group.end());
    }
  }
  return {m.subset(kept), m.subset(held)};
}

}  // namespace

std::pair<Manifest, Manifest> split_train_test(const Manifest& m, double test_fraction, std::uint64_t seed,
                                               bool stratified) {
  return subject_split(m, test_fraction, derive_seed(seed, "train-test"), stratified);
}

std::pair<Manifest, Manifest> split_validation(const Manifest& train, double val_fraction,
                                               std::uint64_t epoch_seed, bool stratified) {
  return subject_split(train, val_fraction, derive_seed(epoch_seed, "fit-val"), stratified);
}

std::uint64_t repetition_seed(std::uint64_t master_seed, std::size_t lr_index, std::size_t repetition) {
  return derive_seed({master_seed, static_cast<std::uint64_t>(lr_index), static_cast<std::uint64_t>(repetition)});
}

std::uint64_t epoch_seed(std::uint64_t rep_seed, std::size_t epoch) {
  return derive_seed({rep_seed, static_cast<std::uint64_t>(epoch)});
}

double cross_entropy(const Logits& z, int label) {
  if (label != 0 && label != 1) throw Error("label must be 0 or 1");
  const double m = std::max(z[0], z[1]);
  const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
  return lse - z[static_cast<std::size_t>(label)];
}

double cross_entropy_batch(const nn::Tensor& logits, std::span<const int> labels, nn::Tensor* grad) {
  const std::size_t n = logits.n();
  if (logits.size() != 2 * n || labels.size() != n) throw Error("cross_entropy_batch: shape mismatch");
  if (grad) *grad = nn::Tensor(logits.shape(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Logits z{logits[2 * i], logits[2 * i + 1]};
    total += cross_entropy(z, labels[i]);
    if (grad) {
      const Probabilities p = predict_proba(z);
      for (std::size_t k = 0; k < 2; ++k)
        (*grad)[2 * i + k] = (p[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& s, double lr,
               const AdamOptions& opt) {
  if (params.size() != grads.size()) throw Error("adam_step: parameter/gradient shape mismatch");
  if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
  if (s.m.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  if (s.m.size() != params.size()) throw Error("adam_step: state shape mismatch");
  ++s.t;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = opt.beta1 * s.m[i] + (1.0 - opt.beta1) * g;
    s.v[i] = opt.beta2 * s.v[i] + (1.0 - opt.beta2) * g * g;
    params[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + opt.eps);
  }
}

Adam::Adam(const std::vector<nn::NamedParameter>& params, AdamOptions opt) : opt_(opt) {
  for (const auto& p : params)
    if (p.param->trainable) params_.push_back(p.param);
  states_.resize(params_.size());
}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i];
    adam_step(p.value.values(), p.ensure_grad().values(), states_[i], lr, opt_);
  }
}

Dataset::Dataset(Manifest manifest, std::vector<Sample> samples)
    : manifest_(std::move(manifest)), samples_(std::move(samples)) {}

Dataset Dataset::load(const Manifest& m, ModelKind kind, bool smoothed) {
  const std::vector<Modality> mods =
      kind == ModelKind::MODEL1 ? std::vector<Modality>{Modality::WHOLE} : std::vector<Modality>{Modality::GM, Modality::WM};
  std::vector<Sample> samples;
  std::vector<SubjectRecord> kept;
  for (const auto& id : m.subject_ids()) {
    Sample s;
    s.subject_id = id;
    for (Modality mod : mods) {
      const SubjectRecord* r = m.find(id, mod, smoothed);
      if (!r)
        throw Error("subject " + id + " has no " + to_string(mod) + (smoothed ? " smoothed" : " unsmoothed") +
                    " record");
      s.label = r->label;
      s.inputs.push_back(load_volume(r->path));
      kept.push_back(*r);
    }
    if (s.inputs.size() == 2 && !(s.inputs[0].dims() == s.inputs[1].dims()))
      throw Error("subject " + id + ": gm/wm dimension mismatch");
    if (!samples.empty() && !(samples.front().inputs[0].dims() == s.inputs[0].dims()))
      throw Error("subject " + id + ": volume dims " + to_string(s.inputs[0].dims()) + " differ from " +
                  to_string(samples.front().inputs[0].dims()));
    samples.push_back(std::move(s));
  }
  return Dataset(Manifest(std::move(kept)), std::move(samples));
}

Dims3 Dataset::dims() const {
  if (samples_.empty()) throw Error("empty dataset");
  return samples_.front().inputs.front().dims();
}

Dataset Dataset::subset(const Manifest& m) const {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples_.size(); ++i) index.emplace(samples_[i].subject_id, i);
  std::vector<Sample> out;
  for (const auto& id : m.subject_ids()) {
    auto it = index.find(id);
    if (it == index.end()) throw Error("subject " + id + " is not in the dataset");
    out.push_back(samples_[it->second]);
  }
  return Dataset(manifest_.subset(m.subject_ids()), std::move(out));
}

namespace {

std::vector<nn::Tensor> batch_inputs(const Dataset& d, const std::vector<std::size_t>& idx) {
  const std::size_t slots = d.samples().front().inputs.size();
  std::vector<nn::Tensor> out;
  for (std::size_t s = 0; s < slots; ++s) {
    std::vector<const Volume*> vols;
    for (std::size_t i : idx) vols.push_back(&d.samples()[i].inputs[s]);
    out.push_back(stack_volumes(vols));
  }
  return out;
}

std::vector<int> truth(const Dataset& d) {
  std::vector<int> y;
  for (const auto& s : d.samples()) y.push_back(class_index(s.label));
  return y;
}

}  // namespace

TrainOptions train_options(const ExperimentConfig& c, double lr) {
  TrainOptions o;
  o.epochs = c.epochs;
  o.batch_size = c.batch_size;
  o.val_fraction = c.val_fraction;
  o.learning_rate = lr;
  o.model_selection = c.model_selection;
  o.stratified = c.stratified;
  return o;
}

History train_once(Ensemble& model, const Dataset& train, const TrainOptions& opt, std::uint64_t rep_seed) {
  if (train.empty()) throw Error("train_once: empty training set");
  Adam adam(model.parameters());
  History history;
  double best_val = -1.0;
  std::vector<nn::Tensor> best;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const std::uint64_t es = epoch_seed(rep_seed, static_cast<std::size_t>(epoch));
    auto [fit_m, val_m] = split_validation(train.manifest(), opt.val_fraction, es, opt.stratified);
    const Dataset fit = train.subset(fit_m);
    if (fit.empty()) throw Error("train_once: empty fit split at epoch " + std::to_string(epoch));
    const Dataset val = train.subset(val_m);

    std::vector<std::size_t> order(fit.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(es, "batch-order"));
    rng.shuffle(order);

    model.set_training(true);
    const std::vector<int> y_fit = truth(fit);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + opt.batch_size)));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(y_fit[i]);
      model.zero_grad();
      const nn::Tensor logits = model.forward(batch_inputs(fit, idx));
      nn::Tensor grad;
      const double loss = cross_entropy_batch(logits, labels, &grad);
      if (!std::isfinite(loss))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(b / opt.batch_size) + " (lr " + std::to_string(opt.learning_rate) + ")");
      model.backward(grad);
      adam.step(opt.learning_rate);
      loss_sum += loss * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        correct += (logits[2 * i + 1] > logits[2 * i] ? 1 : 0) == labels[i];
    }
    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(fit.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(fit.size());
    rec.val_accuracy = val.empty() ? 0.0 : evaluate(model, val, opt.batch_size);
    history.push_back(rec);

    if (opt.model_selection == ModelSelection::BEST_VALIDATION && rec.val_accuracy > best_val) {
      best_val = rec.val_accuracy;
      best.clear();
      for (auto& p : model.parameters()) best.push_back(p.param->value);
    }
  }
  if (opt.model_selection == ModelSelection::BEST_VALIDATION && !best.empty()) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = best[i];
  }
  model.set_training(false);
  return history;
}

std::vector<int> predict(Ensemble& model, const Dataset& data, std::size_t batch_size) {
  model.set_training(false);
  nn::InferenceGuard guard;
  std::vector<int> out;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + batch_size); ++i) idx.push_back(i);
    const nn::Tensor logits = model.forward(batch_inputs(data, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) out.push_back(logits[2 * i + 1] > logits[2 * i] ? 1 : 0);
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> y) {
  if (predicted.empty()) throw Error("accuracy of an empty set");
  if (predicted.size() != y.size()) throw Error("accuracy: prediction/label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += predicted[i] == y[i];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

double evaluate(Ensemble& model, const Dataset& test, std::size_t batch_size) {
  if (test.empty()) throw Error("evaluate: empty test set");
  const std::vector<int> p = predict(model, test, batch_size);
  const std::vector<int> y = truth(test);
  return accuracy(p, y);
}

std::pair<double, double> mean_std(std::span<const double> xs) {
  if (xs.empty()) throw Error("mean_std of an empty list");
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

std::unique_ptr<Ensemble> make_model(const ExperimentConfig& c, const Dims3& dims, std::uint64_t rep_seed) {
  auto specs = architecture_specs(c.model_kind, dims, c.full_scale, derive_seed(rep_seed, "backbones"));
  if (c.pretrained) {
    for (auto& s : specs) {
      std::string name = to_string(s.family);
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
      s.pretrained_source = c.pretrained_dir / (name + ".nten");
    }
  }
  const std::uint64_t fusion_seed = derive_seed(rep_seed, "fusion");
  if (c.model_kind == ModelKind::MODEL1) return std::make_unique<EnsembleModel1>(build_model1(specs, fusion_seed));
  return std::make_unique<EnsembleModel2>(build_model2(specs, fusion_seed));
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Manifest& manifest) {
  config.validate();
  const Dataset all = Dataset::load(manifest, config.model_kind, config.use_smoothed);
  if (all.empty()) throw Error("run_experiment: no subjects");
  const Dims3 dims = all.dims();

  struct Task {
    std::size_t lr_index;
    std::size_t rep;
  };
  std::vector<Task> tasks;
  for (std::size_t li = 0; li < config.learning_rates.size(); ++li)
    for (std::size_t r = 0; r < static_cast<std::size_t>(config.repetitions); ++r) tasks.push_back({li, r});

  std::vector<RunLog> logs(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      try {
        const auto [li, rep] = tasks[t];
        RunLog& log = logs[t];
        log.lr_index = li;
        log.learning_rate = config.learning_rates[li];
        log.repetition = rep;
        log.rep_seed = repetition_seed(config.master_seed, li, rep);
        auto [train_m, test_m] = split_train_test(all.manifest(), config.test_fraction, log.rep_seed, config.stratified);
        const Dataset train = all.subset(train_m);
        const Dataset test = all.subset(test_m);
        log.test_subjects = test_m.subject_ids();
        auto model = make_model(config, dims, log.rep_seed);
        log.history = train_once(*model, train, train_options(config, log.learning_rate), log.rep_seed);
        log.test_accuracy = evaluate(*model, test, config.batch_size);
        if (!config.checkpoint_dir.empty()) {
          fs::create_directories(config.checkpoint_dir);
          const std::string name = "model" + std::string(config.model_kind == ModelKind::MODEL1 ? "1" : "2") +
                                   "_lr" + std::to_string(li) + "_rep" + std::to_string(rep) + ".nten";
          save_ensemble(*model, config.checkpoint_dir / name,
                        {{"learning_rate", std::to_string(log.learning_rate)},
                         {"repetition", std::to_string(rep)},
                         {"smoothed", config.use_smoothed ? "1" : "0"}});
        }
      } catch (const std::exception& e) {
        errors[t] = e.what();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(tasks.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);

  ExperimentResult result;
  for (std::size_t li = 0; li < config.learning_rates.size(); ++li) {
    ResultRow row;
    row.model = config.model_kind;
    if (config.model_kind == ModelKind::MODEL2) row.smoothed = config.use_smoothed;
    row.pretrained = config.pretrained;
    row.learning_rate = config.learning_rates[li];
    for (const auto& log : logs)
      if (log.lr_index == li) row.rep_accuracies.push_back(log.test_accuracy);
    std::tie(row.acc_mean, row.acc_std) = mean_std(row.rep_accuracies);
    result.table.rows.push_back(std::move(row));
  }
  result.runs = std::move(logs);
  return result;
}

}  // namespace neuroens
