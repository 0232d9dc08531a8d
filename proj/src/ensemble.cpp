#include "neuroens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>

#include "neuroens/nn/tensor_io.hpp"
#include "neuroens/rng.hpp"

namespace neuroens {

std::string to_string(ModelKind k) { return k == ModelKind::MODEL1 ? "MODEL1" : "MODEL2"; }

ModelKind parse_model_kind(const std::string& token) {
  if (token == "MODEL1" || token == "1") return ModelKind::MODEL1;
  if (token == "MODEL2" || token == "2") return ModelKind::MODEL2;
  throw Error("unknown model kind \"" + token + "\"");
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

template <std::size_t N>
std::vector<BackboneModel> arrange(const std::vector<BackboneSpec>& specs, const std::array<Family, N>& order,
                                   const char* arch) {
  if (specs.size() != N) {
    if (N == 6) throw Error("exactly six families required for Model 1, got " + std::to_string(specs.size()));
    throw Error(std::string("exactly four backbones required for ") + arch + ", got " + std::to_string(specs.size()));
  }
  std::set<Family> seen;
  for (const auto& s : specs) {
    if (std::find(order.begin(), order.end(), s.family) == order.end())
      throw Error(std::string("branch family violation: ") + to_string(s.family) + " is not part of " + arch);
    if (!seen.insert(s.family).second) throw Error("duplicate backbone family " + to_string(s.family));
  }
  const auto& ref = specs.front();
  for (const auto& s : specs)
    if (s.in_channels != ref.in_channels || s.input_height != ref.input_height || s.input_width != ref.input_width)
      throw Error(std::string("inconsistent input dims across backbone specs of ") + arch);
  std::vector<BackboneModel> out;
  for (Family f : order)
    for (const auto& s : specs)
      if (s.family == f) out.push_back(build_backbone(s));
  return out;
}

}  // namespace

Ensemble::Ensemble(ModelKind kind, std::vector<BackboneModel> backbones, std::vector<std::size_t> slots,
                   std::vector<Modality> modalities, std::uint64_t fusion_seed)
    : kind_(kind),
      backbones_(std::move(backbones)),
      slots_(std::move(slots)),
      modalities_(std::move(modalities)),
      fusion_seed_(fusion_seed) {
  Rng init(derive_seed(fusion_seed, "fusion-init"));
  fusion_ = std::make_unique<nn::Linear>(2 * backbones_.size(), 2, init);
}

nn::Tensor Ensemble::forward(std::span<const nn::Tensor> inputs) {
  if (inputs.size() != modalities_.size())
    throw Error("ensemble expects " + std::to_string(modalities_.size()) + " inputs, got " +
                std::to_string(inputs.size()));
  for (const auto& t : inputs)
    if (!t.same_shape(inputs.front()))
      throw Error("input shape mismatch: " + nn::shape_string(inputs.front().shape()) + " vs " +
                  nn::shape_string(t.shape()));
  std::vector<nn::Tensor> outs;
  outs.reserve(backbones_.size());
  for (std::size_t i = 0; i < backbones_.size(); ++i) outs.push_back(backbones_[i].forward(inputs[slots_[i]]));
  std::vector<const nn::Tensor*> parts;
  for (const auto& o : outs) parts.push_back(&o);
  return fusion_->forward(fusion_relu_.forward(nn::concat_channels(parts)));
}

void Ensemble::backward(const nn::Tensor& grad_logits, std::vector<nn::Tensor>* input_grads) {
  const nn::Tensor g_cat = fusion_relu_.backward(fusion_->backward(grad_logits));
  const auto parts = nn::split_channels(g_cat, std::vector<std::size_t>(backbones_.size(), 2));
  if (input_grads) input_grads->assign(modalities_.size(), nn::Tensor());
  for (std::size_t i = 0; i < backbones_.size(); ++i) {
    nn::Tensor gi = backbones_[i].backward(parts[i]);
    if (!input_grads) continue;
    auto& slot = (*input_grads)[slots_[i]];
    if (slot.empty()) slot = std::move(gi);
    else slot.add(gi);
  }
}

std::vector<nn::NamedParameter> Ensemble::parameters() {
  std::vector<nn::NamedParameter> out;
  for (auto& b : backbones_) {
    const std::string prefix = lower(to_string(b.spec().family)) + ".";
    for (auto& p : b.parameters()) out.push_back({prefix + p.name, p.param});
  }
  fusion_->collect("fusion.", out);
  return out;
}

void Ensemble::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

void Ensemble::set_training(bool training) {
  for (auto& b : backbones_) b.set_training(training);
}

EnsembleModel1::EnsembleModel1(std::vector<BackboneModel> backbones, std::uint64_t fusion_seed)
    : Ensemble(ModelKind::MODEL1, std::move(backbones), {0, 0, 0, 0, 0, 0}, {Modality::WHOLE}, fusion_seed) {}

nn::Tensor EnsembleModel1::forward(const nn::Tensor& whole) {
  return Ensemble::forward(std::span<const nn::Tensor>(&whole, 1));
}

EnsembleModel2::EnsembleModel2(std::vector<BackboneModel> backbones, std::uint64_t fusion_seed)
    : Ensemble(ModelKind::MODEL2, std::move(backbones), {0, 0, 1, 1}, {Modality::GM, Modality::WM}, fusion_seed) {}

nn::Tensor EnsembleModel2::forward(const nn::Tensor& gm, const nn::Tensor& wm) {
  if (!gm.same_shape(wm))
    throw Error("gm/wm shape mismatch: " + nn::shape_string(gm.shape()) + " vs " + nn::shape_string(wm.shape()));
  const nn::Tensor pair[] = {gm, wm};
  return Ensemble::forward(pair);
}

EnsembleModel1 build_model1(const std::vector<BackboneSpec>& specs, std::uint64_t fusion_seed) {
  return EnsembleModel1(arrange(specs, EnsembleModel1::kOrder, "Model 1"), fusion_seed);
}

EnsembleModel2 build_model2(const std::vector<BackboneSpec>& specs, std::uint64_t fusion_seed) {
  return EnsembleModel2(arrange(specs, EnsembleModel2::kOrder, "Model 2"), fusion_seed);
}

std::vector<BackboneSpec> architecture_specs(ModelKind kind, const Dims3& dims, bool full_scale, std::uint64_t seed) {
  std::vector<Family> families;
  if (kind == ModelKind::MODEL1) families.assign(EnsembleModel1::kOrder.begin(), EnsembleModel1::kOrder.end());
  else families.assign(EnsembleModel2::kOrder.begin(), EnsembleModel2::kOrder.end());
  std::vector<BackboneSpec> specs;
  for (std::size_t i = 0; i < families.size(); ++i) {
    const std::uint64_t s = derive_seed({seed, static_cast<std::uint64_t>(families[i])});
    specs.push_back(full_scale ? full_scale_spec(families[i], dims.d, dims.h, dims.w, s)
                               : toy_spec(families[i], dims.d, dims.h, dims.w, s));
  }
  return specs;
}

nn::Tensor to_tensor(const Volume& v) {
  const auto& d = v.dims();
  return nn::Tensor({1, d.d, d.h, d.w}, v.data());
}

nn::Tensor stack_volumes(const std::vector<const Volume*>& volumes) {
  if (volumes.empty()) throw Error("stack_volumes: empty batch");
  const auto& d = volumes.front()->dims();
  nn::Tensor t({volumes.size(), d.d, d.h, d.w});
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (!(volumes[i]->dims() == d))
      throw Error("stack_volumes: dimension mismatch " + to_string(d) + " vs " + to_string(volumes[i]->dims()));
    std::copy(volumes[i]->data().begin(), volumes[i]->data().end(), t.data() + i * d.count());
  }
  return t;
}

namespace {
Logits first_row(const nn::Tensor& t) { return {t[0], t[1]}; }
}  // namespace

Logits forward_model1(EnsembleModel1& m, const Volume& whole) { return first_row(m.forward(to_tensor(whole))); }

Logits forward_model2(EnsembleModel2& m, const Volume& gm, const Volume& wm) {
  if (!(gm.dims() == wm.dims()))
    throw Error("gm/wm dimension mismatch: " + to_string(gm.dims()) + " vs " + to_string(wm.dims()));
  return first_row(m.forward(to_tensor(gm), to_tensor(wm)));
}

Probabilities predict_proba(const Logits& z) {
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  const double p0 = e0 / (e0 + e1);
  return {p0, 1.0 - p0};
}

void save_ensemble(Ensemble& m, const std::filesystem::path& path,
                   const std::map<std::string, std::string>& extra_metadata) {
  nn::TensorArchive a;
  a.metadata = extra_metadata;
  a.metadata["kind"] = to_string(m.kind());
  a.metadata["fusion_seed"] = std::to_string(m.fusion_seed());
  nlohmann::json specs = nlohmann::json::array();
  for (auto& b : m.backbones()) specs.push_back(nlohmann::json::parse(spec_to_json(b.spec())));
  a.metadata["specs"] = specs.dump();
  for (auto& [name, p] : m.parameters()) a.tensors.emplace_back(name, p->value);
  nn::save_archive(a, path);
}

LoadedEnsemble load_ensemble(const std::filesystem::path& path) {
  nn::TensorArchive a = nn::load_archive(path);
  auto kind_it = a.metadata.find("kind");
  auto specs_it = a.metadata.find("specs");
  if (kind_it == a.metadata.end() || specs_it == a.metadata.end())
    throw Error("not an ensemble checkpoint: " + path.string());
  std::vector<BackboneSpec> specs;
  for (const auto& j : nlohmann::json::parse(specs_it->second)) {
    BackboneSpec s = spec_from_json(j.dump());
    s.pretrained_source.reset();
    specs.push_back(s);
  }
  const std::uint64_t fusion_seed = std::stoull(a.metadata.at("fusion_seed"));
  LoadedEnsemble out;
  if (parse_model_kind(kind_it->second) == ModelKind::MODEL1)
    out.model = std::make_unique<EnsembleModel1>(build_model1(specs, fusion_seed));
  else
    out.model = std::make_unique<EnsembleModel2>(build_model2(specs, fusion_seed));
  for (auto& [name, p] : out.model->parameters()) {
    const nn::Tensor* t = a.find(name);
    if (!t || !t->same_shape(p->value)) throw Error("checkpoint does not match its specs at " + name);
    p->value = *t;
  }
  out.metadata = std::move(a.metadata);
  return out;
}

}  // namespace neuroens
