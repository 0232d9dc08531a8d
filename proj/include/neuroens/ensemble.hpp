#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "neuroens/error.hpp"
#include "neuroens/model_zoo.hpp"
#include "neuroens/volume.hpp"

namespace neuroens {

enum class ModelKind { MODEL1, MODEL2 };
std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& token);

using Logits = std::array<double, 2>;
using Probabilities = std::array<double, 2>;

/// Backbones in parallel, their 2-logit outputs concatenated, then ReLU and a
/// linear map to 2 logits. Column order of the fusion input follows the
/// backbone order, which is fixed per architecture.
class Ensemble {
 public:
  virtual ~Ensemble() = default;
  Ensemble(Ensemble&&) noexcept = default;
  Ensemble& operator=(Ensemble&&) noexcept = default;

  ModelKind kind() const { return kind_; }
  /// Modalities of the input slots, in slot order.
  const std::vector<Modality>& input_modalities() const { return modalities_; }
  std::size_t fusion_width() const { return fusion_->in_features(); }
  std::uint64_t fusion_seed() const { return fusion_seed_; }

  std::vector<BackboneModel>& backbones() { return backbones_; }
  /// Input slot each backbone reads from.
  const std::vector<std::size_t>& backbone_slots() const { return slots_; }
  nn::Linear& fusion() { return *fusion_; }

  /// One (N, D, H, W) tensor per input slot; returns (N, 2, 1, 1) logits.
  nn::Tensor forward(std::span<const nn::Tensor> inputs);
  /// Back-propagates dL/dlogits from the last forward. Gradients w.r.t. each
  /// input slot are written to input_grads when given.
  void backward(const nn::Tensor& grad_logits, std::vector<nn::Tensor>* input_grads = nullptr);

  /// Every parameter and buffer, named "<family>.<layer path>" or "fusion.*".
  std::vector<nn::NamedParameter> parameters();
  void zero_grad();
  void set_training(bool training);

 protected:
  Ensemble(ModelKind kind, std::vector<BackboneModel> backbones, std::vector<std::size_t> slots,
           std::vector<Modality> modalities, std::uint64_t fusion_seed);

 private:
  ModelKind kind_;
  std::vector<BackboneModel> backbones_;
  std::vector<std::size_t> slots_;
  std::vector<Modality> modalities_;
  std::uint64_t fusion_seed_;
  std::unique_ptr<nn::Linear> fusion_;
  nn::ReLU fusion_relu_;
};

/// Whole-brain model: ResNet, SqueezeNet, DenseNet, VGG, MobileNet, ShuffleNet
/// on the same volume; fusion width 12.
class EnsembleModel1 : public Ensemble {
 public:
  static constexpr std::array<Family, 6> kOrder = {Family::RESNET,  Family::SQUEEZENET, Family::DENSENET,
                                                   Family::VGG,     Family::MOBILENET,  Family::SHUFFLENET};
  EnsembleModel1(std::vector<BackboneModel> backbones, std::uint64_t fusion_seed);
  using Ensemble::forward;
  nn::Tensor forward(const nn::Tensor& whole);
};

/// Tissue model: GM -> ShuffleNet, SqueezeNet; WM -> DenseNet, MobileNet;
/// fusion width 8.
class EnsembleModel2 : public Ensemble {
 public:
  static constexpr std::array<Family, 4> kOrder = {Family::SHUFFLENET, Family::SQUEEZENET, Family::DENSENET,
                                                   Family::MOBILENET};
  EnsembleModel2(std::vector<BackboneModel> backbones, std::uint64_t fusion_seed);
  using Ensemble::forward;
  nn::Tensor forward(const nn::Tensor& gm, const nn::Tensor& wm);
};

/// Specs may come in any order; they are arranged in the architecture's order.
EnsembleModel1 build_model1(const std::vector<BackboneSpec>& specs, std::uint64_t fusion_seed = 0);
EnsembleModel2 build_model2(const std::vector<BackboneSpec>& specs, std::uint64_t fusion_seed = 0);

/// Specs for every backbone of an architecture at toy or full scale for
/// inputs of the given dims (depth becomes the channel count).
std::vector<BackboneSpec> architecture_specs(ModelKind kind, const Dims3& dims, bool full_scale,
                                             std::uint64_t seed);

/// (1, D, H, W) view of a volume.
nn::Tensor to_tensor(const Volume& v);
/// (N, D, H, W) batch of equally shaped volumes.
nn::Tensor stack_volumes(const std::vector<const Volume*>& volumes);

Logits forward_model1(EnsembleModel1& m, const Volume& whole);
Logits forward_model2(EnsembleModel2& m, const Volume& gm, const Volume& wm);

/// Softmax of a logit pair.
Probabilities predict_proba(const Logits& logits);

/// Checkpoint: every parameter and buffer plus the backbone specs as metadata.
void save_ensemble(Ensemble& m, const std::filesystem::path& path,
                   const std::map<std::string, std::string>& extra_metadata = {});
struct LoadedEnsemble {
  std::unique_ptr<Ensemble> model;
  std::map<std::string, std::string> metadata;
};
LoadedEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace neuroens
