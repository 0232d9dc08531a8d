#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "neuroens/nn/layers.hpp"
#include "neuroens/nn/tensor_io.hpp"

namespace neuroens {

enum class Family { RESNET, SQUEEZENET, DENSENET, VGG, MOBILENET, SHUFFLENET };

std::string to_string(Family f);
Family parse_family(const std::string& token);

/// Configurable-scale description of one backbone. Volumes enter as
/// in_channels-channel 2D images: depth D is the channel axis, H x W the image.
struct BackboneSpec {
  Family family = Family::RESNET;
  double width_scale = 1.0;
  /// Blocks per stage; empty means the family's full-scale depths.
  std::vector<std::size_t> stage_depths;
  std::size_t in_channels = 3;
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t num_classes = 2;
  std::uint64_t init_seed = 0;
  std::optional<std::filesystem::path> pretrained_source;
  /// VGG only: hidden width of the two classifier layers and the pooled grid side.
  std::size_t classifier_width = 4096;
  std::size_t classifier_pool = 7;
};

/// Stage depths of ResNet-101, SqueezeNet 1.1, DenseNet-201, VGG-19,
/// MobileNet V2 and ShuffleNet V2 (1.0x).
std::vector<std::size_t> full_scale_depths(Family f);
BackboneSpec full_scale_spec(Family f, std::size_t in_channels, std::size_t height, std::size_t width,
                             std::uint64_t seed = 0);
/// Small variant of the same topology, sized for desk-scale training.
BackboneSpec toy_spec(Family f, std::size_t in_channels, std::size_t height, std::size_t width,
                      std::uint64_t seed = 0);

std::string spec_to_json(const BackboneSpec& spec);
BackboneSpec spec_from_json(const std::string& text);

/// One constituent classifier. Input (N, in_channels, H, W), output logits (N, 2, 1, 1).
class BackboneModel {
 public:
  explicit BackboneModel(const BackboneSpec& spec);
  BackboneModel(BackboneModel&&) noexcept = default;
  BackboneModel& operator=(BackboneModel&&) noexcept = default;

  const BackboneSpec& spec() const { return spec_; }

  nn::Tensor forward(const nn::Tensor& x);
  nn::Tensor backward(const nn::Tensor& grad_logits);

  /// Parameters and batch-norm buffers (trainable == false), with
  /// torchvision-style dotted names.
  std::vector<nn::NamedParameter> parameters();
  nn::Parameter& parameter(const std::string& name);
  /// Number of trainable scalars.
  std::size_t parameter_count();
  void zero_grad();
  void set_training(bool training);

  /// Layer prefixes of the modified input and output layers ("conv1", "fc", ...).
  const std::string& first_layer() const { return first_layer_; }
  const std::string& final_layer() const { return final_layer_; }

 private:
  BackboneSpec spec_;
  std::unique_ptr<nn::Module> net_;
  std::string first_layer_;
  std::string final_layer_;
};

BackboneModel build_backbone(const BackboneSpec& spec);

/// Copies interior weights from a weight file of the same family and topology.
/// The source's first-layer filters are averaged over their input channels and
/// replicated across in_channels; the final layer keeps its seeded values.
void load_pretrained(BackboneModel& m, const std::filesystem::path& source);

/// Weight file of the model's current values (metadata: family, spec).
nn::TensorArchive export_weights(BackboneModel& m);
void save_weights(BackboneModel& m, const std::filesystem::path& path,
                  nn::ArchiveDtype dtype = nn::ArchiveDtype::F64);

}  // namespace neuroens
