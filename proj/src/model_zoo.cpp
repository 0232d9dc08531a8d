#include "neuroens/model_zoo.hpp"

#include <cmath>
#include <json.hpp>

#include "neuroens/error.hpp"
#include "neuroens/nn/blocks.hpp"

namespace neuroens {

using nn::Conv2d;
using nn::Conv2dOptions;
using nn::Sequential;

std::string to_string(Family f) {
  switch (f) {
    case Family::RESNET: return "RESNET";
    case Family::SQUEEZENET: return "SQUEEZENET";
    case Family::DENSENET: return "DENSENET";
    case Family::VGG: return "VGG";
    case Family::MOBILENET: return "MOBILENET";
    case Family::SHUFFLENET: return "SHUFFLENET";
  }
  return "";
}

Family parse_family(const std::string& token) {
  for (Family f : {Family::RESNET, Family::SQUEEZENET, Family::DENSENET, Family::VGG, Family::MOBILENET,
                   Family::SHUFFLENET})
    if (to_string(f) == token) return f;
  throw Error("unknown backbone family \"" + token + "\"");
}

std::vector<std::size_t> full_scale_depths(Family f) {
  switch (f) {
    case Family::RESNET: return {3, 4, 23, 3};
    case Family::SQUEEZENET: return {2, 2, 4};
    case Family::DENSENET: return {6, 12, 48, 32};
    case Family::VGG: return {2, 2, 4, 4, 4};
    case Family::MOBILENET: return {1, 2, 3, 4, 3, 3, 1};
    case Family::SHUFFLENET: return {4, 8, 4};
  }
  return {};
}

BackboneSpec full_scale_spec(Family f, std::size_t in_channels, std::size_t height, std::size_t width,
                             std::uint64_t seed) {
  BackboneSpec s;
  s.family = f;
  s.width_scale = 1.0;
  s.stage_depths = full_scale_depths(f);
  s.in_channels = in_channels;
  s.input_height = height;
  s.input_width = width;
  s.init_seed = seed;
  return s;
}

BackboneSpec toy_spec(Family f, std::size_t in_channels, std::size_t height, std::size_t width,
                      std::uint64_t seed) {
  BackboneSpec s = full_scale_spec(f, in_channels, height, width, seed);
  switch (f) {
    case Family::RESNET: s.width_scale = 0.125; s.stage_depths = {1, 1}; break;
    case Family::SQUEEZENET: s.width_scale = 0.125; s.stage_depths = {1, 1}; break;
    case Family::DENSENET: s.width_scale = 0.125; s.stage_depths = {2, 2}; break;
    case Family::VGG:
      s.width_scale = 0.125;
      s.stage_depths = {1, 1};
      s.classifier_width = 16;
      s.classifier_pool = 1;
      break;
    case Family::MOBILENET: s.width_scale = 0.25; s.stage_depths = {1, 2, 1}; break;
    case Family::SHUFFLENET: s.width_scale = 0.125; s.stage_depths = {2, 2}; break;
  }
  return s;
}

std::string spec_to_json(const BackboneSpec& s) {
  nlohmann::json j = {{"family", to_string(s.family)},
                      {"width_scale", s.width_scale},
                      {"stage_depths", s.stage_depths},
                      {"in_channels", s.in_channels},
                      {"input_height", s.input_height},
                      {"input_width", s.input_width},
                      {"num_classes", s.num_classes},
                      {"init_seed", s.init_seed},
                      {"classifier_width", s.classifier_width},
                      {"classifier_pool", s.classifier_pool}};
  if (s.pretrained_source) j["pretrained_source"] = s.pretrained_source->string();
  return j.dump();
}

BackboneSpec spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    BackboneSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.width_scale = j.at("width_scale").get<double>();
    s.stage_depths = j.at("stage_depths").get<std::vector<std::size_t>>();
    s.in_channels = j.at("in_channels").get<std::size_t>();
    s.input_height = j.at("input_height").get<std::size_t>();
    s.input_width = j.at("input_width").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.init_seed = j.at("init_seed").get<std::uint64_t>();
    s.classifier_width = j.value("classifier_width", std::size_t{4096});
    s.classifier_pool = j.value("classifier_pool", std::size_t{7});
    if (j.contains("pretrained_source")) s.pretrained_source = j["pretrained_source"].get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed backbone spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

struct Built {
  std::unique_ptr<Sequential> net;
  std::string first_layer;
  std::string final_layer;
};

class Builder {
 public:
  Builder(const BackboneSpec& spec, Rng& init) : s_(spec), init_(init) {}

  std::size_t ch(double base) const {
    const auto c = static_cast<std::size_t>(std::llround(base * s_.width_scale));
    if (c == 0)
      throw Error("zero-channel configuration for " + to_string(s_.family) + " at width_scale " +
                  std::to_string(s_.width_scale));
    return c;
  }
  std::size_t even_ch(double base) const {
    const auto c = 2 * static_cast<std::size_t>(std::llround(base * s_.width_scale / 2.0));
    if (c == 0)
      throw Error("zero-channel configuration for " + to_string(s_.family) + " at width_scale " +
                  std::to_string(s_.width_scale));
    return c;
  }

  std::unique_ptr<Conv2d> conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                               std::size_t pad, bool bias = false, std::size_t groups = 1) {
    return std::make_unique<Conv2d>(Conv2dOptions{in, out, k, stride, pad, groups, bias}, init_);
  }
  std::unique_ptr<nn::Linear> linear(std::size_t in, std::size_t out) {
    return std::make_unique<nn::Linear>(in, out, init_);
  }
  std::unique_ptr<Sequential> conv_bn_relu(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                                           double cap = 0.0) {
    auto m = std::make_unique<Sequential>();
    m->push(conv(in, out, k, stride, (k - 1) / 2));
    m->push(std::make_unique<nn::BatchNorm2d>(out));
    m->push(std::make_unique<nn::ReLU>(cap));
    return m;
  }

  Built resnet() {
    auto net = std::make_unique<Sequential>();
    const std::size_t stem = ch(64);
    net->add("conv1", conv(s_.in_channels, stem, 7, 2, 3));
    net->add("bn1", std::make_unique<nn::BatchNorm2d>(stem));
    net->add("relu", std::make_unique<nn::ReLU>());
    net->add("maxpool", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    const double widths[] = {64, 128, 256, 512};
    std::size_t in = stem;
    for (std::size_t st = 0; st < s_.stage_depths.size(); ++st) {
      auto layer = std::make_unique<Sequential>();
      const std::size_t w = ch(widths[st]);
      for (std::size_t b = 0; b < s_.stage_depths[st]; ++b) {
        layer->push(std::make_unique<nn::Bottleneck>(in, w, (b == 0 && st > 0) ? 2 : 1, init_));
        in = w * nn::Bottleneck::kExpansion;
      }
      net->add("layer" + std::to_string(st + 1), std::move(layer));
    }
    net->add("avgpool", std::make_unique<nn::AdaptiveAvgPool2d>(1, 1));
    net->add("fc", linear(in, s_.num_classes));
    return {std::move(net), "conv1", "fc"};
  }

  Built squeezenet() {
    auto features = std::make_unique<Sequential>();
    const std::size_t stem = ch(64);
    features->push(conv(s_.in_channels, stem, 3, 2, 0, true));
    features->push(std::make_unique<nn::ReLU>());
    features->push(std::make_unique<nn::MaxPool2d>(3, 2, 0, true));
    std::size_t in = stem, k = 0;
    for (std::size_t st = 0; st < s_.stage_depths.size(); ++st) {
      if (st > 0) features->push(std::make_unique<nn::MaxPool2d>(3, 2, 0, true));
      for (std::size_t b = 0; b < s_.stage_depths[st]; ++b, ++k) {
        const double mult = static_cast<double>(1 + k / 2);
        const std::size_t sq = ch(16 * mult), ex = ch(64 * mult);
        features->push(std::make_unique<nn::Fire>(in, sq, ex, ex, init_));
        in = 2 * ex;
      }
    }
    auto classifier = std::make_unique<Sequential>();
    classifier->push(std::make_unique<nn::Identity>());  // dropout slot
    classifier->push(conv(in, s_.num_classes, 1, 1, 0, true));
    classifier->push(std::make_unique<nn::ReLU>());
    classifier->push(std::make_unique<nn::AdaptiveAvgPool2d>(1, 1));
    auto net = std::make_unique<Sequential>();
    net->add("features", std::move(features));
    net->add("classifier", std::move(classifier));
    return {std::move(net), "features.0", "classifier.1"};
  }

  Built densenet() {
    constexpr std::size_t kBnSize = 4;
    auto features = std::make_unique<Sequential>();
    const std::size_t init = ch(64), growth = ch(32);
    features->add("conv0", conv(s_.in_channels, init, 7, 2, 3));
    features->add("norm0", std::make_unique<nn::BatchNorm2d>(init));
    features->add("relu0", std::make_unique<nn::ReLU>());
    features->add("pool0", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    std::size_t in = init;
    for (std::size_t st = 0; st < s_.stage_depths.size(); ++st) {
      auto block = std::make_unique<Sequential>();
      for (std::size_t l = 0; l < s_.stage_depths[st]; ++l) {
        block->add("denselayer" + std::to_string(l + 1), std::make_unique<nn::DenseLayer>(in, growth, kBnSize, init_));
        in += growth;
      }
      features->add("denseblock" + std::to_string(st + 1), std::move(block));
      if (st + 1 < s_.stage_depths.size()) {
        const std::size_t out = in / 2;
        if (out == 0) throw Error("zero-channel configuration for DENSENET transition");
        auto tr = std::make_unique<Sequential>();
        tr->add("norm", std::make_unique<nn::BatchNorm2d>(in));
        tr->add("relu", std::make_unique<nn::ReLU>());
        tr->add("conv", conv(in, out, 1, 1, 0));
        tr->add("pool", std::make_unique<nn::AvgPool2d>(2, 2));
        features->add("transition" + std::to_string(st + 1), std::move(tr));
        in = out;
      }
    }
    features->add("norm5", std::make_unique<nn::BatchNorm2d>(in));
    auto net = std::make_unique<Sequential>();
    net->add("features", std::move(features));
    net->add("relu", std::make_unique<nn::ReLU>());
    net->add("avgpool", std::make_unique<nn::AdaptiveAvgPool2d>(1, 1));
    net->add("classifier", linear(in, s_.num_classes));
    return {std::move(net), "features.conv0", "classifier"};
  }

  Built vgg() {
    auto features = std::make_unique<Sequential>();
    const double widths[] = {64, 128, 256, 512, 512};
    std::size_t in = s_.in_channels;
    for (std::size_t st = 0; st < s_.stage_depths.size(); ++st) {
      const std::size_t w = ch(widths[st]);
      for (std::size_t l = 0; l < s_.stage_depths[st]; ++l) {
        features->push(conv(in, w, 3, 1, 1, true));
        features->push(std::make_unique<nn::ReLU>());
        in = w;
      }
      features->push(std::make_unique<nn::MaxPool2d>(2, 2));
    }
    if (s_.classifier_width == 0 || s_.classifier_pool == 0) throw Error("zero-channel configuration for VGG classifier");
    const std::size_t pool = s_.classifier_pool, hidden = s_.classifier_width;
    auto classifier = std::make_unique<Sequential>();
    classifier->push(linear(in * pool * pool, hidden));
    classifier->push(std::make_unique<nn::ReLU>());
    classifier->push(std::make_unique<nn::Identity>());
    classifier->push(linear(hidden, hidden));
    classifier->push(std::make_unique<nn::ReLU>());
    classifier->push(std::make_unique<nn::Identity>());
    classifier->push(linear(hidden, s_.num_classes));
    auto net = std::make_unique<Sequential>();
    net->add("features", std::move(features));
    net->add("avgpool", std::make_unique<nn::AdaptiveAvgPool2d>(pool, pool));
    net->add("classifier", std::move(classifier));
    return {std::move(net), "features.0", "classifier.6"};
  }

  Built mobilenet() {
    struct Setting { std::size_t t; double c; std::size_t s; };
    const Setting settings[] = {{1, 16, 1}, {6, 24, 2}, {6, 32, 2}, {6, 64, 2}, {6, 96, 1}, {6, 160, 2}, {6, 320, 1}};
    auto features = std::make_unique<Sequential>();
    const std::size_t stem = ch(32);
    features->push(conv_bn_relu(s_.in_channels, stem, 3, 2, 6.0));
    std::size_t in = stem;
    for (std::size_t st = 0; st < s_.stage_depths.size(); ++st) {
      const auto& cfg = settings[st];
      const std::size_t out = ch(cfg.c);
      for (std::size_t b = 0; b < s_.stage_depths[st]; ++b) {
        features->push(std::make_unique<nn::InvertedResidual>(in, out, b == 0 ? cfg.s : 1, cfg.t, init_));
        in = out;
      }
    }
    const std::size_t last = ch(1280);
    features->push(conv_bn_relu(in, last, 1, 1, 6.0));
    auto classifier = std::make_unique<Sequential>();
    classifier->push(std::make_unique<nn::Identity>());
    classifier->push(linear(last, s_.num_classes));
    auto net = std::make_unique<Sequential>();
    net->add("features", std::move(features));
    net->add("avgpool", std::make_unique<nn::AdaptiveAvgPool2d>(1, 1));
    net->add("classifier", std::move(classifier));
    return {std::move(net), "features.0.0", "classifier.1"};
  }

  Built shufflenet() {
    const double widths[] = {116, 232, 464};
    auto net = std::make_unique<Sequential>();
    const std::size_t stem = ch(24);
    net->add("conv1", conv_bn_relu(s_.in_channels, stem, 3, 2));
    net->add("maxpool", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    std::size_t in = stem;
    for (std::size_t st = 0; st < s_.stage_depths.size(); ++st) {
      const std::size_t out = even_ch(widths[st]);
      auto stage = std::make_unique<Sequential>();
      for (std::size_t b = 0; b < s_.stage_depths[st]; ++b) {
        stage->push(std::make_unique<nn::ShuffleUnit>(in, out, b == 0 ? 2 : 1, init_));
        in = out;
      }
      net->add("stage" + std::to_string(st + 2), std::move(stage));
    }
    const std::size_t last = ch(1024);
    net->add("conv5", conv_bn_relu(in, last, 1, 1));
    net->add("avgpool", std::make_unique<nn::AdaptiveAvgPool2d>(1, 1));
    net->add("fc", linear(last, s_.num_classes));
    return {std::move(net), "conv1.0", "fc"};
  }

 private:
  const BackboneSpec& s_;
  Rng& init_;
};

std::size_t max_stages(Family f) { return full_scale_depths(f).size(); }

void validate(const BackboneSpec& s) {
  if (!(s.width_scale > 0.0 && s.width_scale <= 1.0)) throw Error("width_scale must lie in (0, 1]");
  if (s.num_classes != 2) throw Error("num_classes must be 2");
  if (s.in_channels == 0) throw Error("in_channels must be positive");
  if (s.input_height == 0 || s.input_width == 0) throw Error("input dimensions must be positive");
  if (s.stage_depths.empty() || s.stage_depths.size() > max_stages(s.family))
    throw Error(to_string(s.family) + " accepts 1.." + std::to_string(max_stages(s.family)) + " stages");
  for (auto d : s.stage_depths)
    if (d == 0) throw Error("stage depths must be >= 1");
}

}  // namespace

BackboneModel::BackboneModel(const BackboneSpec& spec) : spec_(spec) {
  if (spec_.stage_depths.empty()) spec_.stage_depths = full_scale_depths(spec_.family);
  validate(spec_);
  Rng init(derive_seed(spec_.init_seed, "backbone-init"));
  Builder b(spec_, init);
  Built built;
  switch (spec_.family) {
    case Family::RESNET: built = b.resnet(); break;
    case Family::SQUEEZENET: built = b.squeezenet(); break;
    case Family::DENSENET: built = b.densenet(); break;
    case Family::VGG: built = b.vgg(); break;
    case Family::MOBILENET: built = b.mobilenet(); break;
    case Family::SHUFFLENET: built = b.shufflenet(); break;
  }
  net_ = std::move(built.net);
  first_layer_ = built.first_layer;
  final_layer_ = built.final_layer;
}

nn::Tensor BackboneModel::forward(const nn::Tensor& x) {
  if (x.rank() != 4) throw Error("backbone input must be (N, C, H, W), got " + nn::shape_string(x.shape()));
  if (x.c() != spec_.in_channels)
    throw Error("channel mismatch: " + to_string(spec_.family) + " expects " + std::to_string(spec_.in_channels) +
                " channels, got " + std::to_string(x.c()));
  if (x.h() != spec_.input_height || x.w() != spec_.input_width)
    throw Error("spatial mismatch: " + to_string(spec_.family) + " built for " + std::to_string(spec_.input_height) +
                "x" + std::to_string(spec_.input_width) + ", got " + std::to_string(x.h()) + "x" +
                std::to_string(x.w()));
  nn::Tensor y = net_->forward(x);
  if (y.size() != x.n() * spec_.num_classes) throw Error("backbone produced an unexpected output shape");
  return nn::Tensor({x.n(), spec_.num_classes, 1, 1}, std::vector<double>(y.values().begin(), y.values().end()));
}

nn::Tensor BackboneModel::backward(const nn::Tensor& grad_logits) { return net_->backward(grad_logits); }

std::vector<nn::NamedParameter> BackboneModel::parameters() {
  std::vector<nn::NamedParameter> out;
  net_->collect("", out);
  return out;
}

nn::Parameter& BackboneModel::parameter(const std::string& name) {
  for (auto& p : parameters())
    if (p.name == name) return *p.param;
  throw Error("no parameter named " + name);
}

std::size_t BackboneModel::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters())
    if (p.param->trainable) n += p.param->value.size();
  return n;
}

void BackboneModel::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

void BackboneModel::set_training(bool training) { net_->set_training(training); }

BackboneModel build_backbone(const BackboneSpec& spec) {
  BackboneModel m(spec);
  if (spec.pretrained_source) load_pretrained(m, *spec.pretrained_source);
  return m;
}

void load_pretrained(BackboneModel& m, const std::filesystem::path& source) {
  if (!std::filesystem::exists(source)) throw Error("pretrained weight file not found: " + source.string());
  const nn::TensorArchive a = nn::load_archive(source);
  const auto fam = a.metadata.find("family");
  if (fam != a.metadata.end() && fam->second != to_string(m.spec().family))
    throw Error("topology mismatch: weight file is for " + fam->second + ", model is " + to_string(m.spec().family));

  const std::string first_w = m.first_layer() + ".weight";
  const std::string final_prefix = m.final_layer() + ".";
  for (auto& [name, param] : m.parameters()) {
    if (name.rfind(final_prefix, 0) == 0) continue;
    const nn::Tensor* src = a.find(name);
    if (!src) throw Error("topology mismatch: weight file lacks " + name);
    nn::Tensor& dst = param->value;
    if (name == first_w) {
      // (out, src_in, k, k) -> mean over src_in, replicated over the model's input channels
      const auto& ss = src->shape();
      const auto& ds = dst.shape();
      if (ss.size() != 4 || ss[0] != ds[0] || ss[2] != ds[2] || ss[3] != ds[3])
        throw Error("topology mismatch: first layer " + nn::shape_string(ss) + " vs " + nn::shape_string(ds));
      const std::size_t kk = ss[2] * ss[3], src_in = ss[1];
      for (std::size_t o = 0; o < ss[0]; ++o)
        for (std::size_t i = 0; i < kk; ++i) {
          double acc = 0.0;
          for (std::size_t c = 0; c < src_in; ++c) acc += (*src)[(o * src_in + c) * kk + i];
          const double mean = acc / static_cast<double>(src_in);
          for (std::size_t c = 0; c < ds[1]; ++c) dst[(o * ds[1] + c) * kk + i] = mean;
        }
      continue;
    }
    if (!src->same_shape(dst))
      throw Error("topology mismatch: " + name + " has shape " + nn::shape_string(src->shape()) + ", expected " +
                  nn::shape_string(dst.shape()));
    dst = *src;
  }
}

nn::TensorArchive export_weights(BackboneModel& m) {
  nn::TensorArchive a;
  a.metadata["family"] = to_string(m.spec().family);
  a.metadata["spec"] = spec_to_json(m.spec());
  for (auto& [name, param] : m.parameters()) a.tensors.emplace_back(name, param->value);
  return a;
}

void save_weights(BackboneModel& m, const std::filesystem::path& path, nn::ArchiveDtype dtype) {
  nn::save_archive(export_weights(m), path, dtype);
}

}  // namespace neuroens
