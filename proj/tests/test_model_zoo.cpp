#include <gtest/gtest.h>

#include <cmath>

#include "neuroens/model_zoo.hpp"
#include "test_support.hpp"

using namespace neuroens;
using neuroens::testing::random_tensor;
using neuroens::testing::TempDir;

namespace {

const Family kFamilies[] = {Family::RESNET, Family::SQUEEZENET, Family::DENSENET,
                            Family::VGG,    Family::MOBILENET,  Family::SHUFFLENET};

std::string fname(Family f) { return to_string(f); }

}  // namespace

class EveryFamily : public ::testing::TestWithParam<Family> {};

INSTANTIATE_TEST_SUITE_P(Zoo, EveryFamily, ::testing::ValuesIn(kFamilies),
                         [](const auto& info) { return fname(info.param); });

TEST_P(EveryFamily, ToyForwardEmitsTwoFiniteLogits) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 4, 16, 16, 1));
  for (bool training : {true, false}) {
    m.set_training(training);
    const nn::Tensor y = m.forward(random_tensor({3, 4, 16, 16}, 2));
    EXPECT_EQ(y.shape(), (std::vector<std::size_t>{3, 2, 1, 1}));
    EXPECT_TRUE(y.all_finite());
  }
  for (auto& p : m.parameters()) EXPECT_TRUE(p.param->value.all_finite()) << p.name;
}

TEST_P(EveryFamily, OddSpatialDimsStillGiveTwoLogits) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 3, 19, 13, 1));
  m.set_training(false);
  EXPECT_EQ(m.forward(random_tensor({1, 3, 19, 13}, 2)).size(), 2u);
}

TEST_P(EveryFamily, SeededInitIsPure) {
  BackboneModel a = build_backbone(toy_spec(GetParam(), 4, 16, 16, 7));
  BackboneModel b = build_backbone(toy_spec(GetParam(), 4, 16, 16, 7));
  BackboneModel c = build_backbone(toy_spec(GetParam(), 4, 16, 16, 8));
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    for (std::size_t k = 0; k < pa[i].param->value.size(); ++k) {
      EXPECT_EQ(pa[i].param->value[k], pb[i].param->value[k]);
      differs |= pa[i].param->value[k] != pc[i].param->value[k];
    }
  }
  EXPECT_TRUE(differs);
}

TEST_P(EveryFamily, EvalForwardIsDeterministic) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 4, 16, 16, 3));
  m.set_training(false);
  const nn::Tensor x = random_tensor({2, 4, 16, 16}, 4);
  const nn::Tensor a = m.forward(x), b = m.forward(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST_P(EveryFamily, ZeroFinalLayerGivesZeroLogits) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 4, 16, 16, 3));
  m.set_training(false);
  for (auto& p : m.parameters())
    if (p.name.rfind(m.final_layer() + ".", 0) == 0) p.param->value.fill(0.0);
  const nn::Tensor y = m.forward(nn::Tensor({1, 4, 16, 16}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST_P(EveryFamily, MismatchedInputsRejected) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 4, 16, 16, 3));
  try {
    m.forward(nn::Tensor({1, 5, 16, 16}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("channel mismatch"), std::string::npos);
  }
  EXPECT_THROW(m.forward(nn::Tensor({1, 4, 16, 15})), Error);
}

TEST_P(EveryFamily, LogitGradientMatchesFiniteDifferences) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 4, 16, 16, 11));
  m.set_training(true);
  const nn::Tensor x = random_tensor({2, 4, 16, 16}, 12);
  nn::Tensor seed_grad({2, 2, 1, 1});
  seed_grad[0] = 1.0;
  seed_grad[2] = 1.0;
  auto loss = [&] {
    const nn::Tensor y = m.forward(x);
    return y[0] + y[2];
  };
  auto analytic = [&] {
    m.forward(x);
    m.backward(seed_grad);
  };
  const auto r = neuroens::testing::grad_check(m.parameters(), loss, analytic, 4, 13);
  EXPECT_GT(r.checked, 10u);
  EXPECT_EQ(r.failed, 0u) << r.worst_name << " rel " << r.worst_rel;
}

TEST_P(EveryFamily, FirstAndFinalLayersHaveTheModifiedShapes) {
  BackboneModel m = build_backbone(toy_spec(GetParam(), 9, 16, 16, 1));
  const auto& w = m.parameter(m.first_layer() + ".weight").value;
  EXPECT_EQ(w.dim(1), 9u);
  const auto& f = m.parameter(m.final_layer() + ".weight").value;
  EXPECT_EQ(f.dim(0), 2u);
}

TEST_P(EveryFamily, PretrainedLoadAveragesFirstLayerAndKeepsFinalLayer) {
  TempDir dir;
  BackboneSpec src_spec = toy_spec(GetParam(), 3, 16, 16, 21);
  BackboneModel src = build_backbone(src_spec);
  save_weights(src, dir / "w.nten");

  BackboneSpec spec = toy_spec(GetParam(), 5, 16, 16, 22);
  spec.pretrained_source = dir / "w.nten";
  BackboneModel m = build_backbone(spec);
  BackboneModel fresh = build_backbone(toy_spec(GetParam(), 5, 16, 16, 22));

  const std::string first = m.first_layer() + ".weight";
  const std::string final_prefix = m.final_layer() + ".";
  auto mp = m.parameters();
  auto fp = fresh.parameters();
  for (std::size_t i = 0; i < mp.size(); ++i) {
    const auto& name = mp[i].name;
    const nn::Tensor& got = mp[i].param->value;
    if (name.rfind(final_prefix, 0) == 0) {
      for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], fp[i].param->value[k]) << name;
    } else if (name == first) {
      const nn::Tensor& s = src.parameter(first).value;
      const std::size_t kk = s.dim(2) * s.dim(3);
      for (std::size_t o = 0; o < s.dim(0); ++o)
        for (std::size_t j = 0; j < kk; ++j) {
          const double mean = (s[(o * 3 + 0) * kk + j] + s[(o * 3 + 1) * kk + j] + s[(o * 3 + 2) * kk + j]) / 3.0;
          for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(got[(o * 5 + c) * kk + j], mean, 1e-15);
        }
    } else {
      const nn::Tensor& s = src.parameter(name).value;
      for (std::size_t k = 0; k < got.size(); ++k) EXPECT_EQ(got[k], s[k]) << name;
    }
  }
  m.set_training(false);
  fresh.set_training(false);
  const nn::Tensor x = random_tensor({1, 5, 16, 16}, 23);
  const nn::Tensor a = m.forward(x), b = fresh.forward(x);
  EXPECT_TRUE(a[0] != b[0] || a[1] != b[1]);
}

TEST(Pretrained, HandBuiltTwoFilterSource) {
  TempDir dir;
  BackboneSpec spec = toy_spec(Family::VGG, 4, 16, 16, 1);
  BackboneModel target = build_backbone(spec);
  nn::TensorArchive a = export_weights(target);
  // Replace the first-layer weight with a 2-filter-per-output RGB source, shape (out, 3, 3, 3).
  for (auto& [name, t] : a.tensors) {
    if (name != "features.0.weight") continue;
    nn::Tensor rgb({t.dim(0), 3, 3, 3});
    for (std::size_t o = 0; o < t.dim(0); ++o)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < 9; ++k) rgb[(o * 3 + c) * 9 + k] = static_cast<double>(c + 1) * (o + 1);
    t = rgb;
  }
  nn::save_archive(a, dir / "hand.nten");
  load_pretrained(target, dir / "hand.nten");
  const nn::Tensor& w = target.parameter("features.0.weight").value;
  // Mean of (1, 2, 3) * (o + 1) = 2 (o + 1), on every one of the 4 input channels.
  for (std::size_t o = 0; o < w.dim(0); ++o)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t k = 0; k < 9; ++k) EXPECT_DOUBLE_EQ(w[(o * 4 + c) * 9 + k], 2.0 * (o + 1));
}

TEST(Pretrained, WrongFamilyOrTopologyRejected) {
  TempDir dir;
  BackboneModel resnet = build_backbone(toy_spec(Family::RESNET, 3, 16, 16, 1));
  save_weights(resnet, dir / "resnet.nten");
  BackboneModel vgg = build_backbone(toy_spec(Family::VGG, 3, 16, 16, 1));
  try {
    load_pretrained(vgg, dir / "resnet.nten");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("topology mismatch"), std::string::npos);
  }
  BackboneSpec wider = toy_spec(Family::RESNET, 3, 16, 16, 1);
  wider.width_scale = 0.25;
  BackboneModel big = build_backbone(wider);
  EXPECT_THROW(load_pretrained(big, dir / "resnet.nten"), Error);
  EXPECT_THROW(load_pretrained(big, dir / "missing.nten"), Error);
}

TEST(Zoo, TinyVggParameterCountClosedForm) {
  BackboneSpec s = toy_spec(Family::VGG, 6, 16, 16, 1);
  s.stage_depths = {2, 1, 3};
  s.classifier_width = 10;
  s.classifier_pool = 2;
  BackboneModel m = build_backbone(s);
  // conv3x3 with bias: 9 * in * out + out; widths 64, 128, 256 scaled by 1/8.
  auto conv = [](std::size_t in, std::size_t out) { return 9 * in * out + out; };
  auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
  const std::size_t expected = conv(6, 8) + conv(8, 8) + conv(8, 16) + conv(16, 32) + conv(32, 32) + conv(32, 32) +
                               lin(32 * 2 * 2, 10) + lin(10, 10) + lin(10, 2);
  EXPECT_EQ(m.parameter_count(), expected);
}

TEST(Zoo, SpecJsonRoundTrip) {
  BackboneSpec s = toy_spec(Family::MOBILENET, 7, 12, 10, 99);
  s.pretrained_source = "weights/m.nten";
  const BackboneSpec t = spec_from_json(spec_to_json(s));
  EXPECT_EQ(t.family, s.family);
  EXPECT_EQ(t.width_scale, s.width_scale);
  EXPECT_EQ(t.stage_depths, s.stage_depths);
  EXPECT_EQ(t.in_channels, 7u);
  EXPECT_EQ(t.init_seed, 99u);
  EXPECT_EQ(t.pretrained_source, s.pretrained_source);
}

TEST(Zoo, InvalidSpecsRejected) {
  BackboneSpec s = toy_spec(Family::RESNET, 3, 16, 16, 1);
  s.num_classes = 3;
  EXPECT_THROW(build_backbone(s), Error);
  s = toy_spec(Family::RESNET, 3, 16, 16, 1);
  s.width_scale = 0.001;
  try {
    build_backbone(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero-channel"), std::string::npos);
  }
  s = toy_spec(Family::SHUFFLENET, 3, 16, 16, 1);
  s.stage_depths = {1, 1, 1, 1};
  EXPECT_THROW(build_backbone(s), Error);
  EXPECT_THROW(parse_family("ALEXNET"), Error);
}

// Published torchvision parameter counts (3-channel input, 1000 classes), with
// the 1000-way final layer replaced by a 2-way one.
struct FullCount {
  Family family;
  std::size_t torchvision_total;
  std::size_t final_in;
};

class FullScaleCount : public ::testing::TestWithParam<FullCount> {};

INSTANTIATE_TEST_SUITE_P(Zoo, FullScaleCount,
                         ::testing::Values(FullCount{Family::RESNET, 44549160, 2048},
                                           FullCount{Family::SQUEEZENET, 1235496, 512},
                                           FullCount{Family::DENSENET, 20013928, 1920},
                                           FullCount{Family::VGG, 143667240, 4096},
                                           FullCount{Family::MOBILENET, 3504872, 1280},
                                           FullCount{Family::SHUFFLENET, 2278604, 1024}),
                         [](const auto& info) { return fname(info.param.family); });

TEST_P(FullScaleCount, MatchesTorchvisionWithTwoClassHead) {
  const auto c = GetParam();
  BackboneModel m(full_scale_spec(c.family, 3, 224, 224, 1));
  const std::size_t expected = c.torchvision_total - (c.final_in * 1000 + 1000) + (c.final_in * 2 + 2);
  EXPECT_EQ(m.parameter_count(), expected);
}
