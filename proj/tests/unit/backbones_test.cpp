#include <gtest/gtest.h>

#include <cmath>

#include "mcnet/backbones.hpp"
#include "mcnet/experiment.hpp"
#include "mcnet/gradcheck.hpp"

using namespace mcnet;

namespace {

Model<float> build(const std::string& name, ClassifierMode mode, std::size_t classes = 10) {
  SeededRng rng(0);
  return Model<float>(preset(name), ClassifierSpec{mode, classes, NormalizerKind::l2_sqrtexp}, rng);
}

std::vector<Shape> weight_shapes(const std::vector<Parameter<float>*>& ps, std::size_t rank) {
  std::vector<Shape> out;
  for (auto* p : ps)
    if (p->name.ends_with(".weight") && p->value.rank() == rank) out.push_back(p->value.shape());
  return out;
}

}  // namespace

TEST(Backbone, Vgg16OriginalStructure) {
  auto m = build("vgg16", ClassifierMode::original);
  EXPECT_EQ(m.num_sets(), 5u);
  EXPECT_EQ(m.num_heads(), 0u);
  std::size_t convs = 0;
  for (std::size_t t = 0; t < m.num_sets(); ++t) convs += weight_shapes(m.set(t).parameters(), 4).size();
  EXPECT_EQ(convs, 13u);
  ASSERT_NE(m.classifier(), nullptr);
  const auto fc = weight_shapes(m.classifier()->parameters(), 2);
  ASSERT_EQ(fc.size(), 3u);
  EXPECT_EQ(fc[0], (Shape{512, 4096}));
  EXPECT_EQ(fc[1], (Shape{4096, 4096}));
  EXPECT_EQ(fc[2], (Shape{4096, 10}));
}

TEST(Backbone, Resnet18MultiHasFiveFullHeads) {
  auto m = build("resnet18", ClassifierMode::multi_heads);
  ASSERT_EQ(m.num_heads(), 5u);
  EXPECT_EQ(m.classifier(), nullptr);
  for (std::size_t t = 0; t < 5; ++t) {
    const auto ps = m.head(t).parameters();
    const auto conv = weight_shapes(ps, 4), fc = weight_shapes(ps, 2);
    ASSERT_EQ(conv.size(), 1u);
    EXPECT_EQ(conv[0][0], 512u);
    EXPECT_EQ(conv[0][2], 3u);
    ASSERT_EQ(fc.size(), 1u);
    EXPECT_EQ(fc[0], (Shape{512, 10}));
  }
}

TEST(Backbone, HeadCountEqualsSetCount) {
  for (const auto& name : preset_names()) {
    auto m = build(name, ClassifierMode::multi_heads);
    EXPECT_EQ(m.num_heads(), m.num_sets()) << name;
  }
}

TEST(Backbone, MiniCnnSingleHeadForward) {
  auto m = build("mini_cnn", ClassifierMode::multi_heads, 4);
  EXPECT_EQ(m.num_heads(), 1u);
  SeededRng rng(1);
  const auto out = m.forward(Tensor<float>::uniform(Shape{3, 3, 8, 8}, 0.f, 1.f, rng), Mode::train);
  EXPECT_EQ(out.scores.shape(), (Shape{3, 4}));
  ASSERT_EQ(out.per_head.size(), 1u);
  EXPECT_EQ(out.scores, out.per_head[0]);
}

TEST(Backbone, EvalForwardIsBitwiseDeterministic) {
  auto m = build("mini_resnet", ClassifierMode::multi_heads);
  SeededRng rng(2);
  const auto x = Tensor<float>::uniform(Shape{2, 3, 16, 16}, 0.f, 1.f, rng);
  EXPECT_EQ(m.forward(x, Mode::eval).scores, m.forward(x, Mode::eval).scores);
}

TEST(Backbone, TooSmallInputNamesTheSet) {
  auto m = build("vgg16", ClassifierMode::original);
  try {
    m.forward(Tensor<float>(Shape{1, 3, 8, 8}), Mode::eval);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("set"), std::string::npos) << e.what();
  }
  EXPECT_THROW(propagate_shapes(preset("vgg16"), Shape{1, 3, 8, 8}), ShapeError);
}

TEST(Backbone, InconsistentSpecIsRejected) {
  BackboneSpec s = preset("mini_cnn");
  s.sets.clear();
  SeededRng rng(0);
  EXPECT_ANY_THROW(Model<float>(s, ClassifierSpec{}, rng));
  EXPECT_THROW(preset("alexnet"), ContractError);
}

TEST(Backbone, ShapeOracleMatchesForward) {
  for (const auto& name : preset_names()) {
    if (name == "vgg16" || name == "resnet18") continue;  // full-size forwards are slow in debug builds
    auto m = build(name, ClassifierMode::multi_heads);
    const Shape in{2, 3, 16, 16};
    const auto expected = propagate_shapes(m.spec(), in);
    Tensor<float> h(in);
    for (std::size_t t = 0; t < m.num_sets(); ++t) {
      h = m.set(t).forward(h, Mode::eval);
      EXPECT_EQ(h.shape(), expected[t]) << name << " set " << t + 1;
    }
  }
  for (const auto& name : {"vgg16", "resnet18"}) {
    auto m = build(name, ClassifierMode::original);
    const auto st = m.stats(Shape{1, 3, 32, 32});
    const auto expected = propagate_shapes(m.spec(), Shape{1, 3, 32, 32});
    for (std::size_t t = 0; t < st.sets.size(); ++t) EXPECT_EQ(st.sets[t].output, expected[t]) << name;
  }
}

TEST(Stats, SingleConvMacs) {
  SeededRng rng(0);
  Conv2d<float> conv("c", 1, 1, 3, 1, 1, false, rng);
  EXPECT_EQ(conv.cost(Shape{1, 1, 4, 4}).macs, 144u);
}

TEST(Stats, AdditivityAndParameterAgreement) {
  for (const auto& name : preset_names())
    for (auto mode : {ClassifierMode::original, ClassifierMode::multi_heads}) {
      auto m = build(name, mode);
      const auto st = m.stats(Shape{1, 3, 32, 32});
      std::size_t sum = 0, live = 0;
      for (const auto& c : st.sets) sum += c.params;
      for (const auto& c : st.heads) sum += c.params;
      if (st.classifier) sum += st.classifier->params;
      for (auto* p : m.parameters()) live += p->value.numel();
      EXPECT_EQ(st.params(), sum) << name;
      EXPECT_EQ(st.params(), live) << name;
    }
}

TEST(Stats, MiniCnnHandCount) {
  // conv 3->8 3x3 with bias, relu, maxpool; original: pool + fc 8->10
  const auto o = model_stats("mini_cnn", ClassifierMode::original, 10, Shape{1, 3, 32, 32});
  EXPECT_EQ(o.params(), (8u * 27 + 8) + (8u * 10 + 10));
  EXPECT_EQ(o.sets[0].macs + o.classifier->macs, 8u * 27 * 32 * 32 + 8u * 10);
  // head: conv 8->8 3x3 no bias, batchnorm, fc 8->10
  const auto m = model_stats("mini_cnn", ClassifierMode::multi_heads, 10, Shape{1, 3, 32, 32});
  EXPECT_EQ(m.params(), (8u * 27 + 8) + (8u * 72) + 16 + (8u * 10 + 10));
  EXPECT_EQ(m.heads[0].macs, 8u * 72 * 16 * 16 + 8u * 10);
}

TEST(Stats, FlopConventionDoublesMacs) {
  const auto st = model_stats("mini_vgg", ClassifierMode::multi_heads, 10, Shape{1, 3, 32, 32});
  std::size_t macs = 0;
  for (const auto& c : st.sets) macs += c.macs;
  for (const auto& c : st.heads) macs += c.macs;
  EXPECT_EQ(st.flops(FlopConvention::mul_add) - st.flops(FlopConvention::mac), macs);
}

TEST(Stats, Resnet18ParameterRatio) {
  const auto o = model_stats("resnet18", ClassifierMode::original, 10, Shape{1, 3, 32, 32});
  const auto m = model_stats("resnet18", ClassifierMode::multi_heads, 10, Shape{1, 3, 32, 32});
  const double ratio = static_cast<double>(m.params()) / static_cast<double>(o.params());
  EXPECT_NEAR(ratio, 15.9 / 10.2, 0.15);
  EXPECT_GE(ratio, 1.25);
  EXPECT_LE(ratio, 1.65);
  EXPECT_NEAR(static_cast<double>(o.params()) / 1e6, 10.2, 0.15 * 10.2);
}

TEST(Stats, MultiHeadTotalsMatchReferenceCounts) {
  for (const auto& ref : reference_counts()) {
    const auto m = model_stats(ref.model, ClassifierMode::multi_heads, 10, Shape{1, 3, 32, 32});
    EXPECT_NEAR(static_cast<double>(m.params()) / 1e6, ref.multi_params_m, 0.15 * ref.multi_params_m) << ref.model;
  }
}

TEST(ModelGradients, MiniModelsPass) {
  const auto r = gradcheck_model_mini(0, {}, 1);
  EXPECT_TRUE(r.passed()) << r.str();
}
