#include <gtest/gtest.h>

#include "mcnet/gradcheck.hpp"

using namespace mcnet;

namespace {

// y = w * x elementwise with a scalar parameter w; backward can be skewed.
class ScaleLayer final : public Layer<double> {
 public:
  ScaleLayer(std::string name, double input_skew, double param_skew)
      : Layer<double>(std::move(name)), input_skew_(input_skew), param_skew_(param_skew) {
    w_ = Parameter<double>{this->name() + ".w", Tensor<double>(Shape{1}, 1.5), Tensor<double>(Shape{1})};
  }
  [[nodiscard]] std::string_view kind() const override { return "scale"; }
  Tensor<double> forward(const Tensor<double>& x, Mode) override {
    x_ = x;
    Tensor<double> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = w_.value[0] * x[i];
    return y;
  }
  Tensor<double> backward(const Tensor<double>& g) override {
    Tensor<double> gx(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      gx[i] = input_skew_ * w_.value[0] * g[i];
      w_.grad[0] += param_skew_ * x_[i] * g[i];
    }
    return gx;
  }
  [[nodiscard]] LayerCost cost(const Shape& in) const override { return LayerCost{in, 1, in.numel(), 0}; }
  void collect_parameters(std::vector<Parameter<double>*>& out) override { out.push_back(&w_); }

 private:
  double input_skew_, param_skew_;
  Parameter<double> w_;
  Tensor<double> x_;
};

GradCheckReport check(ScaleLayer& l) {
  GradCheckReport r{"fixture", 0, 1e-4, {}};
  SeededRng rng(1);
  check_layer(l, Tensor<double>::uniform(Shape{2, 5}, -1.0, 1.0, rng), false, rng, {}, r);
  return r;
}

}  // namespace

TEST(GradCheck, CorrectFixturePasses) {
  ScaleLayer l("exact", 1.0, 1.0);
  EXPECT_TRUE(check(l).passed()) << check(l).str();
}

TEST(GradCheck, PerturbedInputGradientNamesTheLayer) {
  ScaleLayer l("skewed_input", 1.01, 1.0);
  const auto r = check(l);
  ASSERT_FALSE(r.passed());
  const std::string text = r.str();
  EXPECT_NE(text.find("FAIL  scale:skewed_input"), std::string::npos) << text;
  for (const auto& c : r.checks) EXPECT_TRUE(c.tensor != "input" || !c.passed);
}

TEST(GradCheck, PerturbedParameterGradientNamesTheTensor) {
  ScaleLayer l("skewed_param", 1.0, 0.9);
  const auto r = check(l);
  ASSERT_FALSE(r.passed());
  bool named = false;
  for (const auto& c : r.checks)
    if (!c.passed) named = named || c.tensor == "skewed_param.w";
  EXPECT_TRUE(named) << r.str();
}

TEST(GradCheck, SameSeedSameReport) {
  EXPECT_EQ(gradcheck("head", 3).str(), gradcheck("head", 3).str());
  EXPECT_THROW(gradcheck("everything", 0), ContractError);
}

TEST(GradCheck, ComposedResidualBlockPassesAtTighterTolerance) {
  GradCheckConfig cfg;
  cfg.tolerance = 1e-5;
  const auto r = gradcheck_layers(4, cfg, 1);
  for (const auto& g : r.by_group()) EXPECT_TRUE(g.group != "residual_block" || g.passed) << r.str();
}
