#include <gtest/gtest.h>

#include "mcnet/gradcheck.hpp"
#include "mcnet/heads.hpp"

using namespace mcnet;

namespace {

Tensor<double> run_head(ClassifierHead<double>& head, const Shape& in, std::uint64_t seed) {
  SeededRng rng(seed);
  return head.forward(Tensor<double>::normal(in, 0.0, 1.0, rng), Mode::train);
}

}  // namespace

TEST(Head, L2RowsHaveUnitNorm) {
  SeededRng rng(1);
  ClassifierHead<double> head("h", 8, 16, 10, NormalizerKind::l2_sqrtexp, rng);
  const auto c = run_head(head, Shape{4, 8, 5, 5}, 2);
  ASSERT_EQ(c.shape(), (Shape{4, 10}));
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0;
    for (std::size_t k = 0; k < 10; ++k) {
      const double v = c[b * 10 + k];
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      s += v * v;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Head, OutputShapeIndependentOfSpatialSize) {
  SeededRng rng(3);
  ClassifierHead<double> head("h", 3, 8, 5, NormalizerKind::l2_sqrtexp, rng);
  EXPECT_EQ(run_head(head, Shape{2, 3, 4, 4}, 1).shape(), (Shape{2, 5}));
  EXPECT_EQ(run_head(head, Shape{2, 3, 32, 32}, 1).shape(), (Shape{2, 5}));
}

TEST(Head, ChannelMismatchIsShapeError) {
  SeededRng rng(4);
  ClassifierHead<double> head("h", 3, 8, 5, NormalizerKind::l2_sqrtexp, rng);
  EXPECT_THROW(run_head(head, Shape{2, 4, 4, 4}, 1), ShapeError);
}

TEST(Head, NormalizerSwapKeepsArgmax) {
  SeededRng a(5), b(5);
  ClassifierHead<double> l2("h", 4, 8, 6, NormalizerKind::l2_sqrtexp, a);
  ClassifierHead<double> sm("h", 4, 8, 6, NormalizerKind::softmax_l1exp, b);
  const auto cl = run_head(l2, Shape{16, 4, 3, 3}, 9), cs = run_head(sm, Shape{16, 4, 3, 3}, 9);
  EXPECT_NE(cl, cs);
  EXPECT_EQ(predict(cl), predict(cs));
}

TEST(Aggregate, Examples) {
  const Tensor<double> c1(Shape{1, 2}, std::vector<double>{0.6, 0.8}), c2(Shape{1, 2}, std::vector<double>{0.8, 0.6});
  EXPECT_EQ(aggregate_scores<double>({c1}), c1);
  const auto s = aggregate_scores<double>({c1, c2});
  EXPECT_NEAR(s[0], 1.4, 1e-15);
  EXPECT_NEAR(s[1], 1.4, 1e-15);
  EXPECT_THROW(aggregate_scores<double>({}), ContractError);
}

TEST(Predict, TieRuleAndExamples) {
  const Tensor<double> s(Shape{2, 3}, std::vector<double>{1.4, 1.4, 0.2, 0.1, 2.0, 0.5});
  EXPECT_EQ(predict(s), (std::vector<std::size_t>{0, 1}));
}

TEST(Predict, InvariantUnderSoftmax) {
  SeededRng rng(6);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> v(7);
    for (auto& e : v) e = rng.uniform(-10.0, 10.0);
    const auto p = softmax(ScoreVector<double>(v));
    EXPECT_EQ(predict(Tensor<double>(Shape{1, 7}, v)), predict(Tensor<double>(Shape{1, 7}, p)));
  }
}

TEST(Head, GradientsPass) {
  const auto r = gradcheck_head(0);
  EXPECT_TRUE(r.passed()) << r.str();
}
