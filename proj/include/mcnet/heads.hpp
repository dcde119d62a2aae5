#pragma once

// Per-set classifier heads and score aggregation.
//
// A head maps a feature map h_t [B,C,H,W] to a score matrix [B,N]:
//   conv3x3 (C -> target, pad 1, no bias) -> adaptive max pool (1,1)
//   -> batchnorm -> linear (target -> N) -> softplus -> normalizer

#include <memory>
#include <string>
#include <vector>

#include "mcnet/layers.hpp"
#include "mcnet/scorenorm.hpp"

namespace mcnet {

/// Row-wise normalizer over [B,N] scores.
template <typename T>
class ScoreNormalize final : public Layer<T> {
 public:
  ScoreNormalize(std::string name, NormalizerKind kind) : Layer<T>(std::move(name)), kind_(kind) {}

  [[nodiscard]] std::string_view kind() const override {
    return kind_ == NormalizerKind::softmax_l1exp ? "softmax_norm" : "l2_norm";
  }
  [[nodiscard]] NormalizerKind normalizer() const { return kind_; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    detail::require(x.rank() == 2 && x.dim(1) >= 2, this->name() + ": expected [B,N] scores with N >= 2");
    const std::size_t B = x.dim(0), N = x.dim(1);
    soft_ = Tensor<T>(x.shape());
    out_ = Tensor<T>(x.shape());
    for (std::size_t b = 0; b < B; ++b) {
      auto row = x.data().subspan(b * N, N);
      softmax_into<T>(row, soft_.data().subspan(b * N, N));
      if (kind_ == NormalizerKind::l2_sqrtexp) l2_score_into<T>(row, out_.data().subspan(b * N, N));
    }
    if (kind_ == NormalizerKind::softmax_l1exp) out_ = soft_;
    return out_;
  }

  // softmax: g_x[j] = S_j (g_j - sum_i g_i S_i)
  // l2:      g_x[j] = 1/2 (g_j L_j - S_j sum_i g_i L_i)
  Tensor<T> backward(const Tensor<T>& g) override {
    if (out_.empty()) throw ContractError(this->name() + ": backward before forward");
    detail::require(g.shape() == out_.shape(), this->name() + ": grad shape mismatch");
    const std::size_t B = g.dim(0), N = g.dim(1);
    Tensor<T> gx(g.shape());
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t o = b * N;
      T dot = 0;
      for (std::size_t i = 0; i < N; ++i) dot += g[o + i] * out_[o + i];
      for (std::size_t j = 0; j < N; ++j) {
        if (kind_ == NormalizerKind::softmax_l1exp)
          gx[o + j] = soft_[o + j] * (g[o + j] - dot);
        else
          gx[o + j] = T(0.5) * (g[o + j] * out_[o + j] - soft_[o + j] * dot);
      }
    }
    return gx;
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override { return LayerCost{in, 0, 0, in.numel()}; }

 private:
  NormalizerKind kind_;
  Tensor<T> soft_, out_;
};

template <typename T>
class ClassifierHead final : public Layer<T> {
 public:
  ClassifierHead(std::string name, std::size_t in_channels, std::size_t target_channels,
                 std::size_t num_classes, NormalizerKind normalizer, SeededRng& rng)
      : Layer<T>(std::move(name)), in_channels_(in_channels), num_classes_(num_classes) {
    if (num_classes < 2) throw ShapeError("a classifier head needs at least 2 categories");
    const std::string& n = this->name();
    body_ = std::make_unique<Sequential<T>>(n);
    body_->template emplace<Conv2d<T>>(n + ".conv", in_channels, target_channels, 3, 1, 1, false, rng);
    body_->template emplace<AdaptiveMaxPool<T>>(n + ".pool", 1, 1);
    body_->template emplace<BatchNorm2d<T>>(n + ".bn", target_channels);
    body_->template emplace<Linear<T>>(n + ".fc", target_channels, num_classes, true, rng);
    body_->template emplace<Softplus<T>>(n + ".softplus");
    body_->template emplace<ScoreNormalize<T>>(n + ".norm", normalizer);
  }

  [[nodiscard]] std::string_view kind() const override { return "classifier_head"; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (x.rank() != 4 || x.dim(1) != in_channels_)
      throw ShapeError(this->name() + ": expected " + std::to_string(in_channels_) +
                       " input channels, got shape " + x.shape().str());
    return body_->forward(x, mode);
  }
  Tensor<T> backward(const Tensor<T>& g) override { return body_->backward(g); }
  [[nodiscard]] LayerCost cost(const Shape& in) const override { return body_->cost(in); }

  void collect_parameters(std::vector<Parameter<T>*>& out) override { body_->collect_parameters(out); }
  void collect_buffers(std::vector<BufferRef<T>>& out) override { body_->collect_buffers(out); }

  [[nodiscard]] std::size_t in_channels() const { return in_channels_; }
  [[nodiscard]] std::size_t num_classes() const { return num_classes_; }
  Sequential<T>& body() { return *body_; }

 private:
  std::size_t in_channels_, num_classes_;
  std::unique_ptr<Sequential<T>> body_;
};

/// Elementwise sum of per-head scores, in head order.
template <typename T>
Tensor<T> aggregate_scores(const std::vector<Tensor<T>>& cs) {
  if (cs.empty()) throw ContractError("aggregate_scores needs at least one head output");
  Tensor<T> sum = cs.front();
  for (std::size_t t = 1; t < cs.size(); ++t) add_inplace(sum, cs[t]);
  return sum;
}

/// Row-wise argmax of [B,N]; ties go to the lowest index.
template <typename T>
std::vector<std::size_t> predict(const Tensor<T>& scores) {
  detail::require(scores.rank() == 2, "predict expects [B,N] scores");
  const std::size_t B = scores.dim(0), N = scores.dim(1);
  std::vector<std::size_t> labels(B);
  for (std::size_t b = 0; b < B; ++b) labels[b] = argmax<T>(scores.data().subspan(b * N, N));
  return labels;
}

}  // namespace mcnet
