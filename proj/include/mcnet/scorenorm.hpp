#pragma once

// Score normalizers and their derivatives.
//
//   softmax  S_i = e^{x_i} / sum_k e^{x_k}             (L1 normalization of e^x)
//   l2_score L_i = sqrt(e^{x_i}) / sqrt(sum_k e^{x_k})  (L2 normalization of sqrt(e^x))
//
// so L = sqrt(S). The `*_partial` routines return only the off-diagonal
// entries, evaluated factor by factor; `jacobian_*` return the full matrix
// used by backpropagation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mcnet/errors.hpp"

namespace mcnet {

template <typename T>
class ScoreVector {
 public:
  ScoreVector(std::vector<T> values) : values_(std::move(values)) {  // NOLINT(implicit)
    if (values_.size() < 2)
      throw ShapeError("score vector needs at least 2 categories, got " + std::to_string(values_.size()));
    for (T v : values_)
      if (!std::isfinite(v)) throw DomainError("score vector contains a non-finite value");
  }
  ScoreVector(std::initializer_list<T> values) : ScoreVector(std::vector<T>(values)) {}

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  T operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const T> values() const { return values_; }
  [[nodiscard]] T max() const { return *std::max_element(values_.begin(), values_.end()); }

 private:
  std::vector<T> values_;
};

enum class NormalizerKind { softmax_l1exp, l2_sqrtexp };

inline const char* to_string(NormalizerKind k) {
  return k == NormalizerKind::softmax_l1exp ? "softmax" : "l2";
}

namespace detail {

/// e^{x_k - max x} and their sum. Every formula below is invariant to a
/// common scale of the exponentials, so the shift is exact.
template <typename T>
struct ShiftedExp {
  std::vector<T> e;
  T sum = 0;
};

template <typename T>
ShiftedExp<T> shifted_exp(std::span<const T> x) {
  const T m = *std::max_element(x.begin(), x.end());
  ShiftedExp<T> r{std::vector<T>(x.size()), T(0)};
  for (std::size_t k = 0; k < x.size(); ++k) {
    r.e[k] = std::exp(x[k] - m);
    r.sum += r.e[k];
  }
  return r;
}

inline void check_pair(std::size_t n, std::size_t i, std::size_t j) {
  if (i >= n || j >= n) throw ContractError("score index out of range");
  if (i == j)
    throw ContractError("off-diagonal partial requested with i == j; use the full Jacobian");
}

}  // namespace detail

// --- span kernels (used by layers on batch rows) ---------------------------

template <typename T>
void softmax_into(std::span<const T> x, std::span<T> out) {
  const auto s = detail::shifted_exp(x);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = s.e[k] / s.sum;
}

/// Computed from e^{(x_i - m)/2} directly rather than as sqrt(softmax), so
/// that the L = sqrt(S) identity is a real check of two code paths.
template <typename T>
void l2_score_into(std::span<const T> x, std::span<T> out) {
  const T m = *std::max_element(x.begin(), x.end());
  T sum = 0;
  for (std::size_t k = 0; k < x.size(); ++k) sum += std::exp(x[k] - m);
  const T root = std::sqrt(sum);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = std::exp((x[k] - m) / T(2)) / root;
}

template <typename T>
std::vector<T> softmax(const ScoreVector<T>& x) {
  std::vector<T> out(x.size());
  softmax_into<T>(x.values(), out);
  return out;
}

template <typename T>
std::vector<T> l2_score(const ScoreVector<T>& x) {
  std::vector<T> out(x.size());
  l2_score_into<T>(x.values(), out);
  return out;
}

template <typename T>
std::vector<T> normalize(NormalizerKind kind, const ScoreVector<T>& x) {
  return kind == NormalizerKind::softmax_l1exp ? softmax(x) : l2_score(x);
}

/// (1/sum e) * (-e^{x_i}/sum e) * e^{x_j}, i != j.
template <typename T>
T softmax_partial(const ScoreVector<T>& x, std::size_t i, std::size_t j) {
  detail::check_pair(x.size(), i, j);
  const auto s = detail::shifted_exp(x.values());
  return (T(1) / s.sum) * (-s.e[i] / s.sum) * s.e[j];
}

/// (1/sqrt(sum e)) * (-sqrt(e^{x_i}) sqrt(e^{x_j}) / sum e) * (1/2) sqrt(e^{x_j}), i != j.
template <typename T>
T l2score_partial(const ScoreVector<T>& x, std::size_t i, std::size_t j) {
  detail::check_pair(x.size(), i, j);
  const auto s = detail::shifted_exp(x.values());
  const T ri = std::sqrt(s.e[i]), rj = std::sqrt(s.e[j]);
  return (T(1) / std::sqrt(s.sum)) * (-ri * rj / s.sum) * (T(0.5) * rj);
}

/// Row-major N x N, entry (i, j) = dS_i/dx_j = S_i (delta_ij - S_j).
template <typename T>
std::vector<T> jacobian_softmax(const ScoreVector<T>& x) {
  const std::size_t n = x.size();
  const auto S = softmax(x);
  std::vector<T> J(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) J[i * n + j] = S[i] * ((i == j ? T(1) : T(0)) - S[j]);
  return J;
}

/// Row-major N x N, entry (i, j) = dL_i/dx_j = (1/2) L_i (delta_ij - S_j).
template <typename T>
std::vector<T> jacobian_l2(const ScoreVector<T>& x) {
  const std::size_t n = x.size();
  const auto S = softmax(x);
  const auto L = l2_score(x);
  std::vector<T> J(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      J[i * n + j] = T(0.5) * L[i] * ((i == j ? T(1) : T(0)) - S[j]);
  return J;
}

/// Scalar map with derivative, for the generic normalizers.
template <typename T>
struct ScalarMap {
  std::function<T(T)> f;
  std::function<T(T)> df;
};

/// f(x_i) / sum_k f(x_k). Requires f > 0 on the inputs.
template <typename T>
std::vector<T> generic_l1(const ScoreVector<T>& x, const ScalarMap<T>& m) {
  std::vector<T> fx(x.size());
  T sum = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    fx[k] = m.f(x[k]);
    if (!(fx[k] > T(0))) throw DomainError("generic normalizer requires f(x) > 0");
    sum += fx[k];
  }
  for (auto& v : fx) v /= sum;
  return fx;
}

/// f(x_i) / sqrt(sum_k f(x_k)^2). Requires f > 0 on the inputs.
template <typename T>
std::vector<T> generic_l2(const ScoreVector<T>& x, const ScalarMap<T>& m) {
  std::vector<T> fx(x.size());
  T sum = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    fx[k] = m.f(x[k]);
    if (!(fx[k] > T(0))) throw DomainError("generic normalizer requires f(x) > 0");
    sum += fx[k] * fx[k];
  }
  const T r = std::sqrt(sum);
  for (auto& v : fx) v /= r;
  return fx;
}

template <typename T>
std::vector<T> jacobian_generic_l1(const ScoreVector<T>& x, const ScalarMap<T>& m) {
  const std::size_t n = x.size();
  std::vector<T> f(n), df(n);
  T sum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    f[k] = m.f(x[k]);
    df[k] = m.df(x[k]);
    sum += f[k];
  }
  std::vector<T> J(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      J[i * n + j] = ((i == j ? df[i] * sum : T(0)) - f[i] * df[j]) / (sum * sum);
  return J;
}

template <typename T>
std::vector<T> jacobian_generic_l2(const ScoreVector<T>& x, const ScalarMap<T>& m) {
  const std::size_t n = x.size();
  std::vector<T> f(n), df(n);
  T sum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    f[k] = m.f(x[k]);
    df[k] = m.df(x[k]);
    sum += f[k] * f[k];
  }
  const T r = std::sqrt(sum);
  std::vector<T> J(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      J[i * n + j] = (i == j ? df[i] / r : T(0)) - f[i] * f[j] * df[j] / (r * r * r);
  return J;
}

template <typename T>
ScalarMap<T> exp_map() {
  return {[](T v) { return std::exp(v); }, [](T v) { return std::exp(v); }};
}

template <typename T>
ScalarMap<T> sqrt_exp_map() {
  return {[](T v) { return std::exp(v / T(2)); }, [](T v) { return T(0.5) * std::exp(v / T(2)); }};
}

/// sum_k e^{x_k} <= 4 e^{x_i}, evaluated as sum_k e^{x_k - x_i} <= 4.
template <typename T>
bool convergence_condition(const ScoreVector<T>& x, std::size_t i) {
  if (i >= x.size()) throw ContractError("score index out of range");
  T sum = 0;
  for (std::size_t k = 0; k < x.size(); ++k) sum += std::exp(x[k] - x[i]);
  return sum <= T(4);
}

/// min_i x_i > ln(N/4).
template <typename T>
bool lower_bound_ok(const ScoreVector<T>& x) {
  const T bound = std::log(static_cast<T>(x.size()) / T(4));
  const auto v = x.values();
  return *std::min_element(v.begin(), v.end()) > bound;
}

template <typename T>
T cross_entropy(std::span<const T> probabilities, std::size_t label) {
  if (label >= probabilities.size())
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(probabilities.size()) + " categories");
  return -std::log(probabilities[label]);
}

template <typename T>
struct LossAndGrad {
  T loss;
  std::vector<T> grad;  // d loss / d logits
};

/// Cross-entropy of softmax(logits) via log-sum-exp; gradient p - onehot.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size())
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.size()) + " categories");
  const auto s = detail::shifted_exp(logits);
  const T m = *std::max_element(logits.begin(), logits.end());
  LossAndGrad<T> r{std::log(s.sum) + m - logits[label], std::vector<T>(logits.size())};
  for (std::size_t k = 0; k < logits.size(); ++k) r.grad[k] = s.e[k] / s.sum;
  r.grad[label] -= T(1);
  return r;
}

}  // namespace mcnet
