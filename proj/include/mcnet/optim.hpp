#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mcnet/layers.hpp"

namespace mcnet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

/// One bias-corrected Adam update over `params`. State is lazily sized to
/// zeros on the first call.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("optimizer state holds " + std::to_string(state.m.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (!(p.grad.shape() == p.value.shape()) || !(state.m[k].shape() == p.value.shape()))
      throw ShapeError(p.name + ": gradient or optimizer state shape does not match the parameter");
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

struct PlateauConfig {
  double factor = 0.1;
  std::size_t patience = 10;
  double threshold = 1e-4;  // relative
  double min_lr = 1e-6;
};

/// Reduce-on-plateau on a minimized quantity. An epoch improves when
/// loss < best * (1 - threshold); after more than `patience` consecutive
/// non-improving epochs the rate is multiplied by `factor` and the count
/// restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, PlateauConfig cfg = {}) : lr_(lr), cfg_(cfg) {}

  double step(double loss) {
    if (loss < best_ * (1.0 - cfg_.threshold)) {
      best_ = loss;
      bad_epochs_ = 0;
    } else {
      ++bad_epochs_;
    }
    if (bad_epochs_ > cfg_.patience) {
      lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
      bad_epochs_ = 0;
      ++reductions_;
    }
    return lr_;
  }

  [[nodiscard]] double lr() const { return lr_; }
  [[nodiscard]] double best() const { return best_; }
  [[nodiscard]] std::size_t bad_epochs() const { return bad_epochs_; }
  [[nodiscard]] std::size_t reductions() const { return reductions_; }
  [[nodiscard]] const PlateauConfig& config() const { return cfg_; }

  void restore(double lr, double best, std::size_t bad_epochs, std::size_t reductions) {
    lr_ = lr;
    best_ = best;
    bad_epochs_ = bad_epochs;
    reductions_ = reductions;
  }

 private:
  double lr_;
  PlateauConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

}  // namespace mcnet
