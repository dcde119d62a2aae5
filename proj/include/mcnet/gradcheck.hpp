#pragma once

// Central finite-difference verification of analytic backward passes.
//
// The scalar probed is f(x, params) = sum(r * forward(x)) for a fixed random
// r, so backward(r) must return df/dx and leave df/dparam in the grads.
// Everything runs in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/backbones.hpp"
#include "mcnet/heads.hpp"
#include "mcnet/layers.hpp"
#include "mcnet/scorenorm.hpp"

namespace mcnet {

struct GradCheckConfig {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // near-zero entries from turning rounding noise into large ratios.
  double floor = 1e-6;
  std::size_t entries_per_tensor = 16;
  // Skip entries where one-sided differences disagree, i.e. the probe step
  // crossed a relu zero or a max tie. Only enabled for kinked layers.
  double kink_ratio = 1e-4;
};

struct TensorCheck {
  std::string group;   // layer kind or scope label
  std::string tensor;  // "input" or parameter name
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::string scope;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::vector<TensorCheck> checks;

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const TensorCheck& c) { return c.passed; });
  }

  /// Worst error per group, in first-seen order.
  [[nodiscard]] std::vector<TensorCheck> by_group() const {
    std::vector<TensorCheck> out;
    for (const auto& c : checks) {
      auto it = std::find_if(out.begin(), out.end(), [&](const TensorCheck& o) { return o.group == c.group; });
      if (it == out.end()) {
        out.push_back(TensorCheck{c.group, c.tensor, c.checked, c.skipped, c.max_rel_error, c.passed});
        continue;
      }
      it->checked += c.checked;
      it->skipped += c.skipped;
      if (c.max_rel_error > it->max_rel_error) {
        it->max_rel_error = c.max_rel_error;
        it->tensor = c.tensor;
      }
      it->passed = it->passed && c.passed;
    }
    return out;
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << "gradcheck scope=" << scope << " seed=" << seed << " tolerance=" << tolerance << "\n";
    for (const auto& g : by_group()) {
      os << "  " << (g.passed ? "PASS" : "FAIL") << "  " << std::left << std::setw(18) << g.group
         << " max_rel_err=" << std::scientific << std::setprecision(3) << g.max_rel_error << std::defaultfloat
         << "  checked=" << g.checked << " skipped=" << g.skipped << "  worst=" << g.tensor << "\n";
    }
    os << (passed() ? "all groups pass" : "FAILED") << "\n";
    return os.str();
  }
};

/// A differentiable function under test, expressed as callables.
struct Probe {
  std::function<Tensor<double>(const Tensor<double>&)> forward;
  std::function<Tensor<double>(const Tensor<double>&)> backward;  // returns grad wrt input
  std::function<std::vector<Parameter<double>*>()> parameters;
  std::function<void()> zero_grad;
};

inline Probe probe_of(Layer<double>& layer, Mode mode = Mode::train) {
  return Probe{[&layer, mode](const Tensor<double>& x) { return layer.forward(x, mode); },
               [&layer](const Tensor<double>& g) { return layer.backward(g); },
               [&layer] { return layer.parameters(); }, [&layer] { layer.zero_grad(); }};
}

inline Probe probe_of(Model<double>& model, Mode mode = Mode::train) {
  return Probe{[&model, mode](const Tensor<double>& x) { return model.forward(x, mode).scores; },
               [&model](const Tensor<double>& g) { return model.backward(g); },
               [&model] { return model.parameters(); }, [&model] { model.zero_grad(); }};
}

namespace detail {

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
  return s;
}

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, SeededRng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= k) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Checks d/dx and d/dparam of `probe` at `x`. Appends one TensorCheck per
/// tensor to `report`, labelled with `group`.
inline void check_probe(const Probe& probe, Tensor<double> x, const std::string& group, bool has_kinks,
                        SeededRng& rng, const GradCheckConfig& cfg, GradCheckReport& report,
                        bool check_input = true) {
  Tensor<double> y = probe.forward(x);
  const Tensor<double> r = Tensor<double>::uniform(y.shape(), -1.0, 1.0, rng);
  probe.zero_grad();
  probe.forward(x);
  const Tensor<double> gx = probe.backward(r);
  auto params = probe.parameters();
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto f = [&] { return detail::weighted_sum(probe.forward(x), r); };
  auto run = [&](const std::string& tensor, std::span<double> values, const Tensor<double>& grad) {
    TensorCheck tc{group, tensor};
    for (std::size_t i : detail::sample_indices(values.size(), cfg.entries_per_tensor, rng)) {
      const double orig = values[i];
      values[i] = orig + cfg.eps;
      const double fp = f();
      values[i] = orig - cfg.eps;
      const double fm = f();
      values[i] = orig;
      if (has_kinks) {
        // Smooth curvature makes the one-sided gap shrink linearly with the
        // step; a crossed kink does not. Confirm suspects at a quarter step.
        const double f0 = f();
        const double gap = (fp - f0) / cfg.eps - (f0 - fm) / cfg.eps;
        const double scale = std::max({std::abs(fp - fm) / (2 * cfg.eps), 1e-3});
        if (std::abs(gap) > cfg.kink_ratio * scale) {
          const double h = cfg.eps / 4;
          values[i] = orig + h;
          const double fp4 = f();
          values[i] = orig - h;
          const double fm4 = f();
          values[i] = orig;
          const double gap4 = (fp4 - f0) / h - (f0 - fm4) / h;
          if (std::abs(gap4 - gap / 4) > 0.25 * std::abs(gap)) {
            ++tc.skipped;
            continue;
          }
        }
      }
      const double numeric = (fp - fm) / (2 * cfg.eps);
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), cfg.floor});
      tc.max_rel_error = std::max(tc.max_rel_error, std::abs(a - numeric) / denom);
      ++tc.checked;
    }
    tc.passed = tc.max_rel_error < cfg.tolerance && tc.checked > 0;
    report.checks.push_back(tc);
  };
  if (check_input) run("input", x.data(), gx);
  for (std::size_t k = 0; k < params.size(); ++k) run(params[k]->name, params[k]->value.data(), analytic[k]);
}

/// check_probe on one layer, grouped under "<kind>:<name>" so a failure
/// names the layer.
inline void check_layer(Layer<double>& layer, const Tensor<double>& x, bool has_kinks, SeededRng& rng,
                        const GradCheckConfig& cfg, GradCheckReport& report, Mode mode = Mode::train) {
  check_probe(probe_of(layer, mode), x, std::string(layer.kind()) + ":" + layer.name(), has_kinks, rng, cfg, report);
}

inline GradCheckReport gradcheck_layers(std::uint64_t seed, const GradCheckConfig& cfg = {},
                                        std::size_t repeats = 20) {
  GradCheckReport report{"layers", seed, cfg.tolerance, {}};
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    SeededRng rng = SeededRng(seed).split(rep);
    auto img = [&](std::size_t B, std::size_t C, std::size_t H, std::size_t W) {
      return Tensor<double>::uniform(Shape{B, C, H, W}, -1.0, 1.0, rng);
    };
    {
      Conv2d<double> l("conv3x3", 3, 4, 3, 1, 1, true, rng);
      check_probe(probe_of(l), img(2, 3, 5, 5), "conv3x3", false, rng, cfg, report);
    }
    {
      Conv2d<double> l("conv3x3_s2", 3, 4, 3, 2, 1, false, rng);
      check_probe(probe_of(l), img(2, 3, 6, 5), "conv3x3_stride2", false, rng, cfg, report);
    }
    {
      Conv2d<double> l("conv1x1", 4, 3, 1, 2, 0, false, rng);
      check_probe(probe_of(l), img(2, 4, 5, 5), "conv1x1", false, rng, cfg, report);
    }
    {
      MaxPool2x2<double> l("maxpool");
      check_probe(probe_of(l), img(2, 2, 5, 6), "maxpool2x2", true, rng, cfg, report);
    }
    {
      AdaptiveMaxPool<double> l("adaptive_pool", 2, 3);
      check_probe(probe_of(l), img(2, 2, 5, 7), "adaptive_maxpool", true, rng, cfg, report);
    }
    {
      BatchNorm2d<double> l("bn", 3);
      check_probe(probe_of(l, Mode::train), img(3, 3, 2, 3), "batchnorm_train", false, rng, cfg, report);
      check_probe(probe_of(l, Mode::eval), img(3, 3, 2, 3), "batchnorm_eval", false, rng, cfg, report);
    }
    {
      Linear<double> l("fc", 6, 4, true, rng);
      check_probe(probe_of(l), Tensor<double>::uniform(Shape{3, 6}, -1.0, 1.0, rng), "linear", false, rng, cfg,
                  report);
    }
    {
      ReLU<double> l("relu");
      check_probe(probe_of(l), img(2, 2, 3, 3), "relu", true, rng, cfg, report);
    }
    {
      Softplus<double> l("softplus");
      check_probe(probe_of(l), Tensor<double>::uniform(Shape{3, 5}, -4.0, 4.0, rng), "softplus", false, rng, cfg,
                  report);
    }
    for (auto kind : {NormalizerKind::softmax_l1exp, NormalizerKind::l2_sqrtexp}) {
      ScoreNormalize<double> l("norm", kind);
      check_probe(probe_of(l), Tensor<double>::uniform(Shape{3, 5}, -3.0, 3.0, rng),
                  std::string(to_string(kind)) + "_norm", false, rng, cfg, report);
    }
    {
      auto main = std::make_unique<Sequential<double>>("res.main");
      main->emplace<Conv2d<double>>("res.conv1", 2, 3, 3, 2, 1, false, rng);
      main->emplace<BatchNorm2d<double>>("res.bn1", 3);
      main->emplace<ReLU<double>>("res.relu1");
      main->emplace<Conv2d<double>>("res.conv2", 3, 3, 3, 1, 1, false, rng);
      auto proj = std::make_unique<Sequential<double>>("res.shortcut");
      proj->emplace<Conv2d<double>>("res.proj", 2, 3, 1, 2, 0, false, rng);
      ResidualBlock<double> l("res", std::move(main), std::move(proj));
      check_probe(probe_of(l), img(2, 2, 4, 4), "residual_block", true, rng, cfg, report);
    }
    {
      auto inner = std::make_unique<Sequential<double>>("cat.inner");
      inner->emplace<Conv2d<double>>("cat.conv", 2, 3, 3, 1, 1, true, rng);
      ConcatBlock<double> l("cat", std::move(inner));
      check_probe(probe_of(l), img(2, 2, 3, 3), "concat_merge", false, rng, cfg, report);
    }
    {
      // fused softmax + cross-entropy gradient with respect to the logits
      const std::size_t N = 5;
      auto logits = Tensor<double>::uniform(Shape{N}, -3.0, 3.0, rng);
      const std::size_t label = rng.uniform_index(N);
      auto lg = softmax_cross_entropy<double>(logits.data(), label);
      TensorCheck tc{"cross_entropy", "logits"};
      for (std::size_t i = 0; i < N; ++i) {
        auto v = logits;
        v[i] += cfg.eps;
        const double fp = cross_entropy<double>(std::span<const double>(softmax<double>(ScoreVector<double>(v.vec()))), label);
        v[i] -= 2 * cfg.eps;
        const double fm = cross_entropy<double>(std::span<const double>(softmax<double>(ScoreVector<double>(v.vec()))), label);
        const double numeric = (fp - fm) / (2 * cfg.eps);
        const double denom = std::max({std::abs(lg.grad[i]), std::abs(numeric), cfg.floor});
        tc.max_rel_error = std::max(tc.max_rel_error, std::abs(lg.grad[i] - numeric) / denom);
        ++tc.checked;
      }
      tc.passed = tc.max_rel_error < cfg.tolerance;
      report.checks.push_back(tc);
    }
  }
  return report;
}

inline GradCheckReport gradcheck_head(std::uint64_t seed, const GradCheckConfig& cfg = {},
                                      std::size_t repeats = 20) {
  GradCheckReport report{"head", seed, cfg.tolerance, {}};
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    SeededRng rng = SeededRng(seed).split(rep);
    for (auto kind : {NormalizerKind::l2_sqrtexp, NormalizerKind::softmax_l1exp}) {
      ClassifierHead<double> head("head", 3, 4, 5, kind, rng);
      auto x = Tensor<double>::uniform(Shape{4, 3, 4, 4}, -1.0, 1.0, rng);
      check_probe(probe_of(head), x, std::string("head_") + to_string(kind), true, rng, cfg, report);
    }
  }
  return report;
}

/// Whole multi-head models on tiny inputs: the gradient reaching every
/// parameter passes through score aggregation and every head.
inline GradCheckReport gradcheck_model_mini(std::uint64_t seed, const GradCheckConfig& cfg = {},
                                            std::size_t repeats = 3) {
  GradCheckReport report{"model-mini", seed, cfg.tolerance, {}};
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    SeededRng rng = SeededRng(seed).split(rep);
    for (const char* name : {"mini_resnet", "mini_cnn"}) {
      for (auto mode : {ClassifierMode::multi_heads, ClassifierMode::original}) {
        Model<double> model(preset(name), ClassifierSpec{mode, 4, NormalizerKind::l2_sqrtexp}, rng);
        auto x = Tensor<double>::uniform(Shape{3, 3, 8, 8}, -1.0, 1.0, rng);
        check_probe(probe_of(model), x, std::string(name) + "_" + to_string(mode), true, rng, cfg, report);
      }
    }
  }
  return report;
}

inline std::vector<std::string> gradcheck_scopes() { return {"layers", "head", "model-mini"}; }

inline GradCheckReport gradcheck(std::string_view scope, std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  if (scope == "layers") return gradcheck_layers(seed, cfg);
  if (scope == "head") return gradcheck_head(seed, cfg);
  if (scope == "model-mini") return gradcheck_model_mini(seed, cfg);
  throw ContractError("unknown gradcheck scope '" + std::string(scope) + "' (layers, head, model-mini)");
}

}  // namespace mcnet
