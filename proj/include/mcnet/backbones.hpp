#pragma once

// Backbones as ordered chains of sets, h_t = Set_t(h_{t-1}), with either one
// classifier on the last feature map ("original") or one head per set whose
// scores are summed ("multi_heads").

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcnet/heads.hpp"
#include "mcnet/layers.hpp"

namespace mcnet {

enum class BlockKind { plain_conv, residual_basic, downsample_transition, dense_concat };

struct ConvPlan {
  std::size_t kernel = 3;
  std::size_t out_channels = 0;
};

/// plain_conv:            each plan entry is conv -> [bn] -> relu.
/// residual_basic:        plan is the main path; 1x1 projection on the skip
///                        when stride or channels change; relu after the add.
/// downsample_transition: plan entries as plain_conv, then maxpool 2x2.
/// dense_concat:          plan is the inner path; output = concat(x, inner(x)).
/// Every kind is repeated `repeat` times.
struct BlockSpec {
  BlockKind kind = BlockKind::plain_conv;
  std::vector<ConvPlan> plan;
  std::size_t repeat = 1;
};

struct SetSpec {
  std::vector<BlockSpec> blocks;
  std::size_t stride = 1;   // applied to the first convolution of the set
  bool pool_after = false;  // maxpool 2x2 closing the set
};

struct BackboneSpec {
  std::string name;
  std::size_t in_channels = 3;
  bool batchnorm = true;  // batchnorm after every conv inside sets; conv bias otherwise
  std::vector<SetSpec> sets;
  std::vector<std::size_t> fc_hidden;  // hidden widths of the original classifier
};

enum class ClassifierMode { original, multi_heads };

inline const char* to_string(ClassifierMode m) {
  return m == ClassifierMode::original ? "original" : "multi";
}

struct ClassifierSpec {
  ClassifierMode mode = ClassifierMode::multi_heads;
  std::size_t num_classes = 10;
  NormalizerKind normalizer = NormalizerKind::l2_sqrtexp;
};

// ---------------------------------------------------------------------------
// Validation and symbolic shape propagation

inline std::size_t set_out_channels(const BackboneSpec& spec, std::size_t t) {
  std::size_t c = t == 0 ? spec.in_channels : set_out_channels(spec, t - 1);
  for (const auto& b : spec.sets[t].blocks) {
    for (std::size_t r = 0; r < b.repeat; ++r) {
      if (b.kind == BlockKind::dense_concat) c += b.plan.back().out_channels;
      else c = b.plan.back().out_channels;
    }
  }
  return c;
}

inline void validate(const BackboneSpec& spec) {
  if (spec.sets.empty()) throw ContractError(spec.name + ": a backbone needs at least one set");
  if (spec.in_channels == 0) throw ContractError(spec.name + ": input channels must be positive");
  for (std::size_t t = 0; t < spec.sets.size(); ++t) {
    const auto& set = spec.sets[t];
    const std::string where = spec.name + " set" + std::to_string(t + 1);
    if (set.blocks.empty()) throw ContractError(where + ": no blocks");
    if (set.stride == 0) throw ContractError(where + ": stride must be positive");
    if (set.stride != 1 && set.blocks.front().kind == BlockKind::dense_concat)
      throw ContractError(where + ": a strided set cannot start with a concatenation block");
    for (const auto& b : set.blocks) {
      if (b.repeat == 0) throw ContractError(where + ": repeat must be at least 1");
      if (b.plan.empty()) throw ContractError(where + ": empty channel plan");
      for (const auto& p : b.plan) {
        if (p.out_channels == 0) throw ContractError(where + ": channels must be positive");
        if (p.kernel != 1 && p.kernel != 3) throw ContractError(where + ": kernel must be 1 or 3");
      }
    }
  }
}

/// Output shape of every set, computed from the spec alone.
inline std::vector<Shape> propagate_shapes(const BackboneSpec& spec, const Shape& input) {
  if (input.rank() != 4 || input[1] != spec.in_channels)
    throw ShapeError(spec.name + ": expected input [B," + std::to_string(spec.in_channels) +
                     ",H,W], got " + input.str());
  std::vector<Shape> out;
  std::size_t c = spec.in_channels, h = input[2], w = input[3];
  for (std::size_t t = 0; t < spec.sets.size(); ++t) {
    const auto& set = spec.sets[t];
    bool first = true;
    const std::string where = "set" + std::to_string(t + 1);
    auto conv = [&](const ConvPlan& p) {
      const std::size_t s = first ? set.stride : 1;
      first = false;
      const std::size_t pad = p.kernel / 2;
      if (h + 2 * pad < p.kernel || w + 2 * pad < p.kernel)
        throw ShapeError(where + ": spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " too small for its convolution");
      h = (h + 2 * pad - p.kernel) / s + 1;
      w = (w + 2 * pad - p.kernel) / s + 1;
    };
    auto pool = [&] {
      if (h < 2 || w < 2)
        throw ShapeError(where + ": spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " too small for 2x2 pooling");
      h /= 2;
      w /= 2;
    };
    for (const auto& b : set.blocks) {
      for (std::size_t r = 0; r < b.repeat; ++r) {
        if (b.kind == BlockKind::dense_concat) {
          for (const auto& p : b.plan) conv(p);
          c += b.plan.back().out_channels;
        } else {
          for (const auto& p : b.plan) conv(p);
          c = b.plan.back().out_channels;
          if (b.kind == BlockKind::downsample_transition) pool();
        }
      }
    }
    if (set.pool_after) pool();
    out.push_back(Shape{input[0], c, h, w});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accounting

/// mac: one multiply-accumulate is one FLOP. mul_add: it is two.
enum class FlopConvention { mac, mul_add };

inline const char* to_string(FlopConvention f) {
  return f == FlopConvention::mac ? "1 MAC = 1 FLOP" : "1 MAC = 2 FLOPs";
}

struct ComponentStats {
  std::string name;
  Shape output;
  std::size_t params = 0;
  std::size_t macs = 0;
  std::size_t elementwise = 0;

  [[nodiscard]] std::size_t flops(FlopConvention conv = FlopConvention::mac) const {
    return macs * (conv == FlopConvention::mac ? 1 : 2) + elementwise;
  }
};

struct ModelStats {
  std::vector<ComponentStats> sets;
  std::vector<ComponentStats> heads;
  std::optional<ComponentStats> classifier;

  [[nodiscard]] std::size_t params() const { return sum([](const ComponentStats& c) { return c.params; }); }
  [[nodiscard]] std::size_t flops(FlopConvention conv = FlopConvention::mac) const {
    return sum([conv](const ComponentStats& c) { return c.flops(conv); });
  }

 private:
  template <typename F>
  std::size_t sum(F f) const {
    std::size_t s = 0;
    for (const auto& c : sets) s += f(c);
    for (const auto& c : heads) s += f(c);
    if (classifier) s += f(*classifier);
    return s;
  }
};

template <typename T>
struct ModelOutput {
  Tensor<T> scores;                // aggregate (multi_heads) or logits (original)
  std::vector<Tensor<T>> per_head;  // empty in original mode
};

template <typename T>
class Model {
 public:
  Model(BackboneSpec spec, ClassifierSpec cls, SeededRng& rng) : spec_(std::move(spec)), cls_(cls) {
    validate(spec_);
    if (cls_.num_classes < 2) throw ContractError("a model needs at least 2 categories");
    std::size_t c = spec_.in_channels;
    for (std::size_t t = 0; t < spec_.sets.size(); ++t) {
      sets_.push_back(build_set(t, c, rng));
      c = set_out_channels(spec_, t);
    }
    const std::size_t last = c;
    if (cls_.mode == ClassifierMode::multi_heads) {
      for (std::size_t t = 0; t < sets_.size(); ++t)
        heads_.push_back(std::make_unique<ClassifierHead<T>>("head" + std::to_string(t + 1),
                                                             set_out_channels(spec_, t), last,
                                                             cls_.num_classes, cls_.normalizer, rng));
    } else {
      classifier_ = std::make_unique<Sequential<T>>("classifier");
      classifier_->template emplace<AdaptiveMaxPool<T>>("classifier.pool", 1, 1);
      std::size_t f = last;
      for (std::size_t i = 0; i < spec_.fc_hidden.size(); ++i) {
        const std::string n = "classifier.fc" + std::to_string(i + 1);
        classifier_->template emplace<Linear<T>>(n, f, spec_.fc_hidden[i], true, rng);
        classifier_->template emplace<ReLU<T>>(n + ".relu");
        f = spec_.fc_hidden[i];
      }
      classifier_->template emplace<Linear<T>>(
          "classifier.fc" + std::to_string(spec_.fc_hidden.size() + 1), f, cls_.num_classes, true, rng);
    }
  }

  ModelOutput<T> forward(const Tensor<T>& x, Mode mode) {
    ModelOutput<T> out;
    Tensor<T> h = x;
    for (std::size_t t = 0; t < sets_.size(); ++t) {
      try {
        h = sets_[t]->forward(h, mode);
      } catch (const ShapeError& e) {
        throw ShapeError(sets_[t]->name() + ": " + e.what());
      }
      if (!heads_.empty()) out.per_head.push_back(heads_[t]->forward(h, mode));
    }
    out.scores = heads_.empty() ? classifier_->forward(h, mode) : aggregate_scores(out.per_head);
    return out;
  }

  /// Gradient of the loss w.r.t. the scores in, gradient w.r.t. the input out.
  /// Each head receives the same upstream gradient (the sum is linear); set t
  /// receives its own head's gradient plus everything flowing back from t+1.
  Tensor<T> backward(const Tensor<T>& grad_scores) {
    Tensor<T> g;
    if (heads_.empty()) {
      g = classifier_->backward(grad_scores);
      for (std::size_t t = sets_.size(); t-- > 0;) g = sets_[t]->backward(g);
      return g;
    }
    g = heads_.back()->backward(grad_scores);
    for (std::size_t t = sets_.size(); t-- > 0;) {
      g = sets_[t]->backward(g);
      if (t > 0) add_inplace(g, heads_[t - 1]->backward(grad_scores));
    }
    return g;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& s : sets_) s->collect_parameters(out);
    for (auto& h : heads_) h->collect_parameters(out);
    if (classifier_) classifier_->collect_parameters(out);
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (auto& s : sets_) s->collect_buffers(out);
    for (auto& h : heads_) h->collect_buffers(out);
    if (classifier_) classifier_->collect_buffers(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.fill(T(0));
  }

  [[nodiscard]] ModelStats stats(const Shape& input) const {
    ModelStats st;
    Shape s = input;
    for (const auto& set : sets_) {
      const LayerCost c = set->cost(s);
      st.sets.push_back({set->name(), c.output, c.params, c.macs, c.elementwise});
      if (!heads_.empty()) {
        const auto& head = heads_[st.sets.size() - 1];
        const LayerCost hc = head->cost(c.output);
        st.heads.push_back({head->name(), hc.output, hc.params, hc.macs, hc.elementwise});
      }
      s = c.output;
    }
    if (classifier_) {
      const LayerCost c = classifier_->cost(s);
      st.classifier = ComponentStats{classifier_->name(), c.output, c.params, c.macs, c.elementwise};
    }
    if (!heads_.empty()) {
      // the aggregation sum: (T-1) adds per output element
      const std::size_t agg = (heads_.size() - 1) * input[0] * cls_.num_classes;
      st.heads.back().elementwise += agg;
    }
    return st;
  }

  [[nodiscard]] const BackboneSpec& spec() const { return spec_; }
  [[nodiscard]] const ClassifierSpec& classifier_spec() const { return cls_; }
  [[nodiscard]] std::size_t num_sets() const { return sets_.size(); }
  [[nodiscard]] std::size_t num_heads() const { return heads_.size(); }
  [[nodiscard]] std::size_t num_classes() const { return cls_.num_classes; }
  Sequential<T>& set(std::size_t t) { return *sets_.at(t); }
  ClassifierHead<T>& head(std::size_t t) { return *heads_.at(t); }
  Sequential<T>* classifier() { return classifier_.get(); }

 private:
  std::unique_ptr<Sequential<T>> build_set(std::size_t t, std::size_t in_c, SeededRng& rng) {
    const SetSpec& set = spec_.sets[t];
    const std::string sname = "set" + std::to_string(t + 1);
    auto seq = std::make_unique<Sequential<T>>(sname);
    const bool bn = spec_.batchnorm;
    std::size_t c = in_c;
    std::size_t pending_stride = set.stride;
    std::size_t conv_idx = 0, block_idx = 0;

    // conv [-> bn] [-> relu] appended to `dst`
    auto conv_unit = [&](Sequential<T>& dst, const std::string& prefix, const ConvPlan& p, std::size_t cin,
                         std::size_t stride, bool relu) {
      dst.template emplace<Conv2d<T>>(prefix, cin, p.out_channels, p.kernel, stride, p.kernel / 2, !bn, rng);
      if (bn) dst.template emplace<BatchNorm2d<T>>(prefix + ".bn", p.out_channels);
      if (relu) dst.template emplace<ReLU<T>>(prefix + ".relu");
    };

    for (const auto& b : set.blocks) {
      for (std::size_t r = 0; r < b.repeat; ++r) {
        switch (b.kind) {
          case BlockKind::plain_conv:
          case BlockKind::downsample_transition:
            for (const auto& p : b.plan) {
              conv_unit(*seq, sname + ".conv" + std::to_string(++conv_idx), p, c, pending_stride, true);
              pending_stride = 1;
              c = p.out_channels;
            }
            if (b.kind == BlockKind::downsample_transition)
              seq->template emplace<MaxPool2x2<T>>(sname + ".transition_pool" + std::to_string(++block_idx));
            break;
          case BlockKind::residual_basic: {
            const std::string bname = sname + ".block" + std::to_string(++block_idx);
            auto main = std::make_unique<Sequential<T>>(bname + ".main");
            const std::size_t stride = pending_stride;
            std::size_t cc = c;
            for (std::size_t i = 0; i < b.plan.size(); ++i) {
              conv_unit(*main, bname + ".conv" + std::to_string(i + 1), b.plan[i], cc, i == 0 ? stride : 1,
                        i + 1 < b.plan.size());
              cc = b.plan[i].out_channels;
            }
            std::unique_ptr<Sequential<T>> shortcut;
            if (stride != 1 || cc != c) {
              shortcut = std::make_unique<Sequential<T>>(bname + ".shortcut");
              conv_unit(*shortcut, bname + ".proj", ConvPlan{1, cc}, c, stride, false);
            }
            seq->template emplace<ResidualBlock<T>>(bname, std::move(main), std::move(shortcut));
            pending_stride = 1;
            c = cc;
            break;
          }
          case BlockKind::dense_concat: {
            const std::string bname = sname + ".dense" + std::to_string(++block_idx);
            auto inner = std::make_unique<Sequential<T>>(bname + ".inner");
            std::size_t cc = c;
            for (std::size_t i = 0; i < b.plan.size(); ++i) {
              conv_unit(*inner, bname + ".conv" + std::to_string(i + 1), b.plan[i], cc, 1, true);
              cc = b.plan[i].out_channels;
            }
            seq->template emplace<ConcatBlock<T>>(bname, std::move(inner));
            c += cc;
            break;
          }
        }
      }
    }
    if (set.pool_after) seq->template emplace<MaxPool2x2<T>>(sname + ".pool");
    return seq;
  }

  BackboneSpec spec_;
  ClassifierSpec cls_;
  std::vector<std::unique_ptr<Sequential<T>>> sets_;
  std::vector<std::unique_ptr<ClassifierHead<T>>> heads_;
  std::unique_ptr<Sequential<T>> classifier_;
};

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline BlockSpec plain(std::size_t channels, std::size_t repeat) {
  return BlockSpec{BlockKind::plain_conv, {ConvPlan{3, channels}}, repeat};
}

inline BlockSpec basic(std::size_t channels, std::size_t repeat) {
  return BlockSpec{BlockKind::residual_basic, {ConvPlan{3, channels}, ConvPlan{3, channels}}, repeat};
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"vgg16", "resnet18", "mini_vgg", "mini_resnet", "mini_cnn"};
}

/// VGG family: plain convs with bias, no batchnorm, maxpool closing each set.
/// ResNet family: batchnorm everywhere, stride-2 entry in the later sets.
inline BackboneSpec preset(std::string_view name) {
  using detail::basic;
  using detail::plain;
  BackboneSpec s;
  s.name = std::string(name);
  if (name == "vgg16") {
    s.batchnorm = false;
    for (auto [c, n] : {std::pair<std::size_t, std::size_t>{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}})
      s.sets.push_back(SetSpec{{plain(c, n)}, 1, true});
    s.fc_hidden = {4096, 4096};
  } else if (name == "resnet18") {
    s.sets = {SetSpec{{plain(64, 1)}, 1, false}, SetSpec{{basic(64, 2)}, 1, false},
              SetSpec{{basic(128, 2)}, 2, false}, SetSpec{{basic(256, 2)}, 2, false},
              SetSpec{{basic(512, 2)}, 2, false}};
  } else if (name == "mini_vgg") {
    s.batchnorm = false;
    s.sets = {SetSpec{{plain(8, 1)}, 1, true}, SetSpec{{plain(16, 1)}, 1, true},
              SetSpec{{plain(32, 1)}, 1, true}};
  } else if (name == "mini_resnet") {
    s.sets = {SetSpec{{plain(8, 1)}, 1, false}, SetSpec{{basic(8, 1)}, 1, false},
              SetSpec{{basic(16, 1)}, 2, false}, SetSpec{{basic(32, 1)}, 2, false}};
  } else if (name == "mini_cnn") {
    s.batchnorm = false;
    s.sets = {SetSpec{{plain(8, 1)}, 1, true}};
  } else {
    throw ContractError("unknown model preset '" + std::string(name) + "'");
  }
  return s;
}

}  // namespace mcnet
