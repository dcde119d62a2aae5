#pragma once

// Training loop: shuffled mini-batches, cross-entropy on softmax of the model
// scores (batch mean), Adam, and a reduce-on-plateau schedule on the training
// loss. Every random decision derives from (seed, epoch, sample index), so a
// run is a pure function of its configuration and data.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/backbones.hpp"
#include "mcnet/data.hpp"
#include "mcnet/optim.hpp"
#include "mcnet/scorenorm.hpp"

namespace mcnet {

struct TrainConfig {
  std::string model = "mini_resnet";
  ClassifierMode mode = ClassifierMode::multi_heads;
  NormalizerKind normalizer = NormalizerKind::l2_sqrtexp;
  double lr = 0.001;
  std::size_t batch_size = 100;
  std::size_t epochs = 20;
  std::size_t eval_batch_size = 500;
  AdamConfig adam;
  PlateauConfig scheduler;
  std::uint64_t seed = 0;
  bool augment = true;
  bool normalize = true;  // per-channel statistics of the training split
  AugmentPolicy policy;   // mean/std are filled in from the training split

  /// lr == 0 is accepted here (a frozen run); the config file requires lr > 0.
  void validate(bool has_batchnorm) const {
    if (!(lr >= 0) || !std::isfinite(lr)) throw ContractError("learning rate must be non-negative");
    if (batch_size == 0 || eval_batch_size == 0) throw ContractError("batch size must be positive");
    if (has_batchnorm && batch_size < 2) throw ContractError("batchnorm in training mode needs batch size >= 2");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
      throw ContractError("Adam betas must lie in [0, 1) and eps must be positive");
    if (!(scheduler.factor > 0 && scheduler.factor < 1)) throw ContractError("scheduler factor must lie in (0, 1)");
    if (!(scheduler.threshold >= 0) || !(scheduler.min_lr >= 0))
      throw ContractError("scheduler threshold and min lr must be non-negative");
    policy.validate();
  }

  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "model=" << model << "\nclassifier=" << to_string(mode) << "\nnormalizer=" << to_string(normalizer)
       << "\nlr=" << lr << "\nbatch_size=" << batch_size << "\nepochs=" << epochs << "\nseed=" << seed
       << "\naugment=" << augment << "\nnormalize=" << normalize << "\n";
    return os.str();
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double test_loss = 0;
  double test_accuracy = 0;
  bool has_test = false;
  double lr = 0;  // rate used during this epoch
  double seconds = 0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;

  [[nodiscard]] double best_test_accuracy() const {
    double best = 0;
    for (const auto& e : epochs) best = std::max(best, e.test_accuracy);
    return best;
  }
  [[nodiscard]] std::size_t best_epoch() const {
    std::size_t idx = 0;
    double best = -1;
    for (const auto& e : epochs)
      if (e.test_accuracy > best) {
        best = e.test_accuracy;
        idx = e.epoch;
      }
    return idx;
  }
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::size_t> predictions;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'N', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    uint<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  [[nodiscard]] const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> b) : buf_(std::move(b)) {}
  const std::uint8_t* take(std::size_t n) {
    if (n > buf_.size() - pos_)
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                        " more, " + std::to_string(buf_.size() - pos_) + " left)");
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U uint() {
    const std::uint8_t* p = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string str() {
    const auto n = uint<std::uint64_t>();
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  [[nodiscard]] bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Owns a float model, its optimizer state and schedule for one seeded run.
class Trainer {
 public:
  static constexpr std::uint64_t kInitStream = 0;

  /// `train` fixes the input geometry, category count and normalization
  /// statistics.
  Trainer(TrainConfig cfg, const Dataset& train) : cfg_(std::move(cfg)), sched_(cfg_.lr, cfg_.scheduler) {
    if (train.empty()) throw ContractError("training set is empty");
    channels_ = train.channels;
    height_ = train.height;
    width_ = train.width;
    BackboneSpec spec = preset(cfg_.model);
    spec.in_channels = channels_;
    SeededRng init = SeededRng(cfg_.seed).split(kInitStream);
    model_ = std::make_unique<Model<float>>(spec, ClassifierSpec{cfg_.mode, train.num_classes, cfg_.normalizer}, init);
    cfg_.validate(has_batchnorm());
    if (cfg_.normalize) {
      const auto st = channel_stats(train);
      cfg_.policy.mean = st.mean;
      cfg_.policy.std = st.std;
    } else {
      cfg_.policy.mean.clear();
      cfg_.policy.std.clear();
    }
  }

  Model<float>& model() { return *model_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] std::size_t epoch() const { return epoch_; }
  [[nodiscard]] double lr() const { return sched_.lr(); }
  [[nodiscard]] const PlateauScheduler& scheduler() const { return sched_; }
  [[nodiscard]] const AdamState<float>& optimizer_state() const { return adam_; }

  [[nodiscard]] bool has_batchnorm() const {
    for (auto& b : model_->buffers())
      if (b.name.ends_with(".running_mean")) return true;
    return false;
  }

  /// Stacks the samples `idx` into a [B,C,H,W] batch, augmenting when training.
  Tensor<float> make_batch(const Dataset& d, std::span<const std::size_t> idx, bool train,
                           const SeededRng* epoch_rng) const {
    const std::size_t n = d.image_numel();
    Tensor<float> x(Shape{idx.size(), d.channels, d.height, d.width});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto out = x.data().subspan(b * n, n);
      auto in = d.image_span(idx[b]);
      if (train && cfg_.augment) {
        augment_into(in, out, d.channels, d.height, d.width, cfg_.policy, epoch_rng->split(1 + idx[b]));
      } else {
        std::copy(in.begin(), in.end(), out.begin());
        normalize_inplace(out, d.channels, cfg_.policy.mean, cfg_.policy.std);
      }
    }
    return x;
  }

  /// One pass over `train` (and an evaluation of `test` if given).
  EpochMetrics run_epoch(const Dataset& train, const Dataset* test = nullptr) {
    check_geometry(train);
    const auto t0 = std::chrono::steady_clock::now();
    ++epoch_;
    const SeededRng epoch_rng = SeededRng(cfg_.seed).split(epoch_);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng shuffle = epoch_rng.split(0);
    shuffle.shuffle(std::span<std::size_t>(order));

    EpochMetrics m;
    m.epoch = epoch_;
    m.lr = sched_.lr();
    double loss_sum = 0;
    std::size_t correct = 0;
    const std::size_t N = model_->num_classes();
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t B = std::min(cfg_.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, B);
      const Tensor<float> x = make_batch(train, idx, true, &epoch_rng);
      model_->zero_grad();
      const auto out = model_->forward(x, Mode::train);
      Tensor<float> grad(out.scores.shape());
      double batch_loss = 0;
      for (std::size_t b = 0; b < B; ++b) {
        auto row = out.scores.data().subspan(b * N, N);
        const std::size_t label = train.labels[idx[b]];
        const auto lg = softmax_cross_entropy<float>(row, label);
        batch_loss += lg.loss;
        for (std::size_t k = 0; k < N; ++k) grad[b * N + k] = lg.grad[k] / static_cast<float>(B);
        if (argmax<float>(row) == label) ++correct;
      }
      if (!std::isfinite(batch_loss)) diagnose_nonfinite(x, start / cfg_.batch_size);
      loss_sum += batch_loss;
      model_->backward(grad);
      adam_step(model_->parameters(), adam_, sched_.lr(), cfg_.adam);
    }
    m.train_loss = loss_sum / static_cast<double>(train.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    sched_.step(m.train_loss);
    if (test) {
      const auto ev = evaluate(*test);
      m.test_loss = ev.loss;
      m.test_accuracy = ev.accuracy;
      m.has_test = true;
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  /// Eval-mode pass with normalization only. No parameter or statistic changes.
  EvalResult evaluate(const Dataset& d) {
    if (d.empty()) throw ContractError("cannot evaluate on an empty dataset");
    check_geometry(d);
    EvalResult r;
    r.predictions.resize(d.size());
    const std::size_t N = model_->num_classes();
    double loss = 0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < d.size(); start += cfg_.eval_batch_size) {
      const std::size_t B = std::min(cfg_.eval_batch_size, d.size() - start);
      idx.resize(B);
      std::iota(idx.begin(), idx.end(), start);
      const auto out = model_->forward(make_batch(d, idx, false, nullptr), Mode::eval);
      const auto pred = predict(out.scores);
      for (std::size_t b = 0; b < B; ++b) {
        if (d.labels[start + b] >= N) throw DataError("label out of range for the model");
        loss += softmax_cross_entropy<float>(out.scores.data().subspan(b * N, N), d.labels[start + b]).loss;
        r.predictions[start + b] = pred[b];
        if (pred[b] == d.labels[start + b]) ++correct;
      }
    }
    r.loss = loss / static_cast<double>(d.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
    return r;
  }

  RunMetrics fit(const Dataset& train, const Dataset* test, std::size_t epochs) {
    RunMetrics rm;
    for (std::size_t e = 0; e < epochs; ++e) rm.epochs.push_back(run_epoch(train, test));
    return rm;
  }

  // ---- checkpoints --------------------------------------------------------

  void save(const std::filesystem::path& path, const std::string& config_snapshot = {}) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.uint<std::uint32_t>(kCheckpointVersion);
    w.str(config_snapshot.empty() ? cfg_.describe() : config_snapshot);
    w.uint<std::uint64_t>(epoch_);
    w.uint<std::uint64_t>(cfg_.seed);
    w.f64(sched_.lr());
    w.f64(sched_.best());
    w.uint<std::uint64_t>(sched_.bad_epochs());
    w.uint<std::uint64_t>(sched_.reductions());
    w.uint<std::uint64_t>(adam_.step);
    w.uint<std::uint64_t>(cfg_.policy.mean.size());
    for (std::size_t c = 0; c < cfg_.policy.mean.size(); ++c) {
      w.f32(cfg_.policy.mean[c]);
      w.f32(cfg_.policy.std[c]);
    }
    const auto recs = records();
    w.uint<std::uint64_t>(recs.size());
    for (const auto& [name, t] : recs) {
      w.str(name);
      w.uint<std::uint8_t>(0);  // dtype: 0 = float32
      w.uint<std::uint8_t>(static_cast<std::uint8_t>(t->rank()));
      for (std::size_t a = 0; a < t->rank(); ++a) w.uint<std::uint64_t>(t->dim(a));
      for (float v : t->data()) w.f32(v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }

  /// Restores everything needed to continue bit-exactly. Returns the stored
  /// config snapshot.
  std::string load(const std::filesystem::path& path) {
    detail::ByteReader r(read_file(path));
    if (std::memcmp(r.take(sizeof kCheckpointMagic), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
      throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = r.uint<std::uint32_t>();
    if (version != kCheckpointVersion)
      throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    std::string snapshot = r.str();
    const auto epoch = r.uint<std::uint64_t>();
    const auto seed = r.uint<std::uint64_t>();
    const double lr = r.f64(), best = r.f64();
    const auto bad = r.uint<std::uint64_t>(), reductions = r.uint<std::uint64_t>();
    const auto step = r.uint<std::uint64_t>();
    const auto nc = r.uint<std::uint64_t>();
    std::vector<float> mean(nc), stdv(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      mean[c] = r.f32();
      stdv[c] = r.f32();
    }

    ensure_adam_state();
    auto recs = records();
    const auto count = r.uint<std::uint64_t>();
    if (count != recs.size())
      throw ShapeError(path.string() + ": checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                       std::to_string(recs.size()));
    // Decode into staging buffers first so a failed load leaves the trainer untouched.
    std::vector<std::vector<float>> staged(recs.size());
    for (std::size_t k = 0; k < count; ++k) {
      const std::string name = r.str();
      const auto dtype = r.uint<std::uint8_t>();
      if (dtype != 0) throw FormatError(name + ": unsupported dtype " + std::to_string(dtype));
      const auto rank = r.uint<std::uint8_t>();
      if (rank == 0 || rank > kMaxRank) throw FormatError(name + ": invalid rank " + std::to_string(rank));
      std::vector<std::size_t> dims(rank);
      for (auto& d : dims) d = r.uint<std::uint64_t>();
      const auto& [want_name, t] = recs[k];
      if (name != want_name) throw ShapeError("checkpoint tensor '" + name + "' where model expects '" + want_name + "'");
      const Shape s{std::span<const std::size_t>(dims)};
      if (!(s == t->shape()))
        throw ShapeError("tensor '" + name + "' has shape " + s.str() + " in checkpoint, model expects " +
                         t->shape().str());
      staged[k].resize(s.numel());
      for (auto& v : staged[k]) v = r.f32();
    }
    if (!r.done()) throw FormatError(path.string() + ": trailing bytes after the last tensor");

    for (std::size_t k = 0; k < recs.size(); ++k)
      std::copy(staged[k].begin(), staged[k].end(), recs[k].second->data().begin());
    epoch_ = epoch;
    cfg_.seed = seed;
    sched_.restore(lr, best, bad, reductions);
    adam_.step = step;
    cfg_.policy.mean = std::move(mean);
    cfg_.policy.std = std::move(stdv);
    return snapshot;
  }

 private:
  void check_geometry(const Dataset& d) const {
    if (d.channels != channels_ || d.height != height_ || d.width != width_)
      throw ShapeError("dataset geometry differs from the one the model was built for");
  }

  void ensure_adam_state() {
    if (!adam_.m.empty()) return;
    for (auto* p : model_->parameters()) {
      adam_.m.emplace_back(p->value.shape());
      adam_.v.emplace_back(p->value.shape());
    }
  }

  std::vector<std::pair<std::string, Tensor<float>*>> records() {
    ensure_adam_state();
    std::vector<std::pair<std::string, Tensor<float>*>> out;
    auto params = model_->parameters();
    for (auto* p : params) out.emplace_back("param:" + p->name, &p->value);
    for (auto& b : model_->buffers()) out.emplace_back("buffer:" + b.name, b.tensor);
    for (std::size_t k = 0; k < params.size(); ++k) {
      out.emplace_back("adam_m:" + params[k]->name, &adam_.m[k]);
      out.emplace_back("adam_v:" + params[k]->name, &adam_.v[k]);
    }
    return out;
  }

  [[noreturn]] void diagnose_nonfinite(const Tensor<float>& x, std::size_t batch) {
    std::string first;
    detail::nonfinite_probe = &first;
    try {
      model_->forward(x, Mode::train);
    } catch (...) {
      detail::nonfinite_probe = nullptr;
      throw;
    }
    detail::nonfinite_probe = nullptr;
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " + std::to_string(batch) +
                        "; first non-finite output from layer '" + (first.empty() ? std::string("loss") : first) +
                        "'");
  }

  TrainConfig cfg_;
  std::unique_ptr<Model<float>> model_;
  AdamState<float> adam_;
  PlateauScheduler sched_;
  std::size_t epoch_ = 0;
  std::size_t channels_ = 0, height_ = 0, width_ = 0;
};

}  // namespace mcnet
