#pragma once

// Seeded experiment runs and model statistics, as driven by the CLI.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/backbones.hpp"
#include "mcnet/config.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/train.hpp"

namespace mcnet {

inline std::string run_tag(const TrainConfig& t) {
  std::string tag = t.model + "_" + (t.mode == ClassifierMode::multi_heads ? "multi" : "original");
  if (t.mode == ClassifierMode::multi_heads) tag += std::string("_") + to_string(t.normalizer);
  return tag;
}

inline std::string run_info(const ExperimentConfig& c, std::uint64_t seed) {
  std::ostringstream os;
  os << "model=" << c.train.model << " classifier=" << (c.train.mode == ClassifierMode::multi_heads ? "multi" : "original")
     << " normalizer=" << to_string(c.train.normalizer) << " data=" << c.data.source << " seed=" << seed
     << " epochs=" << c.train.epochs;
  return os.str();
}

struct RunFiles {
  std::filesystem::path csv, timings, checkpoint;
};

inline RunFiles run_files(const ExperimentConfig& c, std::uint64_t seed) {
  const std::filesystem::path dir(c.output.dir);
  const std::string stem = run_tag(c.train) + "_seed" + std::to_string(seed);
  return {dir / (stem + ".csv"), dir / (stem + ".timings.csv"), dir / (stem + ".ckpt")};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  out << text;
  if (!out) throw FormatError("write failed for " + p.string());
}

using EpochCallback = std::function<void(std::uint64_t seed, const EpochMetrics&)>;

/// Trains one run per seed on fixed splits and writes, per seed, the metrics
/// CSV, a timings file and optionally a checkpoint, then a summary across
/// seeds. Returns the per-seed metrics.
inline std::vector<SeedRun> run_experiment(const ExperimentConfig& c, const Dataset& train, const Dataset& test,
                                           const EpochCallback& on_epoch = {}) {
  std::filesystem::create_directories(c.output.dir);
  std::vector<SeedRun> runs;
  for (const auto seed : c.seeds) {
    TrainConfig tc = c.train;
    tc.seed = seed;
    Trainer trainer(tc, train);
    RunMetrics m;
    for (std::size_t e = 0; e < tc.epochs; ++e) {
      m.epochs.push_back(trainer.run_epoch(train, &test));
      if (on_epoch) on_epoch(seed, m.epochs.back());
    }
    const RunFiles f = run_files(c, seed);
    write_text(f.csv, format_metrics_csv(m, run_info(c, seed), c.output.record_time));
    write_text(f.timings, format_timings(m));
    if (c.output.checkpoint) trainer.save(f.checkpoint, c.snapshot());
    runs.push_back({seed, std::move(m)});
  }
  std::string info = run_info(c, 0);
  info = info.substr(0, info.find(" seed="));
  write_text(std::filesystem::path(c.output.dir) / (run_tag(c.train) + "_summary.txt"), format_summary(info, runs));
  return runs;
}

// ---------------------------------------------------------------------------
// Statistics

/// Parameter counts (millions) of the published VGG16 / ResNet18 tables,
/// original then multi-head, used as reference points by `stats --both`.
struct ReferenceCounts {
  const char* model;
  double original_params_m;
  double multi_params_m;
};

inline const std::vector<ReferenceCounts>& reference_counts() {
  static const std::vector<ReferenceCounts> r = {{"vgg16", 15.7, 21.5}, {"resnet18", 10.2, 15.9}};
  return r;
}

inline std::optional<ReferenceCounts> reference_for(std::string_view model) {
  for (const auto& r : reference_counts())
    if (model == r.model) return r;
  return std::nullopt;
}

inline ModelStats model_stats(const std::string& preset_name, ClassifierMode mode, std::size_t classes,
                              const Shape& input) {
  BackboneSpec spec = preset(preset_name);
  spec.in_channels = input[1];
  propagate_shapes(spec, input);
  SeededRng rng(0);
  Model<float> model(spec, ClassifierSpec{mode, classes, NormalizerKind::l2_sqrtexp}, rng);
  return model.stats(input);
}

inline std::string format_stats(const std::string& model, ClassifierMode mode, const ModelStats& st,
                                FlopConvention conv) {
  std::ostringstream os;
  char buf[160];
  os << "model=" << model << " classifier=" << (mode == ClassifierMode::multi_heads ? "multi" : "original")
     << " flops convention: " << to_string(conv) << "\n";
  auto line = [&](const ComponentStats& c) {
    std::snprintf(buf, sizeof buf, "  %-12s out=%-18s params=%12zu flops=%15zu\n", c.name.c_str(),
                  c.output.str().c_str(), c.params, c.flops(conv));
    os << buf;
  };
  for (std::size_t t = 0; t < st.sets.size(); ++t) {
    line(st.sets[t]);
    if (t < st.heads.size()) line(st.heads[t]);
  }
  if (st.classifier) line(*st.classifier);
  std::snprintf(buf, sizeof buf, "  total params=%zu (%.3fM) flops=%zu (%.4gG)\n", st.params(),
                static_cast<double>(st.params()) / 1e6, st.flops(conv), static_cast<double>(st.flops(conv)) / 1e9);
  os << buf;
  return os.str();
}

}  // namespace mcnet
