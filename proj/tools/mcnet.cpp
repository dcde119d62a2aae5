// mcnet: train, evaluate and inspect multi-head CNN classifiers.
//
// Exit codes: 0 ok, 1 unexpected error, 2 usage, 3 config, 4 dataset,
// 5 override, 6 check failed, 7 checkpoint, 8 metrics input.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcnet/config.hpp"
#include "mcnet/experiment.hpp"
#include "mcnet/gradcheck.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/normcheck.hpp"

namespace {

enum Exit : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kConfig = 3,
  kDataset = 4,
  kOverride = 5,
  kCheckFailed = 6,
  kCheckpoint = 7,
  kMetricsInput = 8,
};

int fail(int code, const std::string& msg) {
  std::cerr << "mcnet: " << msg << "\n";
  return code;
}

mcnet::ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return mcnet::parse_config_string("", overrides);
  return mcnet::load_config(path, overrides);
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, bool quiet) {
  const auto cfg = load(config, overrides);
  const auto [train, test] = mcnet::load_datasets(cfg.data);
  std::cout << "train " << mcnet::run_tag(cfg.train) << " on " << cfg.data.source << " (" << train.size() << " train, "
            << test.size() << " test), " << cfg.seeds.size() << " run(s) -> " << cfg.output.dir << "\n";
  const auto runs = mcnet::run_experiment(cfg, train, test, [&](std::uint64_t seed, const mcnet::EpochMetrics& e) {
    if (quiet) return;
    std::printf("seed %llu epoch %3zu  loss %.4f  train %.4f  test %.4f  lr %.3g  %.1fs\n",
                static_cast<unsigned long long>(seed), e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy, e.lr,
                e.seconds);
    std::fflush(stdout);
  });
  std::string info = mcnet::run_info(cfg, 0);
  std::cout << mcnet::format_summary(info.substr(0, info.find(" seed=")), runs);
  return kOk;
}

int cmd_eval(const std::string& config, const std::vector<std::string>& overrides, const std::string& checkpoint) {
  const auto cfg = load(config, overrides);
  const auto [train, test] = mcnet::load_datasets(cfg.data);
  mcnet::Trainer trainer(cfg.train, train);
  try {
    trainer.load(checkpoint);
  } catch (const std::exception& e) {
    return fail(kCheckpoint, e.what());
  }
  const auto r = trainer.evaluate(test);
  std::printf("eval %s epoch %zu: test loss %.6f accuracy %.4f (%zu samples)\n", checkpoint.c_str(), trainer.epoch(),
              r.loss, r.accuracy, test.size());
  return kOk;
}

mcnet::Shape parse_shape(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) dims.push_back(std::stoul(part));
  if (dims.size() != 4) throw mcnet::ShapeError("input shape must be B,C,H,W");
  return mcnet::Shape{dims[0], dims[1], dims[2], dims[3]};
}

nlohmann::json stats_json(const mcnet::ModelStats& st, mcnet::FlopConvention conv) {
  auto comp = [&](const mcnet::ComponentStats& c) {
    std::vector<std::size_t> out(c.output.extents().begin(), c.output.extents().end());
    return nlohmann::json{{"name", c.name}, {"output", out},         {"params", c.params},
                          {"macs", c.macs}, {"elementwise", c.elementwise}, {"flops", c.flops(conv)}};
  };
  nlohmann::json j;
  j["params"] = st.params();
  j["flops"] = st.flops(conv);
  j["sets"] = nlohmann::json::array();
  for (const auto& s : st.sets) j["sets"].push_back(comp(s));
  j["heads"] = nlohmann::json::array();
  for (const auto& h : st.heads) j["heads"].push_back(comp(h));
  if (st.classifier) j["classifier"] = comp(*st.classifier);
  return j;
}

int cmd_stats(const std::string& model, const std::string& mode, bool both, const std::string& input,
              std::size_t classes, bool json, const std::string& convention) {
  const auto names = mcnet::preset_names();
  if (std::find(names.begin(), names.end(), model) == names.end())
    return fail(kUsage, "unknown model '" + model + "'");
  const auto conv = convention == "mul_add" ? mcnet::FlopConvention::mul_add : mcnet::FlopConvention::mac;
  const mcnet::Shape in = parse_shape(input);
  std::vector<mcnet::ClassifierMode> modes;
  if (both || mode == "original") modes.push_back(mcnet::ClassifierMode::original);
  if (both || mode == "multi") modes.push_back(mcnet::ClassifierMode::multi_heads);
  std::vector<mcnet::ModelStats> stats;
  for (auto m : modes) stats.push_back(mcnet::model_stats(model, m, classes, in));

  if (json) {
    nlohmann::json j;
    j["model"] = model;
    j["input"] = std::vector<std::size_t>(in.extents().begin(), in.extents().end());
    j["flop_convention"] = mcnet::to_string(conv);
    for (std::size_t k = 0; k < modes.size(); ++k)
      j[modes[k] == mcnet::ClassifierMode::original ? "original" : "multi"] = stats_json(stats[k], conv);
    if (both) {
      j["param_ratio"] = static_cast<double>(stats[1].params()) / static_cast<double>(stats[0].params());
      j["flop_ratio"] = static_cast<double>(stats[1].flops(conv)) / static_cast<double>(stats[0].flops(conv));
    }
    std::cout << j.dump(2) << "\n";
    return kOk;
  }
  for (std::size_t k = 0; k < modes.size(); ++k) std::cout << mcnet::format_stats(model, modes[k], stats[k], conv);
  if (both) {
    const double pr = static_cast<double>(stats[1].params()) / static_cast<double>(stats[0].params());
    const double fr = static_cast<double>(stats[1].flops(conv)) / static_cast<double>(stats[0].flops(conv));
    std::printf("ratio multi/original: params %.3f flops %.3f\n", pr, fr);
    if (const auto ref = mcnet::reference_for(model))
      std::printf("reference params %.1fM/%.1fM = %.3f (computed %.2fM/%.2fM)\n", ref->multi_params_m,
                  ref->original_params_m, ref->multi_params_m / ref->original_params_m,
                  static_cast<double>(stats[1].params()) / 1e6, static_cast<double>(stats[0].params()) / 1e6);
  }
  return kOk;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed) {
  std::vector<std::string> scopes = scope == "all" ? mcnet::gradcheck_scopes() : std::vector<std::string>{scope};
  bool ok = true;
  for (const auto& s : scopes) {
    const auto report = mcnet::gradcheck(s, seed);
    std::cout << report.str();
    ok = ok && report.passed();
  }
  return ok ? kOk : kCheckFailed;
}

int cmd_normcheck(std::size_t n, std::size_t samples, std::uint64_t seed, bool require_corollary) {
  const auto r = mcnet::normcheck(n, samples, seed);
  std::cout << mcnet::to_report(r);
  for (const auto& w : mcnet::normcheck_examples()) std::cout << "  example " << w.str() << "\n";
  bool ok = r.identities_pass() && r.condition_pass();
  if (require_corollary) ok = ok && r.corollary_pass();
  return ok ? kOk : kCheckFailed;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out, const std::string& split,
             const std::string& title) {
  std::vector<mcnet::PlotSeries> series;
  for (const auto& path : csvs) {
    mcnet::MetricsTable t;
    try {
      t = mcnet::read_metrics_csv(path);
    } catch (const mcnet::FormatError& e) {
      return fail(kMetricsInput, path + ": " + e.what());
    }
    auto pts = t.series(split);
    if (pts.empty()) return fail(kMetricsInput, path + ": no '" + split + "' rows");
    series.push_back({std::filesystem::path(path).stem().string(), std::move(pts)});
  }
  mcnet::write_text(out, mcnet::render_svg(series, title.empty() ? split + " accuracy" : title));
  std::cout << "wrote " << out << " (" << series.size() << " series)\n";
  return kOk;
}

std::string keys_help() {
  std::string s = "Config keys ([section] key = default):\n";
  std::string section;
  for (const auto& k : mcnet::config_keys()) {
    if (section != k.section) s += std::string("  [") + (section = k.section) + "]\n";
    s += std::string("    ") + k.key + " = " + k.default_value + "    " + k.help + "\n";
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcnet: multi-head classifiers for concatenate-designed CNNs"};
  app.require_subcommand(1);

  std::string config, checkpoint;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train one run per seed and write metrics CSVs");
  train->add_option("--config,-c", config, "experiment config file (defaults apply when omitted)");
  train->add_option("--override,-o", overrides, "key=value or section.key=value, repeatable");
  train->add_flag("--quiet,-q", quiet, "no per-epoch progress");
  train->footer(keys_help());

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--config,-c", config, "experiment config file");
  eval->add_option("--override,-o", overrides, "key=value, repeatable");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  std::string model = "mini_resnet", mode = "multi", input = "1,3,32,32", convention = "mac";
  std::size_t classes = 10;
  bool both = false, json = false;
  auto* stats = app.add_subcommand("stats", "parameter and FLOP accounting");
  stats->add_option("--model,-m", model, "preset name")->capture_default_str();
  stats->add_option("--mode", mode, "original | multi")->check(CLI::IsMember({"original", "multi"}))->capture_default_str();
  stats->add_flag("--both", both, "report both modes and their ratio");
  stats->add_option("--input", input, "input shape B,C,H,W")->capture_default_str();
  stats->add_option("--classes", classes, "category count")->capture_default_str();
  stats->add_flag("--json", json, "machine-readable output");
  stats->add_option("--convention", convention, "mac (1 MAC = 1 FLOP) | mul_add (2 FLOPs)")
      ->check(CLI::IsMember({"mac", "mul_add"}))
      ->capture_default_str();

  std::string scope = "all";
  std::uint64_t seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  grad->add_option("--scope", scope, "layers | head | model-mini | all")
      ->check(CLI::IsMember({"layers", "head", "model-mini", "all"}))
      ->capture_default_str();
  grad->add_option("--seed", seed, "seed")->capture_default_str();

  std::size_t n = 10, samples = 10000;
  bool require_corollary = false;
  auto* norm = app.add_subcommand("normcheck", "property sweep of the score normalizers");
  norm->add_option("--n,-N", n, "category count (>= 2)")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
  norm->add_option("--samples", samples, "random score vectors")->check(CLI::Range(std::size_t{1}, std::size_t{100000000}));
  norm->add_option("--seed", seed, "seed")->capture_default_str();
  norm->add_flag("--require-corollary", require_corollary, "fail when the positive-score corollary has counterexamples");

  std::vector<std::string> csvs;
  std::string out = "accuracy.svg", split = "train", title;
  auto* plot = app.add_subcommand("plot", "SVG chart of accuracy per epoch, one line per CSV");
  plot->add_option("csv", csvs, "metrics CSV files")->required();
  plot->add_option("--out", out, "output SVG path")->capture_default_str();
  plot->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  plot->add_option("--title", title, "chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(config, overrides, quiet);
    if (*eval) return cmd_eval(config, overrides, checkpoint);
    if (*stats) return cmd_stats(model, mode, both, input, classes, json, convention);
    if (*grad) return cmd_gradcheck(scope, seed);
    if (*norm) return cmd_normcheck(n, samples, seed, require_corollary);
    if (*plot) return cmd_plot(csvs, out, split, title);
  } catch (const mcnet::OverrideError& e) {
    return fail(kOverride, std::string("override: ") + e.what());
  } catch (const mcnet::ConfigError& e) {
    return fail(kConfig, std::string("config: ") + e.what());
  } catch (const mcnet::DataError& e) {
    return fail(kDataset, std::string("dataset: ") + e.what());
  } catch (const mcnet::VersionError& e) {
    return fail(kCheckpoint, e.what());
  } catch (const mcnet::FormatError& e) {
    return fail(kDataset, std::string("dataset: ") + e.what());
  } catch (const mcnet::ContractError& e) {
    return fail(kConfig, std::string("config: ") + e.what());
  } catch (const mcnet::ShapeError& e) {
    return fail(kUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kUnexpected, e.what());
  }
  return kUsage;
}
