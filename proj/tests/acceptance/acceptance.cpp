// Acceptance run: one PASS/FAIL line per criterion, with indented detail
// lines. `--only N` (repeatable) restricts the run to the listed criteria.
// Exits non-zero when any selected criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/experiment.hpp"
#include "mcnet/gradcheck.hpp"
#include "mcnet/normcheck.hpp"

namespace fs = std::filesystem;
using namespace mcnet;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void detail_line(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mcnet_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

bool criterion_gradients() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::size_t tensors = 0;
  for (const auto& scope : gradcheck_scopes()) {
    const auto ts = Clock::now();
    const GradCheckReport r = gradcheck(scope, 0);
    double worst = 0;
    std::size_t skipped = 0;
    for (const auto& c : r.checks) {
      worst = std::max(worst, c.max_rel_error);
      skipped += c.skipped;
    }
    tensors += r.checks.size();
    ok = ok && r.passed();
    detail_line(fmt("%-10s tensors=%zu max rel err=%.3e kink-skipped entries=%zu %s (%.1fs)", scope.c_str(),
                    r.checks.size(), worst, skipped, r.passed() ? "pass" : "FAIL", since(ts)));
    if (!r.passed())
      for (const auto& c : r.checks)
        if (!c.passed) detail_line("  failing: " + c.group + "/" + c.tensor + fmt(" err=%.3e", c.max_rel_error));
  }
  const double secs = since(t0);
  detail_line(fmt("%zu tensors, eps=1e-5, tolerance=1e-4, total %.1fs (budget 120s)", tensors, secs));
  return ok && secs < 120.0;
}

// ---------------------------------------------------------------------------
// 2. Normalization identities

bool criterion_identities() {
  NormCheckConfig cfg;
  cfg.condition = false;
  cfg.corollary = false;
  bool ok = true;
  for (std::size_t n : {2u, 4u, 10u, 100u}) {
    const auto t0 = Clock::now();
    const NormSweep r = normcheck(n, 100000, 2000 + n, cfg);
    ok = ok && r.identities_pass();
    detail_line(fmt("N=%-3zu samples=100000 max|L-sqrt(S)|=%.2e max|sum L^2-1|=%.2e max|sum S-1|=%.2e "
                    "max shift err=%.2e failures=%zu argmax mismatches=%zu (%.1fs)",
                    n, r.max_sqrt_error, r.max_unit_norm_error, r.max_softmax_sum_error, r.max_shift_error,
                    r.identity_failures, r.argmax_failures, since(t0)));
  }
  return ok;
}

// ---------------------------------------------------------------------------
// 3. Convergence condition

bool criterion_condition() {
  bool equivalence = true, corollary = true;
  for (std::size_t n : {2u, 4u, 10u}) {
    NormCheckConfig cfg;
    cfg.identities = false;
    const NormSweep r = normcheck(n, 10000, 3000 + n, cfg);
    equivalence = equivalence && r.condition_pass();
    detail_line(fmt("N=%-2zu condition<=>dL>=dS: true pairs=%zu false pairs=%zu forward cx=%zu backward cx=%zu %s", n,
                    r.condition_true_pairs, r.condition_false_pairs, r.forward_counterexamples,
                    r.backward_counterexamples, r.condition_pass() ? "pass" : "FAIL"));
    if (r.corollary_applies) {
      corollary = corollary && r.corollary_pass();
      detail_line(fmt("N=%-2zu corollary (x>0 => lower_bound_ok): samples=%zu failures=%zu %s", n, r.corollary_samples,
                      r.corollary_failures, r.corollary_pass() ? "pass" : "FAIL"));
    }
    for (const auto& w : r.witnesses) detail_line("  " + w.str());
  }
  if (!corollary)
    detail_line("corollary does not hold: for N > 4, positive scores below ln(N/4) violate the bound");
  detail_line(std::string("equivalence ") + (equivalence ? "pass" : "FAIL") + ", corollary " +
              (corollary ? "pass" : "FAIL"));
  return equivalence && corollary;
}

// ---------------------------------------------------------------------------
// 4. Complexity accounting

struct TableRow {
  const char* model;
  double orig_params_m, multi_params_m, orig_gflops, multi_gflops;
};

bool criterion_complexity() {
  const Shape input{1, 3, 32, 32};
  const std::array<TableRow, 2> table{{{"vgg16", 15.7, 21.5, 0.3, 0.5}, {"resnet18", 10.2, 15.9, 0.9, 1.4}}};
  bool ok = true;
  auto deviation = [](double computed, double ref) { return (computed - ref) / ref; };
  auto flag = [](double dev) { return std::abs(dev) > 0.15 ? " beyond 15%, see README" : ""; };
  for (const auto& row : table) {
    const ModelStats o = model_stats(row.model, ClassifierMode::original, 10, input);
    const ModelStats m = model_stats(row.model, ClassifierMode::multi_heads, 10, input);
    const double op = static_cast<double>(o.params()) / 1e6, mp = static_cast<double>(m.params()) / 1e6;
    const double of = static_cast<double>(o.flops()) / 1e9, mf = static_cast<double>(m.flops()) / 1e9;
    const double pr = mp / op, fr = mf / of;
    const double target = row.multi_params_m / row.orig_params_m;
    const bool p_ok = std::abs(pr - target) <= 0.15;
    const bool f_ok = fr >= 1.4 && fr <= 2.2;
    ok = ok && p_ok && f_ok;
    detail_line(fmt("%-8s param ratio=%.3f (target %.3f +-0.15) %s; FLOP ratio=%.3f (range [1.4, 2.2]) %s", row.model,
                    pr, target, p_ok ? "pass" : "FAIL", fr, f_ok ? "pass" : "FAIL"));
    const double d1 = deviation(op, row.orig_params_m), d2 = deviation(mp, row.multi_params_m);
    const double d3 = deviation(of, row.orig_gflops), d4 = deviation(mf, row.multi_gflops);
    detail_line(fmt("  original params %.3fM vs table %.1fM (%+.1f%%)%s", op, row.orig_params_m, 100 * d1, flag(d1)));
    detail_line(fmt("  multi    params %.3fM vs table %.1fM (%+.1f%%)%s", mp, row.multi_params_m, 100 * d2, flag(d2)));
    detail_line(fmt("  original FLOPs  %.3fG vs table %.1fG (%+.1f%%)%s", of, row.orig_gflops, 100 * d3, flag(d3)));
    detail_line(fmt("  multi    FLOPs  %.3fG vs table %.1fG (%+.1f%%)%s", mf, row.multi_gflops, 100 * d4, flag(d4)));
    std::size_t backbone = 0;
    for (const auto& s : o.sets) backbone += s.params;
    detail_line(fmt("  backbone sets alone: %.3fM params", static_cast<double>(backbone) / 1e6));
  }
  detail_line("FLOP convention: 1 MAC = 1 FLOP, input [1,3,32,32], 10 categories");
  return ok;
}

// ---------------------------------------------------------------------------
// 5 and 6. Desk-scale comparisons, sharing one set of runs per mode

struct ModeRuns {
  std::string label;
  std::vector<SeedRun> runs;
  double seconds = 0;
  double test_at(std::size_t r, std::size_t epoch) const { return runs[r].metrics.epochs[epoch - 1].test_accuracy; }
  double mean_at(std::size_t epoch) const {
    double s = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) s += test_at(r, epoch);
    return s / static_cast<double>(runs.size());
  }
};

constexpr std::size_t kEpochs = 20;
constexpr std::size_t kCompareEpoch = 10;
constexpr double kModeBudgetSeconds = 30 * 60;

struct DeskData {
  Dataset train, test;
  std::string description;
};

DeskData desk_data() {
  DataConfig dc;
  const char* env = std::getenv("MCNET_CIFAR_DIR");
  const fs::path dir = env ? env : "data";
  if (cifar_present(dir, CifarVariant::cifar10)) {
    dc.source = "cifar10";
    dc.path = dir.string();
  }
  dc.train_size = 5000;
  dc.test_size = 1000;
  auto [train, test] = load_datasets(dc);
  std::string desc = dc.source == "synthetic"
                         ? fmt("striped_patterns synthetic (CIFAR-10 not found under '%s'), %zux%zu, noise %.2f",
                               dir.string().c_str(), train.height, train.width, dc.noise)
                         : "CIFAR-10 subset from " + dir.string();
  return {std::move(train), std::move(test), desc + fmt(", %zu train / %zu test", dc.train_size, dc.test_size)};
}

ModeRuns run_mode(const DeskData& data, ClassifierMode mode, NormalizerKind norm, const std::string& label) {
  ExperimentConfig c;
  c.train.model = "mini_resnet";
  c.train.mode = mode;
  c.train.normalizer = norm;
  c.train.epochs = kEpochs;
  c.output.dir = scratch_dir("desk").string();
  c.output.checkpoint = false;
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7};
  ModeRuns out;
  out.label = label;
  const auto t0 = Clock::now();
  out.runs = run_experiment(c, data.train, data.test, [&](std::uint64_t seed, const EpochMetrics& e) {
    if (e.epoch == kCompareEpoch || e.epoch == kEpochs)
      detail_line(fmt("%-16s seed %llu epoch %2zu test acc %.4f train acc %.4f (%.0fs elapsed)", label.c_str(),
                      static_cast<unsigned long long>(seed), e.epoch, e.test_accuracy, e.train_accuracy, since(t0)));
  });
  out.seconds = since(t0);
  detail_line(fmt("%-16s 8 seeds x %zu epochs in %.1f min", label.c_str(), kEpochs, out.seconds / 60));
  return out;
}

struct DeskRuns {
  DeskData data;
  std::optional<ModeRuns> original, multi_l2, multi_softmax;
};

bool criterion_convergence(DeskRuns& d) {
  if (!d.original) d.original = run_mode(d.data, ClassifierMode::original, NormalizerKind::l2_sqrtexp, "original");
  if (!d.multi_l2) d.multi_l2 = run_mode(d.data, ClassifierMode::multi_heads, NormalizerKind::l2_sqrtexp, "multi-l2");
  const ModeRuns &o = *d.original, &m = *d.multi_l2;
  std::size_t wins = 0;
  for (std::size_t r = 0; r < 8; ++r) {
    const bool win = m.test_at(r, kCompareEpoch) >= o.test_at(r, kCompareEpoch);
    wins += win;
    detail_line(fmt("seed %zu epoch-%zu test acc: multi-l2 %.4f vs original %.4f %s", r, kCompareEpoch,
                    m.test_at(r, kCompareEpoch), o.test_at(r, kCompareEpoch), win ? ">=" : "<"));
  }
  std::vector<double> mf, of;
  for (std::size_t r = 0; r < 8; ++r) {
    mf.push_back(m.test_at(r, kEpochs));
    of.push_back(o.test_at(r, kEpochs));
  }
  const SpreadStat ms = spread(mf), os = spread(of);
  const bool wins_ok = wins >= 6, final_ok = ms.mean >= os.mean;
  const bool time_ok = o.seconds < kModeBudgetSeconds && m.seconds < kModeBudgetSeconds;
  detail_line(fmt("epoch-%zu wins: %zu/8 (need >= 6) %s", kCompareEpoch, wins, wins_ok ? "pass" : "FAIL"));
  detail_line("final test acc (mean +- half-range): multi-l2 " + ms.str() + " vs original " + os.str() +
              (final_ok ? " pass" : " FAIL"));
  detail_line(fmt("runtime per mode: original %.1f min, multi-l2 %.1f min (budget 30 min) %s", o.seconds / 60,
                  m.seconds / 60, time_ok ? "pass" : "FAIL"));
  return wins_ok && final_ok && time_ok;
}

bool criterion_ablation(DeskRuns& d) {
  if (!d.multi_l2) d.multi_l2 = run_mode(d.data, ClassifierMode::multi_heads, NormalizerKind::l2_sqrtexp, "multi-l2");
  if (!d.multi_softmax)
    d.multi_softmax = run_mode(d.data, ClassifierMode::multi_heads, NormalizerKind::softmax_l1exp, "multi-softmax");
  const double l2 = d.multi_l2->mean_at(kCompareEpoch), sm = d.multi_softmax->mean_at(kCompareEpoch);
  const bool acc_ok = l2 >= sm - 0.01;
  const bool time_ok = d.multi_softmax->seconds < kModeBudgetSeconds;
  detail_line(fmt("mean epoch-%zu test acc: L2 %.4f vs softmax %.4f (need L2 >= softmax - 0.01) %s", kCompareEpoch, l2,
                  sm, acc_ok ? "pass" : "FAIL"));
  detail_line(fmt("mean final test acc: L2 %.4f vs softmax %.4f", d.multi_l2->mean_at(kEpochs),
                  d.multi_softmax->mean_at(kEpochs)));
  detail_line(fmt("runtime multi-softmax %.1f min (budget 30 min) %s", d.multi_softmax->seconds / 60,
                  time_ok ? "pass" : "FAIL"));
  return acc_ok && time_ok;
}

// ---------------------------------------------------------------------------
// 7. Determinism

bool criterion_determinism() {
  bool ok = true;
  // the CLI twice with the same seed
  const fs::path root = scratch_dir("determinism");
  const fs::path cfg = root / "run.ini";
  {
    std::ofstream f(cfg);
    f << "[model]\npreset = mini_resnet\nclassifier = multi\n"
      << "[data]\ntrain_size = 400\ntest_size = 200\n"
      << "[train]\nepochs = 3\nbatch_size = 50\nseeds = 0-1\n"
      << "[output]\ncheckpoint = false\n";
  }
  for (const char* sub : {"a", "b"}) {
    const std::string cmd = std::string("\"") + MCNET_CLI_PATH + "\" train -q -c \"" + cfg.string() + "\" -o dir=\"" +
                            (root / sub).string() + "\" > /dev/null";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      detail_line(fmt("train invocation exited with %d", rc));
      return false;
    }
  }
  for (const char* name : {"mini_resnet_multi_l2_seed0.csv", "mini_resnet_multi_l2_seed1.csv"}) {
    const std::string a = slurp(root / "a" / name), b = slurp(root / "b" / name);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail_line(fmt("repeat train: %s %zu bytes %s", name, a.size(), same ? "byte-identical" : "DIFFER"));
  }

  // save/load continuation against an uninterrupted run
  SyntheticSpec s;
  s.n_samples = 400;
  s.image_size = 16;
  s.noise = 0.6;
  s.seed = 11;
  const Dataset train = make_synthetic(s);
  s.n_samples = 200;
  s.seed = 12;
  const Dataset test = make_synthetic(s);
  TrainConfig tc;
  tc.batch_size = 50;
  tc.seed = 5;
  Trainer full(tc, train);
  RunMetrics straight = full.fit(train, &test, 4);
  Trainer first(tc, train);
  RunMetrics resumed = first.fit(train, &test, 2);
  first.save(root / "half.ckpt");
  Trainer second(tc, train);
  second.load(root / "half.ckpt");
  for (auto& e : second.fit(train, &test, 2).epochs) resumed.epochs.push_back(e);
  const std::string ca = format_metrics_csv(straight, "continuation", false);
  const std::string cb = format_metrics_csv(resumed, "continuation", false);
  full.save(root / "full.ckpt");
  second.save(root / "resumed.ckpt");
  const bool csv_same = ca == cb;
  const bool ckpt_same = slurp(root / "full.ckpt") == slurp(root / "resumed.ckpt");
  ok = ok && csv_same && ckpt_same;
  detail_line(std::string("continuation 2+2 epochs vs 4 uninterrupted: metrics ") + (csv_same ? "identical" : "DIFFER") +
              ", final checkpoint " + (ckpt_same ? "byte-identical" : "DIFFERS"));
  return ok;
}

// ---------------------------------------------------------------------------
// 8. Sanity training

bool criterion_sanity() {
  SyntheticSpec s;
  s.kind = SyntheticKind::two_gaussians;
  s.n_samples = 200;
  s.n_classes = 2;
  s.image_size = 8;
  s.seed = 7;
  const Dataset train = make_synthetic(s);
  TrainConfig tc;
  tc.model = "mini_cnn";
  tc.batch_size = 20;
  tc.augment = false;
  tc.lr = 0.01;
  const auto t0 = Clock::now();
  Trainer t(tc, train);
  std::size_t reached = 0;
  double acc = 0;
  for (std::size_t e = 1; e <= 30; ++e) {
    acc = t.run_epoch(train).train_accuracy;
    if (acc >= 0.99) {
      reached = e;
      break;
    }
  }
  const double secs = since(t0);
  detail_line(fmt("mini_cnn, two_gaussians 200 samples 2 classes 8x8: train acc %.4f %s (%.2fs, budget 10s)", acc,
                  reached ? fmt("reached at epoch %zu", reached).c_str() : "not reached in 30 epochs", secs));
  return reached > 0 && secs < 10.0;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; i += 2)
    if (std::string(argv[i]) == "--only") only.insert(std::atoi(argv[i + 1]));

  DeskRuns desk;
  const bool need_desk = only.empty() || only.count(5) || only.count(6);
  if (need_desk) {
    desk.data = desk_data();
    std::printf("desk-scale data: %s\n", desk.data.description.c_str());
  }

  struct Criterion {
    int id;
    const char* name;
    std::function<bool()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite (layers, head, mini model)", criterion_gradients},
      {2, "normalization identities", criterion_identities},
      {3, "convergence condition equivalence and positive-score corollary", criterion_condition},
      {4, "complexity accounting ratios", criterion_complexity},
      {5, "desk-scale convergence, multi-head L2 vs original", [&] { return criterion_convergence(desk); }},
      {6, "normalizer ablation, L2 vs softmax", [&] { return criterion_ablation(desk); }},
      {7, "determinism and checkpoint continuation", criterion_determinism},
      {8, "sanity training, mini_cnn on two_gaussians", criterion_sanity},
  };

  std::size_t failed = 0, ran = 0;
  std::vector<std::string> summary;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::printf("criterion %d: %s\n", c.id, c.name);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    bool ok = false;
    try {
      ok = c.run();
    } catch (const std::exception& e) {
      detail_line(std::string("error: ") + e.what());
    }
    ++ran;
    failed += !ok;
    const std::string line = fmt("[%s] criterion %d: %s (%.1fs)", ok ? "PASS" : "FAIL", c.id, c.name, since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary.push_back(line);
  }
  std::printf("\nsummary\n");
  for (const auto& l : summary) std::printf("%s\n", l.c_str());
  std::printf("%zu of %zu criteria passed\n", ran - failed, ran);
  return failed ? 1 : 0;
}
