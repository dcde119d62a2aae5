#pragma once

// Property sweep over random score vectors for the softmax / L2 normalizers:
// identities, shift invariance, argmax agreement, the derivative-dominance
// condition sum_k e^{x_k} <= 4 e^{x_i} in both directions, and the
// positive-input lower-bound corollary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/rng.hpp"
#include "mcnet/scorenorm.hpp"

namespace mcnet {

struct NormCheckConfig {
  double identity_tolerance = 1e-12;
  bool identities = true;
  bool condition = true;
  bool corollary = true;
};

struct Witness {
  std::string what;
  std::vector<double> x;
  std::size_t i = 0, j = 0;
  double partial_l2 = 0, partial_softmax = 0;
  bool condition = false;
  bool pairwise = true;  // false for whole-vector witnesses such as the corollary

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << std::setprecision(10) << what << ": N=" << x.size() << " x=[";
    for (std::size_t k = 0; k < x.size(); ++k) os << (k ? "," : "") << x[k];
    os << "]";
    if (!pairwise) {
      os << " min x=" << *std::min_element(x.begin(), x.end())
         << " ln(N/4)=" << std::log(static_cast<double>(x.size()) / 4.0);
      return os.str();
    }
    os << " i=" << i << " j=" << j << " dL=" << partial_l2 << " dS=" << partial_softmax
       << " condition=" << (condition ? "true" : "false");
    return os.str();
  }
};

struct NormSweep {
  std::size_t n = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  double max_sqrt_error = 0;       // |L - sqrt(S)|
  double max_unit_norm_error = 0;  // |sum L^2 - 1|
  double max_softmax_sum_error = 0;
  double max_shift_error = 0;
  std::size_t identity_failures = 0;
  std::size_t argmax_failures = 0;

  std::size_t condition_true_pairs = 0;
  std::size_t condition_false_pairs = 0;
  std::size_t forward_counterexamples = 0;   // condition true but dL < dS
  std::size_t backward_counterexamples = 0;  // dL >= dS but condition false

  bool corollary_applies = false;  // N >= 4
  std::size_t corollary_samples = 0;
  std::size_t corollary_failures = 0;

  std::vector<Witness> witnesses;  // first counterexample of each kind

  [[nodiscard]] bool identities_pass() const { return identity_failures == 0 && argmax_failures == 0; }
  [[nodiscard]] bool condition_pass() const {
    return forward_counterexamples == 0 && backward_counterexamples == 0;
  }
  [[nodiscard]] bool corollary_pass() const { return corollary_failures == 0; }
};

namespace detail {

/// Scores with a random offset and spread, so both sides of the condition
/// and extreme magnitudes occur.
inline std::vector<double> random_scores(std::size_t n, SeededRng& rng) {
  const double spread = rng.uniform(0.05, 8.0);
  const double offset = rng.uniform(-30.0, 30.0);
  std::vector<double> x(n);
  for (auto& v : x) v = offset + spread * rng.uniform(-1.0, 1.0);
  return x;
}

inline std::size_t first_argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

inline constexpr std::size_t kAllPairsLimit = 16;

inline NormSweep normcheck(std::size_t n, std::size_t samples, std::uint64_t seed, const NormCheckConfig& cfg = {}) {
  if (n < 2) throw ContractError("normcheck needs N >= 2");
  if (samples < 1) throw ContractError("normcheck needs at least one sample");
  NormSweep r;
  r.n = n;
  r.samples = samples;
  r.seed = seed;
  r.corollary_applies = n >= 4;
  const SeededRng root(seed);
  bool seen_fwd = false, seen_bwd = false, seen_cor = false;

  for (std::size_t s = 0; s < samples; ++s) {
    SeededRng rng = root.split(s);
    const ScoreVector<double> x(detail::random_scores(n, rng));
    const auto S = softmax(x);
    const auto L = l2_score(x);

    if (cfg.identities) {
      double sum_sq = 0, sum_s = 0, sqrt_err = 0;
      for (std::size_t k = 0; k < n; ++k) {
        sqrt_err = std::max(sqrt_err, std::abs(L[k] - std::sqrt(S[k])));
        sum_sq += L[k] * L[k];
        sum_s += S[k];
      }
      const double c = rng.uniform(-50.0, 50.0);
      std::vector<double> shifted(x.values().begin(), x.values().end());
      for (auto& v : shifted) v += c;
      const ScoreVector<double> xs(shifted);
      const auto Ss = softmax(xs);
      const auto Ls = l2_score(xs);
      double shift_err = 0;
      for (std::size_t k = 0; k < n; ++k)
        shift_err = std::max({shift_err, std::abs(Ss[k] - S[k]), std::abs(Ls[k] - L[k])});
      const double unit_err = std::abs(sum_sq - 1.0), sum_err = std::abs(sum_s - 1.0);
      r.max_sqrt_error = std::max(r.max_sqrt_error, sqrt_err);
      r.max_unit_norm_error = std::max(r.max_unit_norm_error, unit_err);
      r.max_softmax_sum_error = std::max(r.max_softmax_sum_error, sum_err);
      r.max_shift_error = std::max(r.max_shift_error, shift_err);
      const double tol = cfg.identity_tolerance;
      if (sqrt_err >= tol || unit_err >= tol || sum_err >= tol || shift_err >= tol) ++r.identity_failures;
      const std::vector<double> xv(x.values().begin(), x.values().end());
      const std::size_t am = detail::first_argmax(xv);
      if (detail::first_argmax(S) != am || detail::first_argmax(L) != am) ++r.argmax_failures;
    }

    if (cfg.condition) {
      // every ordered pair for small N, otherwise a random subset of pairs
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      if (n <= kAllPairsLimit) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            if (i != j) pairs.emplace_back(i, j);
      } else {
        while (pairs.size() < kAllPairsLimit) {
          const std::size_t i = rng.uniform_index(n), j = rng.uniform_index(n);
          if (i != j) pairs.emplace_back(i, j);
        }
      }
      for (const auto& [i, j] : pairs) {
        const bool cond = convergence_condition(x, i);
        const double dl = l2score_partial(x, i, j), ds = softmax_partial(x, i, j);
        const bool dominates = dl >= ds;
        (cond ? r.condition_true_pairs : r.condition_false_pairs) += 1;
        if (cond && !dominates) {
          ++r.forward_counterexamples;
          if (!seen_fwd) {
            seen_fwd = true;
            r.witnesses.push_back(
                {"condition true but dL < dS", {x.values().begin(), x.values().end()}, i, j, dl, ds, cond});
          }
        }
        if (!cond && dominates) {
          ++r.backward_counterexamples;
          if (!seen_bwd) {
            seen_bwd = true;
            r.witnesses.push_back(
                {"dL >= dS but condition false", {x.values().begin(), x.values().end()}, i, j, dl, ds, cond});
          }
        }
      }
    }

    if (cfg.corollary && r.corollary_applies) {
      // all-positive scores drawn on (0, spread]
      const double spread = rng.uniform(0.05, 4.0);
      std::vector<double> pos(n);
      for (auto& v : pos) v = spread * (1.0 - rng.uniform());
      ++r.corollary_samples;
      if (!lower_bound_ok(ScoreVector<double>(pos))) {
        ++r.corollary_failures;
        if (!seen_cor) {
          seen_cor = true;
          r.witnesses.push_back({"positive scores below ln(N/4)", pos, 0, 0, 0, 0, false, false});
        }
      }
    }
  }
  return r;
}

/// Fixed illustrative cases: N=2 zeros (condition holds) and N=8 zeros
/// (condition fails).
inline std::vector<Witness> normcheck_examples() {
  std::vector<Witness> out;
  for (std::size_t n : {2u, 8u}) {
    const ScoreVector<double> x(std::vector<double>(n, 0.0));
    out.push_back({n == 2 ? "condition-true witness" : "condition-false witness",
                   std::vector<double>(n, 0.0), 0, 1, l2score_partial(x, 0, 1), softmax_partial(x, 0, 1),
                   convergence_condition(x, 0)});
  }
  return out;
}

inline std::string to_report(const NormSweep& r) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3);
  os << "normcheck N=" << r.n << " samples=" << r.samples << " seed=" << r.seed << "\n";
  os << "  identities: max|L-sqrt(S)|=" << r.max_sqrt_error << " max|sum L^2-1|=" << r.max_unit_norm_error
     << " max|sum S-1|=" << r.max_softmax_sum_error << " max shift err=" << r.max_shift_error
     << " failures=" << r.identity_failures << " argmax mismatches=" << r.argmax_failures << "  "
     << (r.identities_pass() ? "PASS" : "FAIL") << "\n";
  os << "  condition <=> dL>=dS: true pairs=" << r.condition_true_pairs << " false pairs=" << r.condition_false_pairs
     << " forward counterexamples=" << r.forward_counterexamples
     << " backward counterexamples=" << r.backward_counterexamples << "  " << (r.condition_pass() ? "PASS" : "FAIL")
     << "\n";
  if (r.corollary_applies)
    os << "  corollary (x>0 => min x > ln(N/4)): samples=" << r.corollary_samples
       << " failures=" << r.corollary_failures << "  " << (r.corollary_pass() ? "PASS" : "FAIL") << "\n";
  else
    os << "  corollary: not applicable for N < 4\n";
  for (const auto& w : r.witnesses) os << "  counterexample " << w.str() << "\n";
  return os.str();
}

}  // namespace mcnet
