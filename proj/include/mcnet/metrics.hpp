#pragma once

// Metrics CSV files, seed summaries and SVG accuracy charts.
//
// CSV layout (version 1):
//   # mcnet metrics v1
//   # run <free text describing the run>
//   epoch,split,loss,accuracy,lr,seconds
//   1,train,2.226500,0.197600,0.001,0
//   1,test,...

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mcnet/errors.hpp"
#include "mcnet/train.hpp"

namespace mcnet {

inline constexpr const char* kMetricsVersionLine = "# mcnet metrics v1";
inline constexpr const char* kMetricsHeader = "epoch,split,loss,accuracy,lr,seconds";

/// Malformed metrics CSV; the message carries the line number.
class CsvError : public FormatError {
 public:
  CsvError(std::size_t line, const std::string& what)
      : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;  // train | test
  double loss = 0;
  double accuracy = 0;
  double lr = 0;
  double seconds = 0;
};

struct MetricsTable {
  std::string run_info;
  std::vector<MetricsRow> rows;

  /// (epoch, accuracy) of one split in file order.
  [[nodiscard]] std::vector<std::pair<std::size_t, double>> series(const std::string& split) const {
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& r : rows)
      if (r.split == split) out.emplace_back(r.epoch, r.accuracy);
    return out;
  }
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

/// Rows for each epoch: train, then test when present. With
/// `record_time` false the seconds column is written as 0 so reruns are
/// byte-identical.
inline std::string format_metrics_csv(const RunMetrics& m, const std::string& run_info, bool record_time) {
  std::ostringstream os;
  os << kMetricsVersionLine << "\n# run " << run_info << "\n" << kMetricsHeader << "\n";
  for (const auto& e : m.epochs) {
    const std::string secs = record_time ? detail::fmt("%.3f", e.seconds) : "0";
    const std::string lr = detail::fmt("%.9g", e.lr);
    os << e.epoch << ",train," << detail::fmt("%.6f", e.train_loss) << "," << detail::fmt("%.6f", e.train_accuracy)
       << "," << lr << "," << secs << "\n";
    if (e.has_test)
      os << e.epoch << ",test," << detail::fmt("%.6f", e.test_loss) << "," << detail::fmt("%.6f", e.test_accuracy)
         << "," << lr << "," << secs << "\n";
  }
  return os.str();
}

/// Wall-clock seconds per epoch, kept apart from the deterministic CSV.
inline std::string format_timings(const RunMetrics& m) {
  std::ostringstream os;
  os << "epoch,seconds\n";
  for (const auto& e : m.epochs) os << e.epoch << "," << detail::fmt("%.3f", e.seconds) << "\n";
  return os.str();
}

inline MetricsTable parse_metrics_csv(std::istream& in) {
  MetricsTable t;
  std::string line;
  std::size_t lineno = 0;
  bool header = false, version = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == kMetricsVersionLine) version = true;
      else if (line.starts_with("# mcnet metrics")) throw CsvError(lineno, "unsupported metrics version: " + line);
      else if (line.starts_with("# run ")) t.run_info = line.substr(6);
      continue;
    }
    if (!header) {
      if (line != kMetricsHeader) throw CsvError(lineno, "expected header '" + std::string(kMetricsHeader) + "'");
      if (!version) throw CsvError(lineno, "missing '" + std::string(kMetricsVersionLine) + "' line");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw CsvError(lineno, "expected 6 fields, got " + std::to_string(f.size()));
    MetricsRow r;
    try {
      std::size_t used = 0;
      const long long ep = std::stoll(f[0], &used);
      if (used != f[0].size() || ep < 1) throw std::invalid_argument("epoch");
      r.epoch = static_cast<std::size_t>(ep);
      auto num = [](const std::string& s) {
        std::size_t u = 0;
        const double v = std::stod(s, &u);
        if (u != s.size() || !std::isfinite(v)) throw std::invalid_argument("number");
        return v;
      };
      r.loss = num(f[2]);
      r.accuracy = num(f[3]);
      r.lr = num(f[4]);
      r.seconds = num(f[5]);
    } catch (const std::exception&) {
      throw CsvError(lineno, "malformed numeric field in '" + line + "'");
    }
    if (f[1] != "train" && f[1] != "test") throw CsvError(lineno, "split must be train or test, got '" + f[1] + "'");
    if (r.accuracy < 0 || r.accuracy > 1) throw CsvError(lineno, "accuracy outside [0, 1]");
    r.split = f[1];
    t.rows.push_back(std::move(r));
  }
  if (!header) throw CsvError(lineno == 0 ? 1 : lineno, "empty metrics file (no header)");
  if (t.rows.empty()) throw CsvError(lineno, "metrics file has no data rows");
  return t;
}

inline MetricsTable read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse_metrics_csv(in);
}

struct SpreadStat {
  double mean = 0;
  double half_range = 0;  // (max - min) / 2
  double min = 0, max = 0;
  std::size_t n = 0;

  /// e.g. 0.9505±0.0013
  [[nodiscard]] std::string str(int digits = 4) const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.*f±%.*f", digits, mean, digits, half_range);
    return buf;
  }
};

inline SpreadStat spread(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("spread of an empty sample");
  SpreadStat s;
  s.n = v.size();
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.half_range = (s.max - s.min) / 2;
  return s;
}

struct SeedRun {
  std::uint64_t seed = 0;
  RunMetrics metrics;
};

/// Text summary across seeded runs: final and best test accuracy as
/// mean±half-range, plus the single best run.
inline std::string format_summary(const std::string& run_info, const std::vector<SeedRun>& runs) {
  if (runs.empty()) throw ContractError("summary needs at least one run");
  std::vector<double> final_acc, best_acc, final_train;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& m = runs[i].metrics;
    if (m.epochs.empty()) throw ContractError("summary of a run without epochs");
    final_acc.push_back(m.epochs.back().test_accuracy);
    final_train.push_back(m.epochs.back().train_accuracy);
    best_acc.push_back(m.best_test_accuracy());
    if (best_acc.back() > best_acc[best_idx]) best_idx = i;
  }
  std::ostringstream os;
  os << "# mcnet summary v1\n# run " << run_info << "\n";
  os << "runs=" << runs.size() << " seeds=";
  for (std::size_t i = 0; i < runs.size(); ++i) os << (i ? "," : "") << runs[i].seed;
  os << "\nerror range = half of (max - min) across seeds\n";
  os << "final_test_accuracy " << spread(final_acc).str() << "\n";
  os << "best_test_accuracy " << spread(best_acc).str() << "\n";
  os << "final_train_accuracy " << spread(final_train).str() << "\n";
  os << "best_run seed=" << runs[best_idx].seed << " test_accuracy=" << detail::fmt("%.4f", best_acc[best_idx])
     << " epoch=" << runs[best_idx].metrics.best_epoch() << "\n";
  return os.str();
}

struct PlotSeries {
  std::string label;
  std::vector<std::pair<std::size_t, double>> points;  // (epoch, accuracy)
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Accuracy-vs-epoch line chart. Output depends only on the inputs.
inline std::string render_svg(const std::vector<PlotSeries>& series, const std::string& title) {
  if (series.empty()) throw ContractError("plot needs at least one series");
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double W = 720, H = 440, L = 60, R = 180, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  std::size_t max_epoch = 1;
  double lo = 1.0, hi = 0.0;
  for (const auto& s : series)
    for (const auto& [e, a] : s.points) {
      max_epoch = std::max(max_epoch, e);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  if (hi < lo) lo = 0, hi = 1;
  lo = std::floor(lo * 10) / 10;
  hi = std::ceil(hi * 10) / 10;
  if (hi - lo < 0.1) hi = std::min(1.0, lo + 0.1), lo = hi - 0.1;
  auto px = [&](double e) { return L + (max_epoch == 1 ? 0.0 : (e - 1) / static_cast<double>(max_epoch - 1) * pw); };
  auto py = [&](double a) { return T + ph - (a - lo) / (hi - lo) * ph; };
  using detail::fmt;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << detail::xml_escape(title)
     << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double a = lo + (hi - lo) * k / 5.0;
    const std::string y = fmt("%.2f", py(a));
    os << "<line x1=\"" << L << "\" y1=\"" << y << "\" x2=\"" << L + pw << "\" y2=\"" << y
       << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << y << "\" text-anchor=\"end\" dominant-baseline=\"middle\">"
       << fmt("%.2f", a) << "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, (max_epoch + 9) / 10);
  for (std::size_t e = 1; e <= max_epoch; e += step)
    os << "<text x=\"" << fmt("%.2f", px(static_cast<double>(e))) << "\" y=\"" << T + ph + 18
       << "\" text-anchor=\"middle\">" << e << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">epoch</text>\n";
  os << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << T + ph / 2
     << ")\">accuracy</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colours[i % 10];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < series[i].points.size(); ++k) {
      const auto& [e, a] = series[i].points[k];
      os << (k ? " " : "") << fmt("%.2f", px(static_cast<double>(e))) << "," << fmt("%.2f", py(a));
    }
    os << "\"/>\n";
    const double ly = T + 10 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly << "\" dominant-baseline=\"middle\">"
       << detail::xml_escape(series[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mcnet
