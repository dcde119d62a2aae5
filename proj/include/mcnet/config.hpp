#pragma once

// Experiment configuration files.
//
// Plain text, one `key = value` per line under [section] headers; `#` or `;`
// starts a comment. Every key has a default, unknown sections and keys are
// rejected with their line number, and a file either yields a fully
// validated ExperimentConfig or throws. Key names are unique across
// sections, so an override may be written `epochs=2` or `train.epochs=2`.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mcnet/backbones.hpp"
#include "mcnet/data.hpp"
#include "mcnet/train.hpp"

namespace mcnet {

/// Unparseable or invalid config file; `line` is 0 when not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A command-line override that is malformed, unknown or out of range.
class OverrideError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10 | cifar100
  std::string path = "data";
  std::size_t train_size = 0;  // 0: source default (synthetic 5000, CIFAR all)
  std::size_t test_size = 0;   // 0: source default (synthetic 1000, CIFAR all)
  SyntheticKind synthetic = SyntheticKind::striped_patterns;
  std::size_t image_size = 16;
  std::size_t classes = 10;
  double noise = 0.6;
  std::uint64_t data_seed = 1;
};

struct OutputConfig {
  std::string dir = "runs";
  bool checkpoint = true;
  bool record_time = false;  // wall-clock seconds in the CSV itself (breaks byte-identity)
};

struct ExperimentConfig {
  TrainConfig train;
  DataConfig data;
  OutputConfig output;
  std::vector<std::uint64_t> seeds{0};

  /// Canonical `key=value` listing of every field, stored in checkpoints.
  [[nodiscard]] std::string snapshot() const;
};

inline const char* to_string(SyntheticKind k) {
  return k == SyntheticKind::two_gaussians ? "two_gaussians" : "striped_patterns";
}

struct ConfigKey {
  const char* section;
  const char* key;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"model", "preset", "mini_resnet", "vgg16 | resnet18 | mini_vgg | mini_resnet | mini_cnn"},
      {"model", "classifier", "multi", "multi (one head per set) | original (single classifier)"},
      {"model", "normalizer", "l2", "l2 | softmax (head score normalizer)"},
      {"data", "source", "synthetic", "synthetic | cifar10 | cifar100"},
      {"data", "path", "data", "directory holding the CIFAR binary files"},
      {"data", "train_size", "0", "training samples; 0 = 5000 synthetic or the full CIFAR split"},
      {"data", "test_size", "0", "test samples; 0 = 1000 synthetic or the full CIFAR split"},
      {"data", "synthetic", "striped_patterns", "striped_patterns | two_gaussians"},
      {"data", "image_size", "16", "synthetic image side in pixels"},
      {"data", "classes", "10", "synthetic category count"},
      {"data", "noise", "0.6", "synthetic per-pixel noise std-dev"},
      {"data", "data_seed", "1", "seed of the synthetic train/test draw"},
      {"train", "lr", "0.001", "Adam learning rate (> 0)"},
      {"train", "batch_size", "100", "training mini-batch size"},
      {"train", "eval_batch_size", "500", "evaluation batch size"},
      {"train", "epochs", "20", "epochs per run"},
      {"train", "beta1", "0.9", "Adam first-moment decay"},
      {"train", "beta2", "0.999", "Adam second-moment decay"},
      {"train", "adam_eps", "1e-8", "Adam epsilon"},
      {"train", "plateau_factor", "0.1", "learning-rate multiplier on a plateau"},
      {"train", "plateau_patience", "10", "non-improving epochs tolerated before a reduction"},
      {"train", "plateau_threshold", "1e-4", "relative improvement that resets patience"},
      {"train", "min_lr", "1e-6", "learning-rate floor"},
      {"train", "seeds", "", "seed list, e.g. 0-7 or 0,3,5; overrides repeat"},
      {"train", "repeat", "1", "number of runs with seeds 0..repeat-1 when seeds is empty"},
      {"augment", "augment", "true", "random crop, flip and erasing on training batches"},
      {"augment", "normalize", "true", "per-channel mean/std from the training split"},
      {"augment", "crop_pad", "4", "zero padding before the random crop; 0 disables"},
      {"augment", "flip_p", "0.5", "horizontal flip probability"},
      {"augment", "erase_p", "0.5", "random erasing probability"},
      {"augment", "erase_area_lo", "0.02", "smallest erased area fraction"},
      {"augment", "erase_area_hi", "0.33", "largest erased area fraction"},
      {"augment", "erase_aspect_lo", "0.3", "smallest erased aspect ratio"},
      {"augment", "erase_aspect_hi", "3.3", "largest erased aspect ratio"},
      {"output", "dir", "runs", "output directory for CSVs, summary and checkpoints"},
      {"output", "checkpoint", "true", "save a checkpoint at the end of each run"},
      {"output", "record_time", "false", "write wall-clock seconds into the CSV (else 0, see timings file)"},
  };
  return keys;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline const ConfigKey* find_key(std::string_view section, std::string_view key) {
  for (const auto& k : config_keys())
    if (section == k.section && key == k.key) return &k;
  return nullptr;
}

inline bool known_section(std::string_view s) {
  return std::any_of(config_keys().begin(), config_keys().end(),
                     [&](const ConfigKey& k) { return s == k.section; });
}

struct RawValue {
  std::string value;
  std::size_t line = 0;  // 0: from an override
};

/// "section.key" -> value
using RawConfig = std::map<std::string, RawValue>;

inline std::uint64_t parse_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || p != end) throw std::invalid_argument("expected a non-negative integer");
  return out;
}

inline double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number");
  }
  if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument("expected a finite number");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

/// "0-7", "0,3,5" or a mix such as "0-2,9".
inline std::vector<std::uint64_t> parse_seeds(const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_uint(part));
      continue;
    }
    const auto lo = parse_uint(trim(part.substr(0, dash))), hi = parse_uint(trim(part.substr(dash + 1)));
    if (hi < lo || hi - lo > 10000) throw std::invalid_argument("bad seed range '" + part + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

inline RawConfig parse_raw(std::istream& in) {
  RawConfig raw;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(lineno, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!known_section(section)) throw ConfigError(lineno, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(lineno, "expected 'key = value'");
    if (section.empty()) throw ConfigError(lineno, "key outside of any [section]");
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    if (!find_key(section, key)) throw ConfigError(lineno, "unknown key '" + key + "' in [" + section + "]");
    const std::string full = section + "." + key;
    if (raw.count(full)) throw ConfigError(lineno, "duplicate key '" + key + "'");
    raw[full] = RawValue{value, lineno};
  }
  return raw;
}

inline void apply_override(RawConfig& raw, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw OverrideError("override '" + text + "' is not key=value");
  const std::string name = trim(text.substr(0, eq)), value = trim(text.substr(eq + 1));
  std::string full;
  if (const auto dot = name.find('.'); dot != std::string::npos) {
    if (find_key(name.substr(0, dot), name.substr(dot + 1))) full = name;
  } else {
    for (const auto& k : config_keys())
      if (name == k.key) full = std::string(k.section) + "." + k.key;
  }
  if (full.empty()) throw OverrideError("override names unknown key '" + name + "'");
  raw[full] = RawValue{value, 0};
}

}  // namespace detail

/// Typed conversion and validation of a raw key map.
inline ExperimentConfig build_config(const detail::RawConfig& raw) {
  ExperimentConfig c;
  auto fail = [](const detail::RawValue& rv, const std::string& full, const std::string& msg) -> void {
    const std::string what = full + " = '" + rv.value + "': " + msg;
    if (rv.line == 0) throw OverrideError(what);
    throw ConfigError(rv.line, what);
  };
  // Runs `fn` on the key's text when present; converts parse failures.
  auto with = [&](const char* full, const std::function<void(const std::string&)>& fn) {
    auto it = raw.find(full);
    if (it == raw.end()) return;
    try {
      fn(it->second.value);
    } catch (const std::invalid_argument& e) {
      fail(it->second, full, e.what());
    } catch (const std::out_of_range& e) {
      fail(it->second, full, e.what());
    }
  };
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  auto unit = [](double v, bool open_hi) {
    if (v < 0 || v > 1 || (open_hi && v >= 1)) throw std::invalid_argument("must lie in [0, 1" + std::string(open_hi ? ")" : "]"));
  };
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_uint;
  TrainConfig& t = c.train;

  with("model.preset", [&](const std::string& v) {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), v) == names.end())
      throw std::invalid_argument("unknown preset");
    t.model = v;
  });
  with("model.classifier", [&](const std::string& v) {
    if (v == "multi") t.mode = ClassifierMode::multi_heads;
    else if (v == "original") t.mode = ClassifierMode::original;
    else throw std::invalid_argument("expected multi or original");
  });
  with("model.normalizer", [&](const std::string& v) {
    if (v == "l2") t.normalizer = NormalizerKind::l2_sqrtexp;
    else if (v == "softmax") t.normalizer = NormalizerKind::softmax_l1exp;
    else throw std::invalid_argument("expected l2 or softmax");
  });

  DataConfig& d = c.data;
  with("data.source", [&](const std::string& v) {
    if (v != "synthetic" && v != "cifar10" && v != "cifar100")
      throw std::invalid_argument("expected synthetic, cifar10 or cifar100");
    d.source = v;
  });
  with("data.path", [&](const std::string& v) { d.path = v; });
  with("data.train_size", [&](const std::string& v) { d.train_size = parse_uint(v); });
  with("data.test_size", [&](const std::string& v) { d.test_size = parse_uint(v); });
  with("data.synthetic", [&](const std::string& v) {
    if (v == "striped_patterns") d.synthetic = SyntheticKind::striped_patterns;
    else if (v == "two_gaussians") d.synthetic = SyntheticKind::two_gaussians;
    else throw std::invalid_argument("expected striped_patterns or two_gaussians");
  });
  with("data.image_size", [&](const std::string& v) {
    d.image_size = parse_uint(v);
    if (d.image_size < 4 || d.image_size > 256) throw std::invalid_argument("must lie in [4, 256]");
  });
  with("data.classes", [&](const std::string& v) {
    d.classes = parse_uint(v);
    if (d.classes < 2 || d.classes > 1000) throw std::invalid_argument("must lie in [2, 1000]");
  });
  with("data.noise", [&](const std::string& v) {
    d.noise = parse_double(v);
    if (d.noise < 0) throw std::invalid_argument("must be non-negative");
  });
  with("data.data_seed", [&](const std::string& v) { d.data_seed = parse_uint(v); });

  with("train.lr", [&](const std::string& v) { t.lr = parse_double(v); positive(t.lr, "learning rate"); });
  with("train.batch_size", [&](const std::string& v) {
    t.batch_size = parse_uint(v);
    positive(static_cast<double>(t.batch_size), "batch size");
  });
  with("train.eval_batch_size", [&](const std::string& v) {
    t.eval_batch_size = parse_uint(v);
    positive(static_cast<double>(t.eval_batch_size), "batch size");
  });
  with("train.epochs", [&](const std::string& v) {
    t.epochs = parse_uint(v);
    positive(static_cast<double>(t.epochs), "epoch count");
  });
  with("train.beta1", [&](const std::string& v) { t.adam.beta1 = parse_double(v); unit(t.adam.beta1, true); });
  with("train.beta2", [&](const std::string& v) { t.adam.beta2 = parse_double(v); unit(t.adam.beta2, true); });
  with("train.adam_eps", [&](const std::string& v) { t.adam.eps = parse_double(v); positive(t.adam.eps, "eps"); });
  with("train.plateau_factor", [&](const std::string& v) {
    t.scheduler.factor = parse_double(v);
    if (!(t.scheduler.factor > 0 && t.scheduler.factor < 1)) throw std::invalid_argument("must lie in (0, 1)");
  });
  with("train.plateau_patience", [&](const std::string& v) { t.scheduler.patience = parse_uint(v); });
  with("train.plateau_threshold", [&](const std::string& v) {
    t.scheduler.threshold = parse_double(v);
    unit(t.scheduler.threshold, true);
  });
  with("train.min_lr", [&](const std::string& v) {
    t.scheduler.min_lr = parse_double(v);
    if (t.scheduler.min_lr < 0) throw std::invalid_argument("must be non-negative");
  });
  with("train.repeat", [&](const std::string& v) {
    const auto n = parse_uint(v);
    if (n < 1 || n > 10000) throw std::invalid_argument("must lie in [1, 10000]");
    c.seeds.clear();
    for (std::uint64_t s = 0; s < n; ++s) c.seeds.push_back(s);
  });
  with("train.seeds", [&](const std::string& v) {
    if (!v.empty()) c.seeds = detail::parse_seeds(v);
  });

  AugmentPolicy& p = t.policy;
  with("augment.augment", [&](const std::string& v) { t.augment = parse_bool(v); });
  with("augment.normalize", [&](const std::string& v) { t.normalize = parse_bool(v); });
  with("augment.crop_pad", [&](const std::string& v) {
    p.crop_pad = parse_uint(v);
    if (p.crop_pad > 64) throw std::invalid_argument("must be at most 64");
  });
  with("augment.flip_p", [&](const std::string& v) { p.flip_p = parse_double(v); unit(p.flip_p, false); });
  with("augment.erase_p", [&](const std::string& v) { p.erase_p = parse_double(v); unit(p.erase_p, false); });
  with("augment.erase_area_lo", [&](const std::string& v) { p.erase_area_lo = parse_double(v); });
  with("augment.erase_area_hi", [&](const std::string& v) { p.erase_area_hi = parse_double(v); });
  with("augment.erase_aspect_lo", [&](const std::string& v) { p.erase_aspect_lo = parse_double(v); });
  with("augment.erase_aspect_hi", [&](const std::string& v) { p.erase_aspect_hi = parse_double(v); });

  with("output.dir", [&](const std::string& v) {
    if (v.empty()) throw std::invalid_argument("must not be empty");
    c.output.dir = v;
  });
  with("output.checkpoint", [&](const std::string& v) { c.output.checkpoint = parse_bool(v); });
  with("output.record_time", [&](const std::string& v) { c.output.record_time = parse_bool(v); });

  // cross-field checks, reported against the last key involved
  try {
    p.validate();
  } catch (const ContractError& e) {
    const auto it = raw.find("augment.erase_area_hi");
    const bool from_override = std::any_of(raw.begin(), raw.end(), [](const auto& kv) {
      return kv.first.starts_with("augment.erase") && kv.second.line == 0;
    });
    if (from_override) throw OverrideError(e.what());
    throw ConfigError(it == raw.end() ? 0 : it->second.line, e.what());
  }
  return c;
}

inline ExperimentConfig parse_config(std::istream& in, const std::vector<std::string>& overrides = {}) {
  auto raw = detail::parse_raw(in);
  for (const auto& o : overrides) detail::apply_override(raw, o);
  return build_config(raw);
}

inline ExperimentConfig parse_config_string(const std::string& text, const std::vector<std::string>& overrides = {}) {
  std::istringstream in(text);
  return parse_config(in, overrides);
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file " + path.string());
  return parse_config(in, overrides);
}

inline std::string ExperimentConfig::snapshot() const {
  std::ostringstream os;
  os.precision(17);
  const TrainConfig& t = train;
  os << "[model]\npreset=" << t.model << "\nclassifier=" << (t.mode == ClassifierMode::multi_heads ? "multi" : "original")
     << "\nnormalizer=" << to_string(t.normalizer) << "\n[data]\nsource=" << data.source << "\npath=" << data.path
     << "\ntrain_size=" << data.train_size << "\ntest_size=" << data.test_size
     << "\nsynthetic=" << to_string(data.synthetic) << "\nimage_size=" << data.image_size
     << "\nclasses=" << data.classes << "\nnoise=" << data.noise << "\ndata_seed=" << data.data_seed
     << "\n[train]\nlr=" << t.lr << "\nbatch_size=" << t.batch_size << "\neval_batch_size=" << t.eval_batch_size
     << "\nepochs=" << t.epochs << "\nbeta1=" << t.adam.beta1 << "\nbeta2=" << t.adam.beta2
     << "\nadam_eps=" << t.adam.eps << "\nplateau_factor=" << t.scheduler.factor
     << "\nplateau_patience=" << t.scheduler.patience << "\nplateau_threshold=" << t.scheduler.threshold
     << "\nmin_lr=" << t.scheduler.min_lr << "\nseeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\nrepeat=" << seeds.size() << "\n[augment]\naugment=" << (t.augment ? "true" : "false") << "\nnormalize=" << (t.normalize ? "true" : "false")
     << "\ncrop_pad=" << t.policy.crop_pad << "\nflip_p=" << t.policy.flip_p << "\nerase_p=" << t.policy.erase_p
     << "\nerase_area_lo=" << t.policy.erase_area_lo << "\nerase_area_hi=" << t.policy.erase_area_hi
     << "\nerase_aspect_lo=" << t.policy.erase_aspect_lo << "\nerase_aspect_hi=" << t.policy.erase_aspect_hi
     << "\n[output]\ndir=" << output.dir << "\ncheckpoint=" << (output.checkpoint ? "true" : "false")
     << "\nrecord_time=" << (output.record_time ? "true" : "false") << "\n";
  return os.str();
}

/// Train and test splits named by the data section. Throws DataError when a
/// CIFAR source is selected and its files are missing.
inline std::pair<Dataset, Dataset> load_datasets(const DataConfig& d) {
  if (d.source == "synthetic") {
    SyntheticSpec s;
    s.kind = d.synthetic;
    s.n_classes = d.classes;
    s.image_size = d.image_size;
    s.noise = d.noise;
    s.n_samples = d.train_size ? d.train_size : 5000;
    s.seed = SeededRng(d.data_seed).split(0).next_u64();
    Dataset train = make_synthetic(s);
    s.n_samples = d.test_size ? d.test_size : 1000;
    s.seed = SeededRng(d.data_seed).split(1).next_u64();
    return {std::move(train), make_synthetic(s)};
  }
  const CifarVariant v = d.source == "cifar100" ? CifarVariant::cifar100 : CifarVariant::cifar10;
  if (!cifar_present(d.path, v)) throw DataError("CIFAR files for " + d.source + " not found under '" + d.path + "'");
  auto [train, test] = load_cifar(d.path, v);
  if (d.train_size) train = take(train, d.train_size);
  if (d.test_size) test = take(test, d.test_size);
  return {std::move(train), std::move(test)};
}

}  // namespace mcnet
