#pragma once

// Datasets: CIFAR-10/100 binary batches, IDX image/label files, synthetic
// generators, and the training augmentation pipeline
// (pad-and-crop -> horizontal flip -> per-channel normalization -> random erasing).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcnet/errors.hpp"
#include "mcnet/rng.hpp"
#include "mcnet/tensor.hpp"

namespace mcnet {

struct LabeledImage {
  Tensor<float> pixels;  // [C,H,W]
  std::size_t label = 0;
};

/// Images stored back to back as [n, C, H, W] floats.
struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 10;
  std::vector<float> pixels;
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> coarse_labels;  // CIFAR-100 only, kept for re-encoding

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] bool empty() const { return labels.empty(); }
  [[nodiscard]] std::size_t image_numel() const { return channels * height * width; }

  [[nodiscard]] std::span<const float> image_span(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * image_numel(), image_numel());
  }

  [[nodiscard]] LabeledImage image(std::size_t i) const {
    auto s = image_span(i);
    return {Tensor<float>(Shape{channels, height, width}, std::vector<float>(s.begin(), s.end())), labels[i]};
  }

  void push_back(std::span<const float> img, std::size_t label) {
    if (img.size() != image_numel()) throw ShapeError("image size does not match dataset geometry");
    if (label >= num_classes)
      throw DataError("label " + std::to_string(label) + " >= " + std::to_string(num_classes) + " categories");
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(static_cast<std::uint16_t>(label));
  }
};

/// First `n` samples (or all, if fewer).
inline Dataset take(const Dataset& d, std::size_t n) {
  Dataset out = d;
  n = std::min(n, d.size());
  out.labels.resize(n);
  out.pixels.resize(n * d.image_numel());
  if (!out.coarse_labels.empty()) out.coarse_labels.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR binary format: per record, label byte(s) then 3072 bytes R, G, B
// planes, each 32x32 row-major.

enum class CifarVariant { cifar10, cifar100 };

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

inline std::size_t cifar_record_bytes(CifarVariant v) {
  return (v == CifarVariant::cifar10 ? 1 : 2) + kCifarPixels;
}

inline Dataset decode_cifar(std::span<const std::uint8_t> bytes, CifarVariant v) {
  const std::size_t rec = cifar_record_bytes(v);
  if (bytes.empty() || bytes.size() % rec != 0) {
    const std::size_t expected = (bytes.size() / rec + (bytes.size() % rec ? 1 : 0)) * rec;
    throw FormatError("CIFAR file length " + std::to_string(bytes.size()) + " bytes is not a multiple of the " +
                      std::to_string(rec) + "-byte record; expected " + std::to_string(expected == 0 ? rec : expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  Dataset d;
  d.num_classes = v == CifarVariant::cifar10 ? 10 : 100;
  const std::size_t n = bytes.size() / rec;
  d.pixels.resize(n * kCifarPixels);
  d.labels.resize(n);
  if (v == CifarVariant::cifar100) d.coarse_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* r = bytes.data() + i * rec;
    const std::size_t label = v == CifarVariant::cifar10 ? r[0] : r[1];
    if (label >= d.num_classes)
      throw DataError("record " + std::to_string(i) + ": label " + std::to_string(label) + " >= " +
                      std::to_string(d.num_classes));
    d.labels[i] = static_cast<std::uint16_t>(label);
    if (v == CifarVariant::cifar100) d.coarse_labels[i] = r[0];
    const std::uint8_t* px = r + (rec - kCifarPixels);
    float* out = d.pixels.data() + i * kCifarPixels;
    for (std::size_t k = 0; k < kCifarPixels; ++k) out[k] = static_cast<float>(px[k]) / 255.0f;
  }
  return d;
}

inline std::vector<std::uint8_t> encode_cifar(const Dataset& d, CifarVariant v) {
  if (d.channels != 3 || d.height != 32 || d.width != 32) throw ShapeError("CIFAR records are 3x32x32");
  const std::size_t rec = cifar_record_bytes(v);
  std::vector<std::uint8_t> bytes(d.size() * rec);
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::uint8_t* r = bytes.data() + i * rec;
    if (v == CifarVariant::cifar100) {
      r[0] = d.coarse_labels.empty() ? 0 : d.coarse_labels[i];
      r[1] = static_cast<std::uint8_t>(d.labels[i]);
    } else {
      r[0] = static_cast<std::uint8_t>(d.labels[i]);
    }
    auto px = d.image_span(i);
    std::uint8_t* out = r + (rec - kCifarPixels);
    for (std::size_t k = 0; k < kCifarPixels; ++k)
      out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(px[k], 0.0f, 1.0f) * 255.0f));
  }
  return bytes;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Dataset concat(Dataset a, const Dataset& b) {
  a.pixels.insert(a.pixels.end(), b.pixels.begin(), b.pixels.end());
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
  a.coarse_labels.insert(a.coarse_labels.end(), b.coarse_labels.begin(), b.coarse_labels.end());
  return a;
}

/// File names of the standard binary distributions.
inline std::pair<std::vector<std::string>, std::string> cifar_files(CifarVariant v) {
  if (v == CifarVariant::cifar10)
    return {{"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"},
            "test_batch.bin"};
  return {{"train.bin"}, "test.bin"};
}

inline bool cifar_present(const std::filesystem::path& dir, CifarVariant v) {
  auto [train, test] = cifar_files(v);
  for (const auto& f : train)
    if (!std::filesystem::exists(dir / f)) return false;
  return std::filesystem::exists(dir / test);
}

/// Returns (train, test).
inline std::pair<Dataset, Dataset> load_cifar(const std::filesystem::path& dir, CifarVariant v) {
  auto [train_files, test_file] = cifar_files(v);
  std::optional<Dataset> train;
  for (const auto& f : train_files) {
    Dataset part = decode_cifar(read_file(dir / f), v);
    train = train ? concat(std::move(*train), part) : std::move(part);
  }
  return {std::move(*train), decode_cifar(read_file(dir / test_file), v)};
}

// ---------------------------------------------------------------------------
// IDX (unsigned byte) images [n,H,W] and labels [n], big-endian headers.

namespace detail {

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

}  // namespace detail

inline Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                          std::size_t num_classes) {
  if (images.size() < 16 || detail::be32(images.data()) != 0x00000803)
    throw FormatError("IDX image file: bad magic, expected 0x00000803");
  if (labels.size() < 8 || detail::be32(labels.data()) != 0x00000801)
    throw FormatError("IDX label file: bad magic, expected 0x00000801");
  const std::size_t n = detail::be32(images.data() + 4);
  const std::size_t h = detail::be32(images.data() + 8), w = detail::be32(images.data() + 12);
  if (images.size() != 16 + n * h * w)
    throw FormatError("IDX image file: expected " + std::to_string(16 + n * h * w) + " bytes, got " +
                      std::to_string(images.size()));
  if (detail::be32(labels.data() + 4) != n || labels.size() != 8 + n)
    throw FormatError("IDX label file: expected " + std::to_string(8 + n) + " bytes, got " +
                      std::to_string(labels.size()));
  Dataset d;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.num_classes = num_classes;
  std::vector<float> img(h * w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < h * w; ++k) img[k] = static_cast<float>(images[16 + i * h * w + k]) / 255.0f;
    d.push_back(img, labels[8 + i]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind { two_gaussians, striped_patterns };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::striped_patterns;
  std::size_t n_samples = 1000;
  std::size_t n_classes = 10;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  double noise = 0.1;  // per-pixel gaussian std-dev
};

/// two_gaussians: each class has a fixed random +-1 pattern; samples are
/// 0.5 + 0.25 * pattern + noise, clamped to [0, 1].
/// striped_patterns: class k is a square-wave grating, horizontal for even k
/// and vertical for odd k, with period 2 + k/2 pixels. Phase, contrast and
/// per-channel colour are random per sample. Both orientations survive a
/// horizontal flip and a translation, so labels are augmentation-invariant.
/// Labels cycle through the classes in order.
inline Dataset make_synthetic(const SyntheticSpec& s) {
  if (s.n_classes < 2) throw ContractError("synthetic data needs at least 2 classes");
  if (s.image_size == 0) throw ShapeError("image size must be positive");
  Dataset d;
  d.channels = 3;
  d.height = d.width = s.image_size;
  d.num_classes = s.n_classes;
  const std::size_t H = s.image_size, W = s.image_size, HW = H * W;
  const SeededRng root(s.seed);

  std::vector<std::vector<float>> patterns;
  if (s.kind == SyntheticKind::two_gaussians) {
    SeededRng prng = root.split(0);
    for (std::size_t k = 0; k < s.n_classes; ++k) {
      std::vector<float> p(3 * HW);
      for (auto& v : p) v = prng.bernoulli(0.5) ? 1.0f : -1.0f;
      patterns.push_back(std::move(p));
    }
  }

  std::vector<float> img(3 * HW);
  for (std::size_t i = 0; i < s.n_samples; ++i) {
    const std::size_t label = i % s.n_classes;
    SeededRng rng = root.split(1 + i);
    if (s.kind == SyntheticKind::two_gaussians) {
      for (std::size_t k = 0; k < img.size(); ++k)
        img[k] = static_cast<float>(0.5 + 0.25 * patterns[label][k] + s.noise * rng.normal());
    } else {
      const bool horizontal = label % 2 == 0;
      const std::size_t period = 2 + label / 2;
      const std::size_t shift = rng.uniform_index(period);
      const double contrast = rng.uniform(0.25, 0.45);
      double colour[3];
      for (double& c : colour) c = rng.uniform(0.4, 1.0);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t pos = (horizontal ? y : x) + shift;
            const double phase = static_cast<double>(pos % period) / static_cast<double>(period);
            const double wave = phase < 0.5 ? 1.0 : -1.0;
            img[c * HW + y * W + x] = static_cast<float>(0.5 + contrast * colour[c] * wave + s.noise * rng.normal());
          }
    }
    for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
    d.push_back(img, label);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Augmentation

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std;
};

/// Population mean and std-dev per channel over the whole split.
inline ChannelStats channel_stats(const Dataset& d) {
  if (d.empty()) throw ContractError("channel statistics of an empty dataset");
  ChannelStats st{std::vector<float>(d.channels), std::vector<float>(d.channels)};
  const std::size_t HW = d.height * d.width;
  for (std::size_t c = 0; c < d.channels; ++c) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const float* p = d.pixels.data() + i * d.image_numel() + c * HW;
      for (std::size_t k = 0; k < HW; ++k) s += p[k];
    }
    const double n = static_cast<double>(d.size() * HW);
    const double mean = s / n;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const float* p = d.pixels.data() + i * d.image_numel() + c * HW;
      for (std::size_t k = 0; k < HW; ++k) ss += (p[k] - mean) * (p[k] - mean);
    }
    st.mean[c] = static_cast<float>(mean);
    st.std[c] = static_cast<float>(std::max(std::sqrt(ss / n), 1e-6));
  }
  return st;
}

struct AugmentPolicy {
  std::size_t crop_pad = 4;  // 0 disables cropping
  double flip_p = 0.5;
  std::vector<float> mean;  // empty: no normalization
  std::vector<float> std;
  double erase_p = 0.5;
  double erase_area_lo = 0.02;
  double erase_area_hi = 0.33;
  double erase_aspect_lo = 0.3;
  double erase_aspect_hi = 3.3;
  std::size_t erase_attempts = 100;

  static AugmentPolicy disabled() {
    AugmentPolicy p;
    p.crop_pad = 0;
    p.flip_p = 0;
    p.erase_p = 0;
    return p;
  }

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(flip_p) || !prob(erase_p)) throw ContractError("augmentation probabilities must lie in [0, 1]");
    if (!(erase_area_lo > 0 && erase_area_lo <= erase_area_hi && erase_area_hi < 1))
      throw ContractError("erase area fraction must satisfy 0 < lo <= hi < 1");
    if (!(erase_aspect_lo > 0 && erase_aspect_lo <= erase_aspect_hi))
      throw ContractError("erase aspect ratio must satisfy 0 < lo <= hi");
    if (mean.size() != std.size()) throw ContractError("normalization mean/std lengths differ");
    for (float s : std)
      if (!(s > 0)) throw ContractError("normalization std-dev must be positive");
  }
};

/// Independent streams per stage, derived from the sample's stream.
enum class AugmentStream : std::uint64_t { crop = 0, flip = 1, erase = 2, fill = 3 };

struct EraseRegion {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  friend bool operator==(const EraseRegion&, const EraseRegion&) = default;
};

/// Random-erasing region search on the erase stream: one Bernoulli draw,
/// then up to `erase_attempts` (area, aspect, top, left) proposals.
inline std::optional<EraseRegion> sample_erase_region(std::size_t H, std::size_t W, const AugmentPolicy& p,
                                                      SeededRng& rng) {
  if (!rng.bernoulli(p.erase_p)) return std::nullopt;
  const double area = static_cast<double>(H * W);
  for (std::size_t a = 0; a < p.erase_attempts; ++a) {
    const double target = rng.uniform(p.erase_area_lo, p.erase_area_hi) * area;
    const double aspect = rng.uniform(p.erase_aspect_lo, p.erase_aspect_hi);
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (h == 0 || w == 0 || h >= H || w >= W) continue;
    const auto top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(H - h)));
    const auto left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(W - w)));
    return EraseRegion{top, left, h, w};
  }
  return std::nullopt;
}

/// Eval-time transform: normalization only.
inline void normalize_inplace(std::span<float> img, std::size_t channels, const std::vector<float>& mean,
                              const std::vector<float>& std) {
  if (mean.empty()) return;
  if (mean.size() != channels) throw ShapeError("normalization statistics do not match channel count");
  const std::size_t HW = img.size() / channels;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t k = 0; k < HW; ++k) img[c * HW + k] = (img[c * HW + k] - mean[c]) / std[c];
}

/// Writes the augmented image into `out` (same size as `in`).
inline void augment_into(std::span<const float> in, std::span<float> out, std::size_t C, std::size_t H,
                         std::size_t W, const AugmentPolicy& p, const SeededRng& sample_rng) {
  const std::size_t HW = H * W;
  if (p.crop_pad > 0) {
    SeededRng r = sample_rng.split(static_cast<std::uint64_t>(AugmentStream::crop));
    const auto pad = static_cast<std::int64_t>(p.crop_pad);
    const std::int64_t oy = r.uniform_int(0, 2 * pad) - pad;
    const std::int64_t ox = r.uniform_int(0, 2 * pad) - pad;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::int64_t sy = static_cast<std::int64_t>(y) + oy, sx = static_cast<std::int64_t>(x) + ox;
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::int64_t>(H) && sx < static_cast<std::int64_t>(W);
          out[c * HW + y * W + x] = inside ? in[c * HW + static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)] : 0.0f;
        }
  } else {
    std::copy(in.begin(), in.end(), out.begin());
  }

  if (p.flip_p > 0) {
    SeededRng r = sample_rng.split(static_cast<std::uint64_t>(AugmentStream::flip));
    if (r.bernoulli(p.flip_p))
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
          float* row = out.data() + c * HW + y * W;
          std::reverse(row, row + W);
        }
  }

  normalize_inplace(out, C, p.mean, p.std);

  if (p.erase_p > 0) {
    SeededRng r = sample_rng.split(static_cast<std::uint64_t>(AugmentStream::erase));
    if (auto region = sample_erase_region(H, W, p, r)) {
      SeededRng fill = sample_rng.split(static_cast<std::uint64_t>(AugmentStream::fill));
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = region->top; y < region->top + region->height; ++y)
          for (std::size_t x = region->left; x < region->left + region->width; ++x)
            out[c * HW + y * W + x] = static_cast<float>(fill.uniform());
    }
  }
}

inline LabeledImage augment(const LabeledImage& img, const AugmentPolicy& p, const SeededRng& rng) {
  p.validate();
  const Shape& s = img.pixels.shape();
  if (s.rank() != 3) throw ShapeError("augment expects a [C,H,W] image");
  LabeledImage out{Tensor<float>(s), img.label};
  augment_into(img.pixels.data(), out.pixels.data(), s[0], s[1], s[2], p, rng);
  return out;
}

}  // namespace mcnet
