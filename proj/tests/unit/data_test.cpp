#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mcnet/data.hpp"

using namespace mcnet;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> record(std::uint8_t label, std::uint8_t pixel) {
  std::vector<std::uint8_t> r(1 + kCifarPixels, pixel);
  r[0] = label;
  return r;
}

}  // namespace

TEST(Cifar, SingleRecordFixture) {
  const auto d = decode_cifar(record(3, 255), CifarVariant::cifar10);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 3);
  for (float v : d.image_span(0)) EXPECT_EQ(v, 1.0f);
}

TEST(Cifar, FullBatchDecodes) {
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = 0; i < 10000; ++i) {
    const auto r = record(static_cast<std::uint8_t>(i % 10), static_cast<std::uint8_t>(i));
    bytes.insert(bytes.end(), r.begin(), r.end());
  }
  const auto d = decode_cifar(bytes, CifarVariant::cifar10);
  ASSERT_EQ(d.size(), 10000u);
  for (auto l : d.labels) EXPECT_LT(l, 10);
}

TEST(Cifar, TruncatedFileIsFormatError) {
  auto bytes = record(1, 10);
  bytes.pop_back();
  try {
    decode_cifar(bytes, CifarVariant::cifar10);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3072"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3073"), std::string::npos) << msg;
  }
}

TEST(Cifar, LabelOutOfRangeIsDataError) {
  EXPECT_THROW(decode_cifar(record(10, 0), CifarVariant::cifar10), DataError);
  std::vector<std::uint8_t> r(2 + kCifarPixels, 0);
  r[1] = 100;
  EXPECT_THROW(decode_cifar(r, CifarVariant::cifar100), DataError);
}

TEST(Cifar, RoundTripIsByteIdentical) {
  std::vector<std::uint8_t> bytes;
  SeededRng rng(1);
  for (std::size_t i = 0; i < 5; ++i) {
    auto r = record(static_cast<std::uint8_t>(i), 0);
    for (std::size_t k = 1; k < r.size(); ++k) r[k] = static_cast<std::uint8_t>(rng.uniform_index(256));
    bytes.insert(bytes.end(), r.begin(), r.end());
  }
  EXPECT_EQ(encode_cifar(decode_cifar(bytes, CifarVariant::cifar10), CifarVariant::cifar10), bytes);

  std::vector<std::uint8_t> fine(2 + kCifarPixels, 7);
  fine[0] = 4;
  fine[1] = 42;
  EXPECT_EQ(encode_cifar(decode_cifar(fine, CifarVariant::cifar100), CifarVariant::cifar100), fine);
}

TEST(Cifar, LoaderReadsDirectoryLayout) {
  const fs::path dir = fs::temp_directory_path() / "mcnet_unit_cifar";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto [train_files, test_file] = cifar_files(CifarVariant::cifar10);
  EXPECT_FALSE(cifar_present(dir, CifarVariant::cifar10));
  std::uint8_t label = 0;
  for (const auto& f : train_files) {
    const auto r = record(label++, 9);
    std::ofstream(dir / f, std::ios::binary).write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size()));
  }
  const auto r = record(9, 1);
  std::ofstream(dir / test_file, std::ios::binary).write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size()));
  ASSERT_TRUE(cifar_present(dir, CifarVariant::cifar10));
  const auto [train, test] = load_cifar(dir, CifarVariant::cifar10);
  EXPECT_EQ(train.size(), train_files.size());
  EXPECT_EQ(test.size(), 1u);
  EXPECT_EQ(test.labels[0], 9);
  fs::remove_all(dir);
}

TEST(Augment, DisabledPolicyIsIdentity) {
  SeededRng rng(2);
  const LabeledImage img{Tensor<float>::uniform(Shape{3, 6, 6}, 0.f, 1.f, rng), 4};
  const auto out = augment(img, AugmentPolicy::disabled(), SeededRng(5));
  EXPECT_EQ(out.pixels, img.pixels);
  EXPECT_EQ(out.label, 4u);
}

TEST(Augment, FlipIsAnInvolution) {
  SeededRng rng(3);
  const LabeledImage img{Tensor<float>::uniform(Shape{2, 4, 5}, 0.f, 1.f, rng), 1};
  AugmentPolicy p = AugmentPolicy::disabled();
  p.flip_p = 1.0;
  const auto once = augment(img, p, SeededRng(1));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 5; ++x)
        EXPECT_EQ(once.pixels[(c * 4 + y) * 5 + x], img.pixels[(c * 4 + y) * 5 + (4 - x)]);
  EXPECT_EQ(augment(once, p, SeededRng(1)).pixels, img.pixels);
}

TEST(Augment, DeterministicAndShapePreserving) {
  SeededRng rng(4);
  const LabeledImage img{Tensor<float>::uniform(Shape{3, 8, 8}, 0.f, 1.f, rng), 7};
  AugmentPolicy p;
  p.crop_pad = 2;
  p.erase_p = 1.0;
  p.mean = {0.5f, 0.5f, 0.5f};
  p.std = {0.25f, 0.25f, 0.25f};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = augment(img, p, SeededRng(s)), b = augment(img, p, SeededRng(s));
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(a.pixels.shape(), img.pixels.shape());
    EXPECT_EQ(a.label, 7u);
  }
}

TEST(Augment, InvalidPolicyIsRejected) {
  AugmentPolicy p;
  p.flip_p = 1.5;
  const LabeledImage img{Tensor<float>(Shape{1, 2, 2}), 0};
  EXPECT_THROW(augment(img, p, SeededRng(0)), ContractError);
}

TEST(Synthetic, TwoGaussiansNearestCentroidIsPerfect) {
  SyntheticSpec s;
  s.kind = SyntheticKind::two_gaussians;
  s.n_samples = 200;
  s.n_classes = 2;
  s.image_size = 8;
  s.noise = 0.05;
  const auto d = make_synthetic(s);
  const std::size_t n = d.image_numel();
  std::vector<std::vector<double>> centroid(2, std::vector<double>(n, 0.0));
  std::vector<std::size_t> count(2, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto img = d.image_span(i);
    for (std::size_t k = 0; k < n; ++k) centroid[d.labels[i]][k] += img[k];
    ++count[d.labels[i]];
  }
  for (std::size_t c = 0; c < 2; ++c)
    for (auto& v : centroid[c]) v /= static_cast<double>(count[c]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto img = d.image_span(i);
    double dist[2] = {0, 0};
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < n; ++k) dist[c] += (img[k] - centroid[c][k]) * (img[k] - centroid[c][k]);
    correct += (dist[0] <= dist[1] ? 0u : 1u) == d.labels[i];
  }
  EXPECT_EQ(correct, d.size());
}

TEST(Synthetic, SameSeedSameDataAndEmptyAllowed) {
  SyntheticSpec s;
  s.n_samples = 30;
  s.image_size = 8;
  s.seed = 9;
  const auto a = make_synthetic(s), b = make_synthetic(s);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  s.n_samples = 0;
  EXPECT_TRUE(make_synthetic(s).empty());
}

TEST(Normalization, StatisticsFromTrainingSplit) {
  SyntheticSpec s;
  s.n_samples = 50;
  s.image_size = 4;
  const auto d = make_synthetic(s);
  const auto st = channel_stats(d);
  ASSERT_EQ(st.mean.size(), 3u);
  std::vector<float> img(d.image_span(0).begin(), d.image_span(0).end());
  normalize_inplace(img, 3, st.mean, st.std);
  EXPECT_FLOAT_EQ(img[0], (d.image_span(0)[0] - st.mean[0]) / st.std[0]);
}
