#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "mitoda/dataio.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace mitoda;
using testing_support::TempDir;

namespace {

void write_raw(const fs::path& p, const Image<std::uint8_t>& img) {
  fs::create_directories(p.parent_path());
  png::write_gray8(p, img);
}

}  // namespace

TEST(LoadDataset, FullSizeGeometryOfLargeStack) {
  TempDir dir;
  Image<std::uint8_t> slice(768, 1024, 90);
  for (int i = 0; i < 165; ++i) write_raw(dir / "x" / ("s" + std::to_string(1000 + i) + ".png"), slice);
  const auto ds = load_dataset(dir.path());
  EXPECT_EQ(ds.images.depth(), 165u);
  EXPECT_EQ(ds.images.height(), 768u);
  EXPECT_EQ(ds.images.width(), 1024u);
  EXPECT_FLOAT_EQ(ds.images.slices[7](3, 5), 90.0f / 255.0f);
}

TEST(LoadDataset, AllZeroSliceWithoutLabels) {
  TempDir dir;
  write_raw(dir / "x" / "a.png", Image<std::uint8_t>(32, 32, 0));
  const auto ds = load_dataset(dir.path());
  EXPECT_FALSE(ds.labeled());
  for (float v : ds.images.slices[0].pixels()) EXPECT_EQ(v, 0.0f);
}

TEST(LoadDataset, FixtureRoundTripsExactly) {
  TempDir dir;
  auto ds = make_blob_fixture(8, 64, 64, 4, 11);
  ds.modality = "FIB-SEM";
  ds.pixel_resolution = {5.0, 5.0, 5.0};
  ds.requires_labels = true;
  save_dataset(ds, dir.path());
  const auto back = load_dataset(dir.path());
  EXPECT_EQ(back, ds);
}

TEST(LoadDataset, ThresholdsAntialiasedLabels) {
  TempDir dir;
  write_raw(dir / "x" / "a.png", Image<std::uint8_t>(4, 4, 100));
  Image<std::uint8_t> lab(4, 4, 0);
  lab(0, 0) = 127;
  lab(0, 1) = 128;
  lab(0, 2) = 255;
  write_raw(dir / "y" / "a.png", lab);
  const auto ds = load_dataset(dir.path());
  ASSERT_TRUE(ds.labeled());
  EXPECT_EQ(ds.labels->slices[0](0, 0), 0);
  EXPECT_EQ(ds.labels->slices[0](0, 1), 1);
  EXPECT_EQ(ds.labels->slices[0](0, 2), 1);
  DatasetLayout strict;
  strict.strict_labels = true;
  EXPECT_THROW(load_dataset(dir.path(), strict), LabelError);
}

TEST(LoadDataset, Errors) {
  TempDir dir;
  EXPECT_THROW(load_dataset(dir / "missing"), IoError);
  write_raw(dir / "x" / "a.png", Image<std::uint8_t>(4, 4, 1));
  write_raw(dir / "x" / "b.png", Image<std::uint8_t>(4, 5, 1));
  EXPECT_THROW(load_dataset(dir.path()), GeometryError);

  TempDir d2;
  write_raw(d2 / "x" / "a.png", Image<std::uint8_t>(4, 4, 1));
  write_raw(d2 / "y" / "a.png", Image<std::uint8_t>(4, 3, 0));
  EXPECT_THROW(load_dataset(d2.path()), GeometryError);

  TempDir d3;
  write_raw(d3 / "x" / "a.png", Image<std::uint8_t>(4, 4, 1));
  std::ofstream(d3 / "x" / "b.tif") << "II*";
  EXPECT_THROW(load_dataset(d3.path()), IoError);
}

TEST(Dataset, RequiresLabelsForSupervisedPartition) {
  AnnotatedDataset ds;
  ds.images.slices.push_back(Plane(4, 4, 0.5f));
  ds.requires_labels = true;
  EXPECT_THROW(ds.validate(), LabelError);
}

TEST(SplitVnc, HalvesAlongX) {
  AnnotatedDataset ds;
  for (int i = 0; i < 20; ++i) ds.images.slices.push_back(Plane(512, 1024, 0.5f));
  const auto [train, test] = split_vnc_style(ds);
  EXPECT_EQ(train.images.depth(), 20u);
  EXPECT_EQ(train.images.height(), 512u);
  EXPECT_EQ(train.images.width(), 512u);
  EXPECT_EQ(test.images.width(), 512u);
  EXPECT_EQ(train.partition, Partition::train);
  EXPECT_EQ(test.partition, Partition::test);
}

TEST(SplitVnc, MinimalWidthAndErrors) {
  AnnotatedDataset ds;
  ds.images.slices.push_back(Plane(3, 2, 0.1f));
  const auto [l, r] = split_vnc_style(ds);
  EXPECT_EQ(l.images.width(), 1u);
  EXPECT_EQ(r.images.width(), 1u);

  AnnotatedDataset odd;
  odd.images.slices.push_back(Plane(3, 5, 0.1f));
  EXPECT_THROW(split_vnc_style(odd), SplitError);
  EXPECT_EQ(split_vnc_style(odd, 2).second.images.width(), 3u);
  EXPECT_THROW(split_vnc_style(odd, 0), SplitError);
  EXPECT_THROW(split_vnc_style(odd, 5), SplitError);
}

TEST(SplitVnc, ConservesForeground) {
  std::mt19937 rng(3);
  AnnotatedDataset ds;
  LabelStack labels;
  for (int i = 0; i < 4; ++i) {
    ds.images.slices.push_back(Plane(10, 64, 0.3f));
    auto m = testing_support::random_mask(10, 64, 0.2, rng);
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 20; ++x) m(y, x) = 1;  // asymmetric
    labels.slices.push_back(m);
  }
  ds.labels = labels;
  const auto [l, r] = split_vnc_style(ds);
  EXPECT_NE(l.labels->foreground_pixels(), r.labels->foreground_pixels());
  EXPECT_EQ(l.labels->foreground_pixels() + r.labels->foreground_pixels(), labels.foreground_pixels());
}

TEST(SamplePatches, CountsAndSplit) {
  const auto ds = make_blob_fixture(2, 64, 64, 3, 5);
  PatchSampler s{.patch_size = 16, .count = 1000, .val_fraction = 0.1, .rng_seed = 1};
  const auto ps = sample_patches(ds, s);
  EXPECT_EQ(ps.train.size(), 900u);
  EXPECT_EQ(ps.val.size(), 100u);
  for (const auto& p : ps.train) {
    EXPECT_EQ(p.image.height(), 16u);
    ASSERT_TRUE(p.label.has_value());
  }
  const auto one = sample_patches(ds, {.patch_size = 8, .count = 1, .val_fraction = 0.0, .rng_seed = 2});
  EXPECT_EQ(one.train.size(), 1u);
  EXPECT_EQ(one.val.size(), 0u);
}

TEST(SamplePatches, DeterministicPerSeed) {
  const auto ds = make_blob_fixture(3, 48, 48, 3, 6);
  PatchSampler s{.patch_size = 16, .count = 50, .val_fraction = 0.2, .rng_seed = 77};
  const auto a = sample_patches(ds, s), b = sample_patches(ds, s);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].image, b.train[i].image);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  s.rng_seed = 78;
  const auto c = sample_patches(ds, s);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs = differs || !(a.train[i].image == c.train[i].image);
  EXPECT_TRUE(differs);
}

TEST(SamplePatches, CropsMatchSource) {
  const auto ds = make_blob_fixture(1, 40, 40, 3, 8);
  const auto ps = sample_patches(ds, {.patch_size = 40, .count = 3, .val_fraction = 0.0, .rng_seed = 1});
  for (const auto& p : ps.train) {
    EXPECT_EQ(p.image, ds.images.slices[0]);
    EXPECT_EQ(*p.label, ds.labels->slices[0]);
  }
}

TEST(SamplePatches, Errors) {
  const auto ds = make_blob_fixture(1, 32, 32, 1, 8);
  EXPECT_THROW(sample_patches(ds, {.patch_size = 33, .count = 1}), SamplingError);
  EXPECT_THROW(sample_patches(ds, {.patch_size = 8, .count = 1, .val_fraction = 1.0}), ArgumentError);
}

TEST(DetectPadding, Cases) {
  Plane bright(12, 12, 0.4f);
  EXPECT_EQ(detect_padding(bright), Mask(12, 12, 0));

  Plane framed(40, 40, 0.5f);
  Mask expected(40, 40, 0);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x)
      if (y < 10 || x < 10 || y >= 30 || x >= 30) {
        framed(y, x) = 0.0f;
        expected(y, x) = 1;
      }
  EXPECT_EQ(detect_padding(framed), expected);
  EXPECT_EQ(detect_padding(framed), oracle::padding_by_relaxation(framed));

  Plane hole(12, 12, 0.4f);
  for (std::size_t y = 4; y < 7; ++y)
    for (std::size_t x = 4; x < 7; ++x) hole(y, x) = 0.0f;
  EXPECT_EQ(detect_padding(hole), Mask(12, 12, 0));
}

TEST(DetectPadding, MatchesOracleOnRandomImages) {
  std::mt19937 rng(9);
  for (int t = 0; t < 100; ++t) {
    auto zeros = testing_support::random_mask(9, 11, 0.55, rng);
    Plane img(9, 11);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = zeros[i] ? 0.0f : 0.7f;
    const auto m = detect_padding(img);
    ASSERT_EQ(m, oracle::padding_by_relaxation(img));
    for (std::size_t i = 0; i < img.size(); ++i)
      if (img[i] > 0) ASSERT_EQ(m[i], 0);
  }
}

TEST(BlobFixture, Properties) {
  const auto empty = make_blob_fixture(2, 32, 32, 0, 1);
  EXPECT_EQ(empty.labels->foreground_pixels(), 0u);

  const auto three = make_blob_fixture(1, 64, 64, 3, 2);
  const double frac = static_cast<double>(three.labels->foreground_pixels()) / (64.0 * 64.0);
  EXPECT_GT(frac, 0.0);
  EXPECT_LT(frac, 0.5);

  EXPECT_EQ(make_blob_fixture(2, 48, 48, 4, 9), make_blob_fixture(2, 48, 48, 4, 9));
  EXPECT_NE(make_blob_fixture(2, 48, 48, 4, 9), make_blob_fixture(2, 48, 48, 4, 10));
  EXPECT_THROW(make_blob_fixture(1, 4, 4, 2, 1), ArgumentError);
}

TEST(BlobFixture, PaddingFrameIsDetected) {
  FixtureStyle style;
  style.padding = 6;
  const auto ds = make_blob_fixture(1, 48, 48, 2, 4, style);
  const auto m = detect_padding(ds.images.slices[0]);
  std::size_t n = 0;
  for (auto v : m.pixels()) n += v;
  EXPECT_EQ(n, 48u * 48u - 36u * 36u);
}
