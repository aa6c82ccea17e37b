#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "dgqa/distortion.h"
#include "dgqa/errors.h"
#include "dgqa/features.h"
#include "dgqa/references.h"
#include "dgqa/rng.h"

namespace dgqa {
namespace {

TEST(Mscn, ConstantImageGivesZeroField) {
  auto flat = RasterImage::filled(40, 30, 0.2f, 0.7f, 0.4f);
  Plane m = mscn(flat);
  ASSERT_EQ(m.width, 40);
  ASSERT_EQ(m.height, 30);
  for (double v : m.values) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Mscn, NaturalImagesHaveNearZeroMean) {
  for (const auto& ref : procedural_references(5, 128, 77)) {
    Plane m = mscn(ref.image);
    double mean = 0.0;
    for (double v : m.values) mean += v;
    mean /= static_cast<double>(m.values.size());
    EXPECT_LT(std::abs(mean), 0.05) << ref.id;
  }
}

TEST(Mscn, Deterministic) {
  auto img = dead_leaves_image(64, 64, 4);
  EXPECT_EQ(mscn(img).values, mscn(img).values);
}

TEST(Mscn, TooSmallImageThrows) {
  auto tiny = RasterImage::filled(5, 20, 0.5f, 0.5f, 0.5f);
  EXPECT_THROW(mscn(tiny), ValidationError);
}

TEST(AggdFit, GaussianSamples) {
  Rng rng = make_rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(100000);
  for (double& v : x) v = normal(rng);
  AggdParams p = aggd_fit(x);
  EXPECT_NEAR(p.alpha, 2.0, 0.2);
  EXPECT_NEAR(p.sigma_left / p.sigma_right, 1.0, 0.1);
  EXPECT_NEAR(p.mean_offset(), 0.0, 0.05);
}

TEST(AggdFit, LaplaceSamples) {
  Rng rng = make_rng(77);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> x(100000);
  for (double& v : x) v = expo(rng) - expo(rng);
  EXPECT_NEAR(aggd_fit(x).alpha, 1.0, 0.2);
}

TEST(AggdFit, AllZerosFallsBack) {
  std::vector<double> zeros(64, 0.0);
  AggdParams p = aggd_fit(zeros);
  EXPECT_EQ(p.alpha, 1.0);
  EXPECT_EQ(p.sigma_left, 0.0);
  EXPECT_EQ(p.sigma_right, 0.0);
}

TEST(AggdFit, TooFewSamples) {
  std::vector<double> x(kAggdMinSamples - 1, 1.0);
  EXPECT_THROW(aggd_fit(x), ValidationError);
}

TEST(AggdFit, AlphaStaysOnGrid) {
  std::vector<double> spikes(1000, 0.0);
  spikes[3] = 5.0;
  spikes[500] = -4.0;
  AggdParams p = aggd_fit(spikes);
  EXPECT_GE(p.alpha, 0.2);
  EXPECT_LE(p.alpha, 10.0);
  EXPECT_GE(p.sigma_left, 0.0);
  EXPECT_GE(p.sigma_right, 0.0);
}

TEST(ExtractFeatures, LengthAndFiniteness) {
  auto img = dead_leaves_image(64, 64, 9);
  auto f = extract_features(img);
  ASSERT_EQ(f.size(), kFeatureDim);
  EXPECT_EQ(f.size(), 36u);
  for (double v : f) EXPECT_TRUE(std::isfinite(v));
  auto flat = extract_features(RasterImage::filled(64, 64, 0.5f, 0.5f, 0.5f));
  ASSERT_EQ(flat.size(), 36u);
  for (double v : flat) EXPECT_TRUE(std::isfinite(v));
}

TEST(ExtractFeatures, NoiseChangesFeatures) {
  auto img = dead_leaves_image(128, 128, 9);
  auto noisy = apply_distortion(img, {DomainId{11}, 5, 1});
  auto a = extract_features(img);
  auto b = extract_features(noisy);
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_GT(std::sqrt(d2), 0.0);
}

TEST(ExtractFeatures, Deterministic) {
  auto img = dead_leaves_image(80, 72, 12);
  EXPECT_EQ(extract_features(img), extract_features(img));
}

TEST(Patches, TestModeDefaultGivesFive) {
  auto img = dead_leaves_image(128, 128, 1);
  PatchPolicy policy;
  auto patches = sample_patches(img, policy, PatchMode::kTest);
  ASSERT_EQ(patches.size(), 5u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.width(), 64);
    EXPECT_EQ(p.height(), 64);
  }
  EXPECT_EQ(sample_patches(img, policy, PatchMode::kTrain).size(), 1u);
}

TEST(Patches, PatchSizedImageCollapses) {
  auto img = dead_leaves_image(64, 64, 2);
  PatchPolicy policy;
  policy.test_patches_per_image = 7;
  for (const auto& p : sample_patches(img, policy, PatchMode::kTest)) {
    EXPECT_EQ(p, img);
  }
}

TEST(Patches, FixedSeedReproducesCorners) {
  PatchPolicy policy;
  policy.seed = 42;
  auto a = patch_windows(200, 150, policy, PatchMode::kTest);
  auto b = patch_windows(200, 150, policy, PatchMode::kTest);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].y, b[i].y);
    EXPECT_FALSE(a[i].flipped);
  }
}

TEST(Patches, WindowsStayInside) {
  PatchPolicy policy;
  policy.test_patches_per_image = 500;
  for (const auto& w : patch_windows(100, 70, policy, PatchMode::kTest)) {
    EXPECT_GE(w.x, 0);
    EXPECT_GE(w.y, 0);
    EXPECT_LE(w.x + 64, 100);
    EXPECT_LE(w.y + 64, 70);
  }
}

TEST(Patches, FlippedTrainPatchMirrorsCrop) {
  auto img = dead_leaves_image(96, 96, 3);
  PatchPolicy policy;
  policy.train_patches_per_image = 40;
  auto windows = patch_windows(96, 96, policy, PatchMode::kTrain);
  auto patches = sample_patches(img, policy, PatchMode::kTrain);
  int flips = 0;
  for (size_t i = 0; i < windows.size(); ++i) {
    auto crop = img.crop(windows[i].x, windows[i].y, 64, 64);
    if (windows[i].flipped) {
      ++flips;
      EXPECT_EQ(patches[i], crop.flipped_horizontally());
    } else {
      EXPECT_EQ(patches[i], crop);
    }
  }
  EXPECT_GT(flips, 0);
  EXPECT_LT(flips, 40);
}

TEST(Patches, InvalidPolicies) {
  PatchPolicy policy;
  EXPECT_THROW(patch_windows(63, 100, policy, PatchMode::kTest), ValidationError);
  policy.test_patches_per_image = 0;
  EXPECT_THROW(policy.validate(), ValidationError);
  policy = PatchPolicy{};
  policy.patch_size = 0;
  EXPECT_THROW(policy.validate(), ValidationError);
}

// Corners binned on a 5x5 grid (65 positions per axis, 13 per bin).
TEST(Patches, CornersAreUniform) {
  PatchPolicy policy;
  policy.test_patches_per_image = 10000;
  policy.seed = 5;
  auto windows = patch_windows(128, 128, policy, PatchMode::kTest);
  std::vector<double> counts(25, 0.0);
  for (const auto& w : windows) counts[(w.y / 13) * 5 + w.x / 13] += 1.0;
  const double expected = 10000.0 / 25.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(24);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));
  EXPECT_GT(p, 0.001) << "chi2 " << chi2;
}

TEST(FeatureCache, RoundTripIsExact) {
  auto path = std::filesystem::temp_directory_path() / "dgqa_feature_cache_test.csv";
  std::vector<FeatureRow> rows;
  for (int i = 0; i < 3; ++i) {
    rows.push_back({"s" + std::to_string(i),
                    extract_features(dead_leaves_image(64, 64, 100 + i))});
  }
  write_feature_cache(path, rows);
  auto back = read_feature_cache(path);
  ASSERT_EQ(back.size(), rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].sample_id, rows[i].sample_id);
    EXPECT_EQ(back[i].values, rows[i].values);
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace dgqa
