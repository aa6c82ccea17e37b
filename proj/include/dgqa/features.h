#ifndef DGQA_FEATURES_H_
#define DGQA_FEATURES_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgqa/image.h"

namespace dgqa {

// 18 natural-scene statistics per scale, two scales.
inline constexpr size_t kFeaturesPerScale = 18;
inline constexpr size_t kFeatureDim = 2 * kFeaturesPerScale;

using FeatureVector = std::vector<double>;
using FeatureFn = std::function<FeatureVector(const RasterImage&)>;

// Side of the local Gaussian window used for MSCN normalization.
inline constexpr int kMscnWindow = 7;
inline constexpr double kMscnWindowSigma = 7.0 / 6.0;
inline constexpr double kMscnStabilizer = 1.0 / 255.0;

// Mean-subtracted contrast-normalized coefficients (I - mu) / (sigma + C) of
// a grayscale plane, local statistics from a 7x7 Gaussian window with
// reflect padding.
Plane mscn(const Plane& gray);
// Same on the luminance of an RGB image.
Plane mscn(const RasterImage& image);

struct AggdParams {
  double alpha = 1.0;
  double sigma_left = 0.0;
  double sigma_right = 0.0;

  // Mean of the fitted distribution; zero when symmetric.
  double mean_offset() const;
};

inline constexpr size_t kAggdMinSamples = 16;

// Moment-matching AGGD fit. alpha is looked up on a 0.001-spaced grid over
// [0.2, 10]. An all-zero input yields {1, 0, 0}.
AggdParams aggd_fit(std::span<const double> samples);

// Two scales (full, 2x box-downsampled luminance). Per scale: MSCN alpha and
// mean sigma, then alpha, mean offset, left and right sigma of the pairwise
// products along horizontal, vertical and both diagonals.
FeatureVector extract_features(const RasterImage& image);

struct PatchPolicy {
  int patch_size = 64;
  int train_patches_per_image = 1;
  int test_patches_per_image = 5;
  uint64_t seed = 0;

  // Throws ValidationError for non-positive counts or sizes.
  void validate() const;
  void validate_for(int width, int height) const;
  PatchPolicy with_seed(uint64_t s) const {
    PatchPolicy p = *this;
    p.seed = s;
    return p;
  }
};

enum class PatchMode { kTrain, kTest };

struct PatchWindow {
  int x = 0;
  int y = 0;
  bool flipped = false;
};

// Uniform top-left corners fully inside the image; in train mode each patch
// is flipped horizontally with probability 1/2.
std::vector<PatchWindow> patch_windows(int width, int height,
                                       const PatchPolicy& policy,
                                       PatchMode mode);
std::vector<RasterImage> sample_patches(const RasterImage& image,
                                        const PatchPolicy& policy,
                                        PatchMode mode);

// Feature cache: text table, one row per sample:
//   <sample_id>,<f0>,...,<f35>
// preceded by the header line "sample_id,f0,...,f35". Values are written
// with 17 significant digits so reading back is exact.
struct FeatureRow {
  std::string sample_id;
  FeatureVector values;
};
void write_feature_cache(const std::filesystem::path& path,
                         std::span<const FeatureRow> rows);
std::vector<FeatureRow> read_feature_cache(const std::filesystem::path& path);

}  // namespace dgqa

#endif  // DGQA_FEATURES_H_
