#ifndef DGQA_DISTORTION_TABLES_H_
#define DGQA_DISTORTION_TABLES_H_

// Per-level parameters of every registered distortion family. These tables
// are part of the external contract: changing a value changes every
// synthesized dataset and every pseudo-MOS label derived from it.

#include <array>

namespace dgqa::tables {

using LevelTable = std::array<double, 5>;

// #1 Gaussian standard deviation in pixels.
inline constexpr LevelTable kGaussianBlurSigma = {0.8, 1.6, 2.4, 3.6, 5.0};
// #2 disk radius in pixels.
inline constexpr LevelTable kLensBlurRadius = {1.0, 1.8, 2.6, 3.6, 5.0};
// #3 line kernel length in pixels; the angle is drawn from the seed.
inline constexpr LevelTable kMotionBlurLength = {3.0, 5.0, 8.0, 12.0, 17.0};
// #9 detail-band quantization step (intensity units).
inline constexpr LevelTable kJpeg2000Step = {0.03, 0.06, 0.10, 0.15, 0.22};
// #10 multiplier applied to the standard JPEG tables is scale / 8.
inline constexpr LevelTable kJpegQuantScale = {2.0, 4.0, 8.0, 16.0, 32.0};
// #11 additive Gaussian noise standard deviation.
inline constexpr LevelTable kWhiteNoiseSigma = {0.015, 0.03, 0.05, 0.08, 0.12};
// #13 fraction of pixels replaced by salt or pepper.
inline constexpr LevelTable kImpulseFraction = {0.01, 0.03, 0.07, 0.12, 0.20};
// #14 standard deviation of the multiplicative factor (1 + n).
inline constexpr LevelTable kMultiplicativeSigma = {0.04, 0.08, 0.13, 0.19, 0.27};
// #16 exponent of y = 1 - (1 - x)^g.
inline constexpr LevelTable kBrightenGamma = {1.1, 1.25, 1.45, 1.7, 2.0};
// #17 exponent of y = x^g.
inline constexpr LevelTable kDarkenGamma = {1.1, 1.25, 1.45, 1.7, 2.0};
// #18 magnitude of the constant offset; the sign is drawn from the seed.
inline constexpr LevelTable kMeanShiftOffset = {0.03, 0.06, 0.10, 0.15, 0.21};
// #19 standard deviation of the per-pixel displacement in pixels.
inline constexpr LevelTable kJitterSigma = {0.3, 0.6, 1.0, 1.5, 2.2};
// #22 block side in pixels.
inline constexpr LevelTable kPixelateBlock = {2.0, 3.0, 4.0, 6.0, 8.0};
// #24 unsharp-mask amount (blur sigma fixed at kSharpenSigma).
inline constexpr LevelTable kSharpenAmount = {0.6, 1.2, 2.0, 3.2, 5.0};
inline constexpr double kSharpenSigma = 1.0;
// #25 contrast factor around mid-gray.
inline constexpr LevelTable kContrastFactor = {0.82, 0.66, 0.52, 0.40, 0.30};

}  // namespace dgqa::tables

#endif  // DGQA_DISTORTION_TABLES_H_
