#include "dgqa/features.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dgqa/errors.h"
#include "dgqa/rng.h"

namespace dgqa {
namespace {

constexpr double kAlphaMin = 0.2;
constexpr double kAlphaMax = 10.0;
constexpr double kAlphaStep = 0.001;

double ratio_function(double alpha) {
  return std::exp(2.0 * std::lgamma(2.0 / alpha) - std::lgamma(1.0 / alpha) -
                  std::lgamma(3.0 / alpha));
}

// rho(alpha) = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)) is increasing in alpha.
const std::vector<double>& ratio_grid() {
  static const std::vector<double> grid = [] {
    const int n = static_cast<int>(std::lround((kAlphaMax - kAlphaMin) / kAlphaStep)) + 1;
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = ratio_function(kAlphaMin + i * kAlphaStep);
    return g;
  }();
  return grid;
}

double invert_ratio(double r) {
  const auto& grid = ratio_grid();
  auto it = std::lower_bound(grid.begin(), grid.end(), r);
  size_t idx;
  if (it == grid.begin()) {
    idx = 0;
  } else if (it == grid.end()) {
    idx = grid.size() - 1;
  } else {
    idx = static_cast<size_t>(it - grid.begin());
    if (std::abs(grid[idx - 1] - r) <= std::abs(grid[idx] - r)) --idx;
  }
  return kAlphaMin + static_cast<double>(idx) * kAlphaStep;
}

void append_scale_features(const Plane& gray, FeatureVector* out) {
  const Plane field = mscn(gray);
  const AggdParams base = aggd_fit(field.values);
  out->push_back(base.alpha);
  out->push_back(0.5 * (base.sigma_left + base.sigma_right));

  constexpr std::array<std::array<int, 2>, 4> kShifts = {
      {{1, 0}, {0, 1}, {1, 1}, {-1, 1}}};
  std::vector<double> products;
  products.reserve(field.values.size());
  for (const auto& [dx, dy] : kShifts) {
    products.clear();
    for (int y = 0; y < field.height; ++y) {
      const int y2 = y + dy;
      if (y2 < 0 || y2 >= field.height) continue;
      for (int x = 0; x < field.width; ++x) {
        const int x2 = x + dx;
        if (x2 < 0 || x2 >= field.width) continue;
        products.push_back(field(x, y) * field(x2, y2));
      }
    }
    const AggdParams p = aggd_fit(products);
    out->push_back(p.alpha);
    out->push_back(p.mean_offset());
    out->push_back(p.sigma_left);
    out->push_back(p.sigma_right);
  }
}

}  // namespace

Plane mscn(const Plane& gray) {
  if (gray.width < kMscnWindow || gray.height < kMscnWindow) {
    throw ValidationError("mscn: image " + std::to_string(gray.width) + "x" +
                          std::to_string(gray.height) +
                          " is smaller than the 7x7 window");
  }
  const auto taps = gaussian_kernel(kMscnWindowSigma, kMscnWindow / 2);
  const Plane mu = convolve_separable(gray, taps, taps);
  Plane sq(gray.width, gray.height);
  for (size_t i = 0; i < sq.values.size(); ++i) {
    sq.values[i] = gray.values[i] * gray.values[i];
  }
  const Plane mu_sq = convolve_separable(sq, taps, taps);
  Plane out(gray.width, gray.height);
  for (size_t i = 0; i < out.values.size(); ++i) {
    const double var = std::max(0.0, mu_sq.values[i] - mu.values[i] * mu.values[i]);
    const double centered = gray.values[i] - mu.values[i];
    // Flat neighbourhoods: numerical residue of the subtraction is not signal.
    out.values[i] = std::abs(centered) < 1e-12
                        ? 0.0
                        : centered / (std::sqrt(var) + kMscnStabilizer);
  }
  return out;
}

Plane mscn(const RasterImage& image) { return mscn(luminance(image)); }

double AggdParams::mean_offset() const {
  if (sigma_left == 0.0 && sigma_right == 0.0) return 0.0;
  const double constant =
      std::exp(0.5 * (std::lgamma(1.0 / alpha) - std::lgamma(3.0 / alpha)));
  return (sigma_right - sigma_left) *
         std::exp(std::lgamma(2.0 / alpha) - std::lgamma(1.0 / alpha)) * constant;
}

AggdParams aggd_fit(std::span<const double> samples) {
  if (samples.size() < kAggdMinSamples) {
    throw ValidationError("aggd_fit: needs at least 16 samples, got " +
                          std::to_string(samples.size()));
  }
  size_t pos = 0, neg = 0;
  double pos_sq = 0.0, neg_sq = 0.0, abs_sum = 0.0;
  for (double v : samples) {
    if (v > 0) {
      ++pos;
      pos_sq += v * v;
      abs_sum += v;
    } else if (v < 0) {
      ++neg;
      neg_sq += v * v;
      abs_sum -= v;
    }
  }
  if (pos == 0 && neg == 0) return {};

  const double n = static_cast<double>(samples.size());
  AggdParams out;
  out.sigma_left = neg > 0 ? std::sqrt(neg_sq / static_cast<double>(neg)) : 0.0;
  out.sigma_right = pos > 0 ? std::sqrt(pos_sq / static_cast<double>(pos)) : 0.0;
  const double mean_abs = abs_sum / n;
  const double r_hat = mean_abs * mean_abs / ((pos_sq + neg_sq) / n);
  double r_norm = r_hat;
  if (pos > 0 && neg > 0) {
    const double g = out.sigma_left / out.sigma_right;
    r_norm = r_hat * (g * g * g + 1.0) * (g + 1.0) / std::pow(g * g + 1.0, 2);
  }
  out.alpha = invert_ratio(r_norm);
  return out;
}

FeatureVector extract_features(const RasterImage& image) {
  if (image.width() < 2 * kMscnWindow + 2 || image.height() < 2 * kMscnWindow + 2) {
    throw ValidationError("extract_features: image too small for two scales");
  }
  FeatureVector out;
  out.reserve(kFeatureDim);
  Plane gray = luminance(image);
  append_scale_features(gray, &out);
  append_scale_features(downsample2(gray), &out);
  for (double& v : out) {
    if (!std::isfinite(v)) v = 0.0;
  }
  return out;
}

void PatchPolicy::validate() const {
  if (patch_size <= 0) throw ValidationError("patch_size must be positive");
  if (train_patches_per_image < 1 || test_patches_per_image < 1) {
    throw ValidationError("patch counts must be at least 1");
  }
}

void PatchPolicy::validate_for(int width, int height) const {
  validate();
  if (patch_size > width || patch_size > height) {
    throw ValidationError("patch size " + std::to_string(patch_size) +
                          " exceeds image " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
}

std::vector<PatchWindow> patch_windows(int width, int height,
                                       const PatchPolicy& policy,
                                       PatchMode mode) {
  policy.validate_for(width, height);
  const int count = mode == PatchMode::kTrain ? policy.train_patches_per_image
                                              : policy.test_patches_per_image;
  Rng rng = make_rng(policy.seed);
  std::uniform_int_distribution<int> xs(0, width - policy.patch_size);
  std::uniform_int_distribution<int> ys(0, height - policy.patch_size);
  std::bernoulli_distribution flip(0.5);
  std::vector<PatchWindow> windows;
  windows.reserve(count);
  for (int i = 0; i < count; ++i) {
    PatchWindow w;
    w.x = xs(rng);
    w.y = ys(rng);
    w.flipped = mode == PatchMode::kTrain && flip(rng);
    windows.push_back(w);
  }
  return windows;
}

std::vector<RasterImage> sample_patches(const RasterImage& image,
                                        const PatchPolicy& policy,
                                        PatchMode mode) {
  std::vector<RasterImage> patches;
  for (const auto& w : patch_windows(image.width(), image.height(), policy, mode)) {
    RasterImage p = image.crop(w.x, w.y, policy.patch_size, policy.patch_size);
    patches.push_back(w.flipped ? p.flipped_horizontally() : std::move(p));
  }
  return patches;
}

void write_feature_cache(const std::filesystem::path& path,
                         std::span<const FeatureRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature cache " + path.string());
  out << "sample_id";
  const size_t dim = rows.empty() ? kFeatureDim : rows.front().values.size();
  for (size_t i = 0; i < dim; ++i) out << ",f" << i;
  out << '\n' << std::setprecision(17);
  for (const auto& row : rows) {
    if (row.sample_id.find(',') != std::string::npos) {
      throw ValidationError("feature cache: sample id contains a comma");
    }
    if (row.values.size() != dim) {
      throw ValidationError("feature cache: rows of differing length");
    }
    out << row.sample_id;
    for (double v : row.values) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing feature cache " + path.string());
}

std::vector<FeatureRow> read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read feature cache " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty feature cache " + path.string());
  std::vector<FeatureRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    FeatureRow row;
    std::getline(ss, row.sample_id, ',');
    std::string cell;
    while (std::getline(ss, cell, ',')) row.values.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dgqa
