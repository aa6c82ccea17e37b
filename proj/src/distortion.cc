#include "dgqa/distortion.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "dgqa/errors.h"

namespace dgqa {
namespace {

using Op = DistortionOperator;

template <typename F>
void for_each_channel(RasterImage& image, F&& f) {
  for (int c = 0; c < RasterImage::kChannels; ++c) {
    Plane p = channel_plane(image, c);
    f(p);
    store_channel(p, c, &image);
  }
}

template <typename F>
void map_intensities(RasterImage& image, F&& f) {
  for (float& v : image.data()) v = static_cast<float>(f(static_cast<double>(v)));
}

void filter_channels(RasterImage& image, std::span<const double> kernel,
                     int radius) {
  for_each_channel(image, [&](Plane& p) { p = convolve_2d(p, kernel, radius); });
}

void gaussian_blur_op(RasterImage& image, double sigma, Rng&) {
  for_each_channel(image, [&](Plane& p) { p = gaussian_blur(p, sigma); });
}

void lens_blur_op(RasterImage& image, double radius, Rng&) {
  const int r = static_cast<int>(std::ceil(radius + 0.5));
  const int side = 2 * r + 1;
  std::vector<double> kernel(static_cast<size_t>(side) * side);
  double sum = 0.0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double d = std::hypot(x, y);
      const double w = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      kernel[static_cast<size_t>(y + r) * side + (x + r)] = w;
      sum += w;
    }
  }
  for (double& w : kernel) w /= sum;
  filter_channels(image, kernel, r);
}

void motion_blur_op(RasterImage& image, double length, Rng& rng) {
  const double angle =
      std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
  const int r = static_cast<int>(std::ceil(length / 2.0)) + 1;
  const int side = 2 * r + 1;
  std::vector<double> kernel(static_cast<size_t>(side) * side, 0.0);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const int steps = static_cast<int>(std::ceil(length * 4.0));
  for (int s = 0; s <= steps; ++s) {
    const double t = -length / 2.0 + length * s / steps;
    const double px = t * dx + r;
    const double py = t * dy + r;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    const std::array<std::pair<int, int>, 4> corners = {
        {{x0, y0}, {x0 + 1, y0}, {x0, y0 + 1}, {x0 + 1, y0 + 1}}};
    const std::array<double, 4> weights = {(1 - fx) * (1 - fy), fx * (1 - fy),
                                           (1 - fx) * fy, fx * fy};
    for (int i = 0; i < 4; ++i) {
      const auto [cx, cy] = corners[i];
      if (cx >= 0 && cx < side && cy >= 0 && cy < side) {
        kernel[static_cast<size_t>(cy) * side + cx] += weights[i];
      }
    }
  }
  const double sum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& w : kernel) w /= sum;
  filter_channels(image, kernel, r);
}

Plane pyramid_down(const Plane& in) {
  const Plane blurred = gaussian_blur(in, 1.0);
  Plane out((in.width + 1) / 2, (in.height + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out(x, y) = blurred(2 * x, 2 * y);
  }
  return out;
}

Plane pyramid_up(const Plane& small, int width, int height) {
  Plane out(width, height);
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, small.height - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, small.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx =
          std::clamp((x + 0.5) / 2.0 - 0.5, 0.0, small.width - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, small.width - 1);
      const double fx = sx - x0;
      out(x, y) = (1 - fy) * ((1 - fx) * small(x0, y0) + fx * small(x1, y0)) +
                  fy * ((1 - fx) * small(x0, y1) + fx * small(x1, y1));
    }
  }
  return out;
}

double deadzone_quantize(double v, double step) {
  const double mag = std::abs(v);
  if (mag < step) return 0.0;
  return std::copysign((std::floor(mag / step) + 0.5) * step, v);
}

// Laplacian pyramid with quantized detail bands: removes fine texture and
// leaves the smeared, ringing-prone look of wavelet codecs at low rates.
void jpeg2000_op(RasterImage& image, double step, Rng&) {
  for_each_channel(image, [&](Plane& p) {
    std::vector<Plane> gauss{p};
    while (gauss.size() < 5 && std::min(gauss.back().width, gauss.back().height) >= 16) {
      gauss.push_back(pyramid_down(gauss.back()));
    }
    Plane recon = gauss.back();
    for (double& v : recon.values) v = std::round(v / (step / 4)) * (step / 4);
    for (int band = static_cast<int>(gauss.size()) - 2; band >= 0; --band) {
      const Plane& g = gauss[band];
      const Plane up_exact = pyramid_up(gauss[band + 1], g.width, g.height);
      const Plane up_recon = pyramid_up(recon, g.width, g.height);
      const double band_step = step / (1.0 + 0.5 * band);
      Plane next(g.width, g.height);
      for (size_t i = 0; i < g.values.size(); ++i) {
        const double detail = g.values[i] - up_exact.values[i];
        next.values[i] = up_recon.values[i] + deadzone_quantize(detail, band_step);
      }
      recon = std::move(next);
    }
    p = std::move(recon);
  });
}

constexpr std::array<int, 64> kJpegLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr std::array<int, 64> kJpegChroma = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = (u == 0) ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) {
        b[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return basis;
}

void jpeg_quantize_plane(Plane& p, const std::array<int, 64>& table,
                         double factor) {
  const auto& basis = dct_basis();
  std::array<double, 64> q{};
  for (int i = 0; i < 64; ++i) {
    q[i] = std::max(1.0, std::round(table[i] * factor));
  }
  const int bw = (p.width + 7) / 8;
  const int bh = (p.height + 7) / 8;
  std::array<double, 64> block{}, tmp{}, coeff{};
  for (int by = 0; by < bh; ++by) {
    for (int bx = 0; bx < bw; ++bx) {
      for (int y = 0; y < 8; ++y) {
        const int sy = reflect_index(by * 8 + y, p.height);
        for (int x = 0; x < 8; ++x) {
          block[y * 8 + x] = p(reflect_index(bx * 8 + x, p.width), sy) - 128.0;
        }
      }
      // Rows then columns.
      for (int y = 0; y < 8; ++y) {
        for (int u = 0; u < 8; ++u) {
          double acc = 0.0;
          for (int x = 0; x < 8; ++x) acc += basis[u * 8 + x] * block[y * 8 + x];
          tmp[y * 8 + u] = acc;
        }
      }
      for (int v = 0; v < 8; ++v) {
        for (int u = 0; u < 8; ++u) {
          double acc = 0.0;
          for (int y = 0; y < 8; ++y) acc += basis[v * 8 + y] * tmp[y * 8 + u];
          coeff[v * 8 + u] = std::round(acc / q[v * 8 + u]) * q[v * 8 + u];
        }
      }
      for (int y = 0; y < 8; ++y) {
        for (int u = 0; u < 8; ++u) {
          double acc = 0.0;
          for (int v = 0; v < 8; ++v) acc += basis[v * 8 + y] * coeff[v * 8 + u];
          tmp[y * 8 + u] = acc;
        }
      }
      for (int y = 0; y < 8; ++y) {
        const int py = by * 8 + y;
        if (py >= p.height) break;
        for (int x = 0; x < 8; ++x) {
          const int px = bx * 8 + x;
          if (px >= p.width) break;
          double acc = 0.0;
          for (int u = 0; u < 8; ++u) acc += basis[u * 8 + x] * tmp[y * 8 + u];
          p(px, py) = acc + 128.0;
        }
      }
    }
  }
}

void jpeg_op(RasterImage& image, double scale, Rng&) {
  const int w = image.width();
  const int h = image.height();
  Plane luma(w, h), cb(w, h), cr(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = 255.0 * image.at(x, y, 0);
      const double g = 255.0 * image.at(x, y, 1);
      const double b = 255.0 * image.at(x, y, 2);
      luma(x, y) = 0.299 * r + 0.587 * g + 0.114 * b;
      cb(x, y) = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
      cr(x, y) = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
  }
  const double factor = scale / 8.0;
  jpeg_quantize_plane(luma, kJpegLuma, factor);
  jpeg_quantize_plane(cb, kJpegChroma, factor);
  jpeg_quantize_plane(cr, kJpegChroma, factor);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double yy = luma(x, y);
      const double b_ = cb(x, y) - 128.0;
      const double r_ = cr(x, y) - 128.0;
      image.at(x, y, 0) = static_cast<float>((yy + 1.402 * r_) / 255.0);
      image.at(x, y, 1) =
          static_cast<float>((yy - 0.344136 * b_ - 0.714136 * r_) / 255.0);
      image.at(x, y, 2) = static_cast<float>((yy + 1.772 * b_) / 255.0);
    }
  }
}

void white_noise_op(RasterImage& image, double sigma, Rng& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  map_intensities(image, [&](double v) { return v + noise(rng); });
}

void impulse_noise_op(RasterImage& image, double fraction, Rng& rng) {
  const size_t n = image.pixel_count();
  const size_t count = static_cast<size_t>(std::floor(fraction * n));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution salt(0.5);
  auto px = image.data();
  for (size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
    const float v = salt(rng) ? 1.0f : 0.0f;
    for (int c = 0; c < RasterImage::kChannels; ++c) {
      px[order[i] * RasterImage::kChannels + c] = v;
    }
  }
}

void multiplicative_noise_op(RasterImage& image, double sigma, Rng& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  map_intensities(image, [&](double v) { return v * (1.0 + noise(rng)); });
}

void brighten_op(RasterImage& image, double gamma, Rng&) {
  map_intensities(image, [&](double v) {
    return 1.0 - std::pow(std::clamp(1.0 - v, 0.0, 1.0), gamma);
  });
}

void darken_op(RasterImage& image, double gamma, Rng&) {
  map_intensities(image, [&](double v) {
    return std::pow(std::clamp(v, 0.0, 1.0), gamma);
  });
}

void mean_shift_op(RasterImage& image, double offset, Rng& rng) {
  const double shift = std::bernoulli_distribution(0.5)(rng) ? offset : -offset;
  map_intensities(image, [&](double v) { return v + shift; });
}

void jitter_op(RasterImage& image, double sigma, Rng& rng) {
  const RasterImage src = image;
  const int w = image.width();
  const int h = image.height();
  std::normal_distribution<double> offset(0.0, sigma);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sx = x + offset(rng);
      const double sy = y + offset(rng);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      const int xa = reflect_index(x0, w), xb = reflect_index(x0 + 1, w);
      const int ya = reflect_index(y0, h), yb = reflect_index(y0 + 1, h);
      for (int c = 0; c < RasterImage::kChannels; ++c) {
        const double v =
            (1 - fy) * ((1 - fx) * src.at(xa, ya, c) + fx * src.at(xb, ya, c)) +
            fy * ((1 - fx) * src.at(xa, yb, c) + fx * src.at(xb, yb, c));
        image.at(x, y, c) = static_cast<float>(v);
      }
    }
  }
}

void pixelate_op(RasterImage& image, double block, Rng&) {
  const int b = static_cast<int>(block);
  for_each_channel(image, [&](Plane& p) {
    for (int by = 0; by < p.height; by += b) {
      for (int bx = 0; bx < p.width; bx += b) {
        const int ey = std::min(by + b, p.height);
        const int ex = std::min(bx + b, p.width);
        double acc = 0.0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) acc += p(x, y);
        acc /= static_cast<double>((ey - by) * (ex - bx));
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) p(x, y) = acc;
      }
    }
  });
}

void high_sharpen_op(RasterImage& image, double amount, Rng&) {
  for_each_channel(image, [&](Plane& p) {
    const Plane blurred = gaussian_blur(p, tables::kSharpenSigma);
    for (size_t i = 0; i < p.values.size(); ++i) {
      p.values[i] += amount * (p.values[i] - blurred.values[i]);
    }
  });
}

void contrast_op(RasterImage& image, double factor, Rng&) {
  map_intensities(image, [&](double v) { return 0.5 + factor * (v - 0.5); });
}

DistortionRegistry build_default_registry() {
  namespace t = tables;
  return DistortionRegistry({
      {DomainId{1}, "gaussian_blur", t::kGaussianBlurSigma, gaussian_blur_op},
      {DomainId{2}, "lens_blur", t::kLensBlurRadius, lens_blur_op},
      {DomainId{3}, "motion_blur", t::kMotionBlurLength, motion_blur_op},
      {DomainId{9}, "jpeg2000_approx", t::kJpeg2000Step, jpeg2000_op},
      {DomainId{10}, "jpeg_approx", t::kJpegQuantScale, jpeg_op},
      {DomainId{11}, "white_noise", t::kWhiteNoiseSigma, white_noise_op},
      {DomainId{13}, "impulse_noise", t::kImpulseFraction, impulse_noise_op},
      {DomainId{14}, "multiplicative_noise", t::kMultiplicativeSigma,
       multiplicative_noise_op},
      {DomainId{16}, "brighten", t::kBrightenGamma, brighten_op},
      {DomainId{17}, "darken", t::kDarkenGamma, darken_op},
      {DomainId{18}, "mean_shift", t::kMeanShiftOffset, mean_shift_op},
      {DomainId{19}, "jitter", t::kJitterSigma, jitter_op},
      {DomainId{22}, "pixelate", t::kPixelateBlock, pixelate_op},
      {DomainId{24}, "high_sharpen", t::kSharpenAmount, high_sharpen_op},
      {DomainId{25}, "contrast_change", t::kContrastFactor, contrast_op},
  });
}

}  // namespace

DistortionRegistry::DistortionRegistry(std::vector<FamilyDescriptor> families)
    : families_(std::move(families)) {
  for (size_t i = 0; i < families_.size(); ++i) {
    for (size_t j = 0; j < i; ++j) {
      if (families_[i].id == families_[j].id) {
        throw ValidationError("duplicate distortion family id " +
                              std::to_string(to_int(families_[i].id)));
      }
    }
  }
}

const FamilyDescriptor* DistortionRegistry::find(DomainId id) const {
  for (const auto& f : families_) {
    if (f.id == id) return &f;
  }
  return nullptr;
}

const FamilyDescriptor& DistortionRegistry::lookup(DomainId id) const {
  if (const auto* f = find(id)) return *f;
  throw RegistryError("distortion family #" + std::to_string(to_int(id)) +
                      " is not registered");
}

const FamilyDescriptor& DistortionRegistry::lookup(
    const std::string& name) const {
  for (const auto& f : families_) {
    if (f.name == name) return f;
  }
  throw RegistryError("distortion family '" + name + "' is not registered");
}

std::vector<DomainId> DistortionRegistry::ids() const {
  std::vector<DomainId> out;
  out.reserve(families_.size());
  for (const auto& f : families_) out.push_back(f.id);
  return out;
}

DistortionRegistry DistortionRegistry::subset(
    const std::vector<DomainId>& ids) const {
  std::vector<FamilyDescriptor> out;
  out.reserve(ids.size());
  for (DomainId id : ids) out.push_back(lookup(id));
  return DistortionRegistry(std::move(out));
}

const DistortionRegistry& registry_default() {
  static const DistortionRegistry registry = build_default_registry();
  return registry;
}

RasterImage apply_distortion(const RasterImage& image,
                             const DistortionSpec& spec,
                             const DistortionRegistry& registry) {
  const FamilyDescriptor& family = registry.lookup(spec.family);
  if (spec.level < 1 || spec.level > 5) {
    throw ValidationError("distortion level must be in 1..5, got " +
                          std::to_string(spec.level));
  }
  require_min_size(image, "apply_distortion");
  RasterImage out = image;
  Rng rng = make_rng(spec.seed);
  family.apply(out, family.levels[spec.level - 1], rng);
  out.clamp();
  return out;
}

RasterImage apply_distortion(const RasterImage& image,
                             const DistortionSpec& spec) {
  return apply_distortion(image, spec, registry_default());
}

double psnr(const RasterImage& reference, const RasterImage& distorted) {
  if (!reference.same_size(distorted)) {
    throw ValidationError("psnr: image dimensions differ");
  }
  const auto a = reference.data();
  const auto b = distorted.data();
  if (a.empty()) throw ValidationError("psnr: empty image");
  double sse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double pseudo_label_from_psnr(double psnr_db) {
  return 100.0 * std::clamp((psnr_db - 15.0) / 35.0, 0.0, 1.0);
}

double pseudo_label(const RasterImage& reference, const RasterImage& distorted) {
  return pseudo_label_from_psnr(psnr(reference, distorted));
}

void DomainDataset::validate() const {
  for (const auto& s : samples) {
    if (!std::isfinite(s.quality)) {
      throw ValidationError("dataset '" + name + "': non-finite quality label");
    }
    if (s.reference_id.empty()) {
      throw ValidationError("dataset '" + name + "': sample without reference_id");
    }
  }
}

DomainDataset generate_domain(const std::vector<Reference>& references,
                              DomainId family, const std::set<int>& levels,
                              uint64_t seed,
                              const DistortionRegistry& registry) {
  if (references.empty()) {
    throw ValidationError("generate_domain: no reference images");
  }
  if (levels.empty()) throw ValidationError("generate_domain: empty level set");
  const FamilyDescriptor& descriptor = registry.lookup(family);
  DomainDataset dataset;
  dataset.domain = family;
  dataset.name = descriptor.name;
  dataset.samples.reserve(references.size() * levels.size());
  uint64_t index = 0;
  for (const auto& ref : references) {
    for (int level : levels) {
      const DistortionSpec spec{family, level, seed ^ index++};
      RasterImage distorted = apply_distortion(ref.image, spec, registry);
      const double quality = pseudo_label(ref.image, distorted);
      dataset.samples.push_back({std::move(distorted), quality, ref.id, level});
    }
  }
  return dataset;
}

}  // namespace dgqa
