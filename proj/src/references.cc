#include "dgqa/references.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dgqa/errors.h"
#include "dgqa/rng.h"

namespace dgqa {
namespace {

// Bilinearly interpolated lattice noise summed over octaves (amplitude
// proportional to the lattice spacing, i.e. roughly 1/f).
Plane fractal_texture(int width, int height, Rng& rng) {
  Plane out(width, height);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int spacing = 32; spacing >= 2; spacing /= 2) {
    const int gw = width / spacing + 2;
    const int gh = height / spacing + 2;
    std::vector<double> grid(static_cast<size_t>(gw) * gh);
    for (double& g : grid) g = u(rng);
    const double amp = spacing / 32.0;
    for (int y = 0; y < height; ++y) {
      const double gy = static_cast<double>(y) / spacing;
      const int y0 = static_cast<int>(gy);
      const double fy = gy - y0;
      for (int x = 0; x < width; ++x) {
        const double gx = static_cast<double>(x) / spacing;
        const int x0 = static_cast<int>(gx);
        const double fx = gx - x0;
        auto at = [&](int xx, int yy) { return grid[static_cast<size_t>(yy) * gw + xx]; };
        const double v = (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
                         fy * ((1 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
        out(x, y) += amp * v;
      }
    }
  }
  return out;
}

}  // namespace

RasterImage dead_leaves_image(int width, int height, uint64_t seed) {
  if (width <= 0 || height <= 0) {
    throw ValidationError("dead_leaves_image: dimensions must be positive");
  }
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<Plane, 3> ch = {Plane(width, height), Plane(width, height),
                             Plane(width, height)};

  auto random_color = [&] {
    const double lum = 0.08 + 0.84 * unit(rng);
    const double sat = 0.25 * unit(rng);
    const double hue = 2.0 * std::numbers::pi * unit(rng);
    return std::array<double, 3>{lum + sat * std::cos(hue),
                                 lum + sat * std::cos(hue - 2.094),
                                 lum + sat * std::cos(hue + 2.094)};
  };

  const auto bg = random_color();
  for (int c = 0; c < 3; ++c) std::fill(ch[c].values.begin(), ch[c].values.end(), bg[c]);

  // Radii follow p(r) ~ r^-3 on [r_min, r_max] via inverse CDF.
  const double r_min = 1.5;
  const double r_max = 0.35 * std::min(width, height);
  const int leaves = static_cast<int>(0.06 * width * height);
  for (int i = 0; i < leaves; ++i) {
    const double uu = unit(rng);
    const double r = 1.0 / std::sqrt((1 - uu) / (r_min * r_min) + uu / (r_max * r_max));
    const double cx = unit(rng) * width;
    const double cy = unit(rng) * height;
    const double aspect = 0.5 + unit(rng);
    const double theta = std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    const auto color = random_color();
    const double gx = 0.3 * (unit(rng) - 0.5) / r;
    const double gy = 0.3 * (unit(rng) - 0.5) / r;
    const double extent = r * std::max(aspect, 1.0 / aspect) + 1;
    const int x0 = std::max(0, static_cast<int>(cx - extent));
    const int x1 = std::min(width - 1, static_cast<int>(cx + extent));
    const int y0 = std::max(0, static_cast<int>(cy - extent));
    const int y1 = std::min(height - 1, static_cast<int>(cy + extent));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double u1 = (dx * ct + dy * st) / (r * aspect);
        const double v1 = (-dx * st + dy * ct) * aspect / r;
        if (u1 * u1 + v1 * v1 > 1.0) continue;
        const double shade = gx * dx + gy * dy;
        for (int c = 0; c < 3; ++c) ch[c](x, y) = color[c] + shade;
      }
    }
  }

  const Plane texture = fractal_texture(width, height, rng);
  const double illum_x = 0.2 * (unit(rng) - 0.5);
  const double illum_y = 0.2 * (unit(rng) - 0.5);
  RasterImage image(width, height);
  for (int c = 0; c < 3; ++c) {
    Plane p = gaussian_blur(ch[c], 0.7);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double illum = 1.0 + illum_x * (2.0 * x / width - 1.0) +
                             illum_y * (2.0 * y / height - 1.0);
        p(x, y) = p(x, y) * illum + 0.03 * texture(x, y);
      }
    }
    store_channel(p, c, &image);
  }
  return image;
}

std::vector<Reference> procedural_references(int count, int size, uint64_t seed,
                                             const std::string& prefix) {
  std::vector<Reference> refs;
  refs.reserve(count);
  for (int i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%03d", prefix.c_str(), i);
    refs.push_back({id, dead_leaves_image(size, size, derive_seed(seed, i))});
  }
  return refs;
}

}  // namespace dgqa
