#include "dgqa/image.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dgqa/errors.h"
#include "dgqa/rng.h"

namespace dgqa {

RasterImage::RasterImage(int width, int height)
    : RasterImage(width, height,
                  std::vector<float>(static_cast<size_t>(std::max(width, 0)) *
                                     std::max(height, 0) * kChannels)) {}

RasterImage::RasterImage(int width, int height, std::vector<float> pixels)
    : width_(width), height_(height), data_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    throw ValidationError("image dimensions must be positive, got " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
  if (data_.size() != static_cast<size_t>(width) * height * kChannels) {
    throw ValidationError("pixel buffer size does not match " +
                          std::to_string(width) + "x" + std::to_string(height) +
                          "x3");
  }
}

RasterImage RasterImage::filled(int width, int height, float r, float g,
                                float b) {
  RasterImage image(width, height);
  auto px = image.data();
  for (size_t i = 0; i < px.size(); i += kChannels) {
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }
  return image;
}

void RasterImage::clamp() {
  for (float& v : data_) {
    if (std::isnan(v)) v = 0.0f;
    v = std::clamp(v, 0.0f, 1.0f);
  }
}

RasterImage RasterImage::crop(int x0, int y0, int width, int height) const {
  if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > width_ ||
      y0 + height > height_) {
    throw ValidationError("crop window outside image");
  }
  RasterImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const float* src = &data_[index(x0, y0 + y, 0)];
    std::copy(src, src + static_cast<size_t>(width) * kChannels,
              &out.at(0, y, 0));
  }
  return out;
}

uint64_t RasterImage::fingerprint() const {
  uint64_t h = splitmix64((static_cast<uint64_t>(width_) << 32) ^
                          static_cast<uint64_t>(height_));
  const size_t n = data_.size();
  size_t i = 0;
  for (; i + 1 < n; i += 2) {
    uint32_t a, b;
    std::memcpy(&a, &data_[i], sizeof(a));
    std::memcpy(&b, &data_[i + 1], sizeof(b));
    h = splitmix64(h ^ ((static_cast<uint64_t>(a) << 32) | b));
  }
  if (i < n) {
    uint32_t a;
    std::memcpy(&a, &data_[i], sizeof(a));
    h = splitmix64(h ^ a);
  }
  return h;
}

RasterImage RasterImage::flipped_horizontally() const {
  RasterImage out(width_, height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        out.at(width_ - 1 - x, y, c) = at(x, y, c);
      }
    }
  }
  return out;
}

void require_min_size(const RasterImage& image, const char* what) {
  if (image.width() < kMinImageSide || image.height() < kMinImageSide) {
    throw ValidationError(std::string(what) + ": image " +
                          std::to_string(image.width()) + "x" +
                          std::to_string(image.height()) +
                          " is smaller than the minimum side " +
                          std::to_string(kMinImageSide));
  }
}

Plane channel_plane(const RasterImage& image, int channel) {
  Plane p(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) p(x, y) = image.at(x, y, channel);
  }
  return p;
}

void store_channel(const Plane& plane, int channel, RasterImage* image) {
  for (int y = 0; y < plane.height; ++y) {
    for (int x = 0; x < plane.width; ++x) {
      image->at(x, y, channel) =
          static_cast<float>(std::clamp(plane(x, y), 0.0, 1.0));
    }
  }
}

Plane luminance(const RasterImage& image) {
  Plane p(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      p(x, y) = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) +
                0.114 * image.at(x, y, 2);
    }
  }
  return p;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    taps[i + radius] = w;
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

Plane convolve_separable(const Plane& in, std::span<const double> horizontal,
                         std::span<const double> vertical) {
  const int rh = static_cast<int>(horizontal.size() / 2);
  const int rv = static_cast<int>(vertical.size() / 2);
  Plane tmp(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -rh; k <= rh; ++k) {
        acc += horizontal[k + rh] * in(reflect_index(x + k, in.width), y);
      }
      tmp(x, y) = acc;
    }
  }
  Plane out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -rv; k <= rv; ++k) {
        acc += vertical[k + rv] * tmp(x, reflect_index(y + k, in.height));
      }
      out(x, y) = acc;
    }
  }
  return out;
}

Plane convolve_2d(const Plane& in, std::span<const double> kernel, int radius) {
  const int side = 2 * radius + 1;
  Plane out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int ky = -radius; ky <= radius; ++ky) {
        const int sy = reflect_index(y + ky, in.height);
        const double* row = &kernel[static_cast<size_t>(ky + radius) * side];
        for (int kx = -radius; kx <= radius; ++kx) {
          const double w = row[kx + radius];
          if (w != 0.0) acc += w * in(reflect_index(x + kx, in.width), sy);
        }
      }
      out(x, y) = acc;
    }
  }
  return out;
}

Plane gaussian_blur(const Plane& in, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const auto taps = gaussian_kernel(sigma, radius);
  return convolve_separable(in, taps, taps);
}

Plane downsample2(const Plane& in) {
  const int w = std::max(1, in.width / 2);
  const int h = std::max(1, in.height / 2);
  Plane out(w, h);
  for (int y = 0; y < h; ++y) {
    const int y1 = (y == h - 1) ? in.height : 2 * y + 2;
    for (int x = 0; x < w; ++x) {
      const int x1 = (x == w - 1) ? in.width : 2 * x + 2;
      double acc = 0.0;
      int n = 0;
      for (int sy = 2 * y; sy < y1; ++sy) {
        for (int sx = 2 * x; sx < x1; ++sx) {
          acc += in(sx, sy);
          ++n;
        }
      }
      out(x, y) = acc / n;
    }
  }
  return out;
}

}  // namespace dgqa
