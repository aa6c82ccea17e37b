#ifndef DGQA_IMAGE_H_
#define DGQA_IMAGE_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dgqa {

// Smallest side accepted by the distortion and dataset stages.
inline constexpr int kMinImageSide = 64;

// Three-channel raster with intensities in [0,1], interleaved RGB, row-major.
class RasterImage {
 public:
  static constexpr int kChannels = 3;

  RasterImage() = default;
  RasterImage(int width, int height);
  RasterImage(int width, int height, std::vector<float> pixels);

  static RasterImage filled(int width, int height, float r, float g, float b);

  int width() const { return width_; }
  int height() const { return height_; }
  size_t pixel_count() const { return static_cast<size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  // Replaces NaN with 0 and clamps every intensity to [0,1].
  void clamp();

  bool same_size(const RasterImage& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }
  bool operator==(const RasterImage&) const = default;

  RasterImage crop(int x0, int y0, int width, int height) const;

  // Content hash of dimensions and pixel bits; equal images hash equally.
  uint64_t fingerprint() const;
  RasterImage flipped_horizontally() const;

 private:
  size_t index(int x, int y, int c) const {
    return (static_cast<size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// Throws ValidationError if either side is below kMinImageSide.
void require_min_size(const RasterImage& image, const char* what);

// Single-channel double-precision plane used by filters and NSS features.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

  double& operator()(int x, int y) {
    return values[static_cast<size_t>(y) * width + x];
  }
  double operator()(int x, int y) const {
    return values[static_cast<size_t>(y) * width + x];
  }
};

Plane channel_plane(const RasterImage& image, int channel);
void store_channel(const Plane& plane, int channel, RasterImage* image);

// Luminance 0.299 R + 0.587 G + 0.114 B.
Plane luminance(const RasterImage& image);

// Mirror index without edge repetition (… 2 1 | 0 1 2 … n-1 | n-2 …).
int reflect_index(int i, int n);

// Normalized 1-D Gaussian taps of the given radius.
std::vector<double> gaussian_kernel(double sigma, int radius);

// Separable convolution with reflect padding; taps are centered.
Plane convolve_separable(const Plane& in, std::span<const double> horizontal,
                         std::span<const double> vertical);

// Dense 2-D convolution with reflect padding; kernel is (2r+1)x(2r+1),
// row-major, centered.
Plane convolve_2d(const Plane& in, std::span<const double> kernel, int radius);

Plane gaussian_blur(const Plane& in, double sigma);

// Averages 2x2 blocks; odd trailing rows/columns are folded into the last
// block.
Plane downsample2(const Plane& in);

}  // namespace dgqa

#endif  // DGQA_IMAGE_H_
