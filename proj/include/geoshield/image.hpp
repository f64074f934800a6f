#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geoshield/random.hpp"

namespace geoshield {

/// Axis-aligned pixel rectangle. Coordinates are relative to a parent image.
struct CropRegion {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const noexcept { return top + height; }
  int right() const noexcept { return left + width; }
  long long area() const noexcept { return static_cast<long long>(height) * width; }

  friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

/// Region `inner`, expressed relative to `outer`, mapped into outer's parent.
CropRegion compose(const CropRegion& outer, const CropRegion& inner);

std::string to_string(const CropRegion& r);

/// Row-major H x W x 3 raster of doubles, channels interleaved.
///
/// Pixel images keep every value in [0, 1]; the same container also carries
/// perturbations and input gradients, which are unconstrained. Functions that
/// consume pixel images document the range they require.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);
  Image(int height, int width, std::vector<double> hwc);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return kChannels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  /// Bit depth of the file this image was decoded from (8 or 16), else 8.
  int source_bit_depth() const noexcept { return bit_depth_; }
  void set_source_bit_depth(int bits) noexcept { bit_depth_ = bits; }

  bool in_unit_range() const noexcept;
  double max_abs() const noexcept;

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  int bit_depth_ = 8;
  std::vector<double> data_;
};

CropRegion full_region(const Image& img);
bool region_inside(const CropRegion& r, int height, int width);

/// Decodes PNG or JPEG (detected from magic bytes) into [0, 1] values.
Image load_image(const std::filesystem::path& path);
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

/// Writes an 8-bit RGB PNG. Values are clamped to [0, 1] first.
void save_protected(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);

/// The exact image that save_protected followed by load_image produces.
Image quantize_8bit(const Image& img);

/// Bilinear, half-pixel centres, no antialiasing.
Image resize(const Image& img, int height, int width);

/// crop(img, region) followed by resize(height, width), without the copy.
Image resize_region(const Image& img, const CropRegion& region, int height, int width);

/// Adjoint of resize_region: accumulates d(loss)/d(img) into grad_img given
/// d(loss)/d(output). grad_img must have img's shape.
void resize_region_backward(const Image& grad_out, const CropRegion& region, Image& grad_img);

Image crop(const Image& img, const CropRegion& region);

/// Area/aspect sampling bounds for random crops.
struct CropSampling {
  double scale_min = 0.5;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
};

/// Region whose area fraction lies in [scale_min, scale_max] and whose
/// width/height ratio lies in [ratio_min, ratio_max]. When scale_max is 1
/// and no sampled shape fits, the full image is returned.
CropRegion sample_random_crop_region(int height, int width, Rng& rng,
                                     const CropSampling& sampling = {});
std::pair<CropRegion, Image> sample_random_crop(const Image& img, Rng& rng,
                                                const CropSampling& sampling = {});

/// Encode at `quality` (1..100) with libjpeg, decode back.
Image jpeg_roundtrip(const Image& img, int quality);

/// Separable Gaussian with standard deviation `sigma` pixels, kernel
/// truncated at 3 sigma, half-sample symmetric (mirror) padding.
Image gaussian_blur(const Image& img, double sigma);

/// 16 hex digits identifying the 8-bit quantised content and shape.
std::string content_hash(const Image& img);

}  // namespace geoshield
