#include "geoshield/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "geoshield/errors.hpp"

namespace geoshield {

CropRegion compose(const CropRegion& outer, const CropRegion& inner) {
  return CropRegion{outer.top + inner.top, outer.left + inner.left, inner.height, inner.width};
}

std::string to_string(const CropRegion& r) {
  std::ostringstream s;
  s << "{top=" << r.top << ", left=" << r.left << ", height=" << r.height
    << ", width=" << r.width << "}";
  return s.str();
}

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    std::ostringstream msg;
    msg << "image dimensions must be positive, got " << height << "x" << width;
    throw DomainError(msg.str());
  }
  data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

Image::Image(int height, int width, std::vector<double> hwc) : Image(height, width) {
  if (hwc.size() != data_.size()) {
    std::ostringstream msg;
    msg << "image buffer holds " << hwc.size() << " values, expected " << data_.size();
    throw DomainError(msg.str());
  }
  data_ = std::move(hwc);
}

bool Image::in_unit_range() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

double Image::max_abs() const noexcept {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

CropRegion full_region(const Image& img) { return {0, 0, img.height(), img.width()}; }

bool region_inside(const CropRegion& r, int height, int width) {
  return r.height > 0 && r.width > 0 && r.top >= 0 && r.left >= 0 && r.bottom() <= height &&
         r.right() <= width;
}

namespace {

void require_inside(const CropRegion& r, const Image& img, const char* op) {
  if (!region_inside(r, img.height(), img.width())) {
    std::ostringstream msg;
    msg << op << ": region " << to_string(r) << " is not inside " << img.height() << "x"
        << img.width() << " image";
    throw DomainError(msg.str());
  }
}

// Two-tap bilinear sampling positions along one axis.
struct AxisTaps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> w_hi;
};

AxisTaps axis_taps(int offset, int in_size, int out_size) {
  AxisTaps taps;
  taps.lo.resize(out_size);
  taps.hi.resize(out_size);
  taps.w_hi.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in_size - 1);
    taps.lo[o] = offset + i0;
    taps.hi[o] = offset + i1;
    taps.w_hi[o] = src - i0;
  }
  return taps;
}

}  // namespace

Image resize(const Image& img, int height, int width) {
  return resize_region(img, full_region(img), height, width);
}

Image resize_region(const Image& img, const CropRegion& region, int height, int width) {
  if (height <= 0 || width <= 0) {
    std::ostringstream msg;
    msg << "resize: target dimensions must be positive, got " << height << "x" << width;
    throw DomainError(msg.str());
  }
  require_inside(region, img, "resize_region");
  if (region.height == height && region.width == width) return crop(img, region);

  const AxisTaps ty = axis_taps(region.top, region.height, height);
  const AxisTaps tx = axis_taps(region.left, region.width, width);
  Image out(height, width);
  auto src = img.values();
  auto dst = out.values();
  const std::size_t row_stride = static_cast<std::size_t>(img.width()) * Image::kChannels;
  for (int y = 0; y < height; ++y) {
    const double wy = ty.w_hi[y];
    const double* r0 = src.data() + ty.lo[y] * row_stride;
    const double* r1 = src.data() + ty.hi[y] * row_stride;
    double* o = dst.data() + static_cast<std::size_t>(y) * width * Image::kChannels;
    for (int x = 0; x < width; ++x) {
      const double wx = tx.w_hi[x];
      const std::size_t c0 = static_cast<std::size_t>(tx.lo[x]) * Image::kChannels;
      const std::size_t c1 = static_cast<std::size_t>(tx.hi[x]) * Image::kChannels;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = r0[c0 + c] + wx * (r0[c1 + c] - r0[c0 + c]);
        const double bot = r1[c0 + c] + wx * (r1[c1 + c] - r1[c0 + c]);
        o[x * Image::kChannels + c] = top + wy * (bot - top);
      }
    }
  }
  return out;
}

void resize_region_backward(const Image& grad_out, const CropRegion& region, Image& grad_img) {
  require_inside(region, grad_img, "resize_region_backward");
  const int height = grad_out.height();
  const int width = grad_out.width();
  auto dst = grad_img.values();
  const std::size_t row_stride = static_cast<std::size_t>(grad_img.width()) * Image::kChannels;
  auto g = grad_out.values();

  if (region.height == height && region.width == width) {
    for (int y = 0; y < height; ++y) {
      double* row = dst.data() + (region.top + y) * row_stride +
                    static_cast<std::size_t>(region.left) * Image::kChannels;
      const double* gr = g.data() + static_cast<std::size_t>(y) * width * Image::kChannels;
      for (int i = 0; i < width * Image::kChannels; ++i) row[i] += gr[i];
    }
    return;
  }

  const AxisTaps ty = axis_taps(region.top, region.height, height);
  const AxisTaps tx = axis_taps(region.left, region.width, width);
  for (int y = 0; y < height; ++y) {
    const double wy = ty.w_hi[y];
    double* r0 = dst.data() + ty.lo[y] * row_stride;
    double* r1 = dst.data() + ty.hi[y] * row_stride;
    const double* gr = g.data() + static_cast<std::size_t>(y) * width * Image::kChannels;
    for (int x = 0; x < width; ++x) {
      const double wx = tx.w_hi[x];
      const std::size_t c0 = static_cast<std::size_t>(tx.lo[x]) * Image::kChannels;
      const std::size_t c1 = static_cast<std::size_t>(tx.hi[x]) * Image::kChannels;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double v = gr[x * Image::kChannels + c];
        const double top = v * (1.0 - wy);
        const double bot = v * wy;
        r0[c0 + c] += top * (1.0 - wx);
        r0[c1 + c] += top * wx;
        r1[c0 + c] += bot * (1.0 - wx);
        r1[c1 + c] += bot * wx;
      }
    }
  }
}

Image crop(const Image& img, const CropRegion& region) {
  require_inside(region, img, "crop");
  Image out(region.height, region.width);
  auto src = img.values();
  auto dst = out.values();
  const std::size_t n = static_cast<std::size_t>(region.width) * Image::kChannels;
  for (int y = 0; y < region.height; ++y) {
    const auto from = (static_cast<std::size_t>(region.top + y) * img.width() + region.left) *
                      Image::kChannels;
    std::copy_n(src.begin() + from, n, dst.begin() + static_cast<std::size_t>(y) * n);
  }
  return out;
}

CropRegion sample_random_crop_region(int height, int width, Rng& rng,
                                     const CropSampling& s) {
  if (height <= 0 || width <= 0) throw DomainError("sample_random_crop: empty image");
  if (!(s.scale_min > 0.0) || !(s.scale_max <= 1.0) || s.scale_min > s.scale_max)
    throw DomainError("sample_random_crop: scale range must satisfy 0 < lo <= hi <= 1");
  if (!(s.ratio_min > 0.0) || s.ratio_min > s.ratio_max)
    throw DomainError("sample_random_crop: invalid aspect ratio bounds");
  const double total = static_cast<double>(height) * width;
  if (s.scale_max * total < 1.0)
    throw DomainError("sample_random_crop: scale range yields sub-pixel regions");

  auto accept = [&](int h, int w) {
    if (h < 1 || w < 1 || h > height || w > width) return false;
    const double frac = static_cast<double>(h) * w / total;
    return frac >= s.scale_min && frac <= s.scale_max;
  };

  const double log_rmin = std::log(s.ratio_min);
  const double log_rmax = std::log(s.ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = total * uniform_real(rng, s.scale_min, s.scale_max);
    const double ratio = std::exp(uniform_real(rng, log_rmin, log_rmax));
    const int w = static_cast<int>(std::lround(std::sqrt(area * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(area / ratio)));
    if (!accept(h, w)) continue;
    const double r = static_cast<double>(w) / h;
    if (r < s.ratio_min || r > s.ratio_max) continue;
    const int top = static_cast<int>(uniform_int(rng, 0, height - h));
    const int left = static_cast<int>(uniform_int(rng, 0, width - w));
    return {top, left, h, w};
  }

  if (s.scale_max >= 1.0) return {0, 0, height, width};

  // Deterministic fallback: mid-range area at the ratio closest to the image's.
  const double ratio = std::clamp(static_cast<double>(width) / height, s.ratio_min, s.ratio_max);
  const double area = total * 0.5 * (s.scale_min + s.scale_max);
  int w = std::min(width, static_cast<int>(std::lround(std::sqrt(area * ratio))));
  int h = std::min(height, static_cast<int>(std::lround(std::sqrt(area / ratio))));
  if (!accept(h, w)) {
    h = height;
    w = std::min(width, static_cast<int>(std::ceil(s.scale_min * width)));
  }
  if (!accept(h, w))
    throw DomainError("sample_random_crop: scale range admits no integer region");
  return {(height - h) / 2, (width - w) / 2, h, w};
}

std::pair<CropRegion, Image> sample_random_crop(const Image& img, Rng& rng,
                                                const CropSampling& sampling) {
  const CropRegion r = sample_random_crop_region(img.height(), img.width(), rng, sampling);
  return {r, crop(img, r)};
}

namespace {

// Half-sample symmetric reflection: index -1 maps to 0, n maps to n-1.
int mirror(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw DomainError("gaussian_blur: radius must be a non-negative number");
  if (sigma == 0.0) return img;

  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    kernel[i + half] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + half];
  }
  for (double& k : kernel) k /= sum;

  const int h = img.height();
  const int w = img.width();
  Image tmp(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) acc += kernel[k + half] * img.at(y, mirror(x + k, w), c);
        tmp.at(y, x, c) = acc;
      }
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) acc += kernel[k + half] * tmp.at(mirror(y + k, h), x, c);
        out.at(y, x, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (double& v : out.values()) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  out.set_source_bit_depth(8);
  return out;
}

std::string content_hash(const Image& img) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(img.height() >> shift));
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(img.width() >> shift));
  for (double v : img.values())
    mix(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_image(bytes, path.string());
}

void save_protected(const Image& img, const std::filesystem::path& path) {
  const auto png = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path.string());
  out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace geoshield
