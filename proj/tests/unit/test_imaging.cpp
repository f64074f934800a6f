#include <gtest/gtest.h>

#include <numeric>

#include "geoshield/errors.hpp"
#include "geoshield/image.hpp"
#include "geoshield/synthetic.hpp"
#include "support.hpp"

using namespace geoshield;
using geoshield::test_support::random_image;
using geoshield::test_support::TempDir;

namespace {

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  return s / a.size();
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

double sum(const Image& a) { return std::accumulate(a.values().begin(), a.values().end(), 0.0); }

TEST(Codecs, EightBitScale) {
  Image img(1, 3);
  img.at(0, 0, 0) = 1.0;
  img.at(0, 1, 0) = 0.0;
  img.at(0, 2, 0) = 128.0 / 255.0;
  const Image back = decode_image(encode_png(img));
  EXPECT_EQ(back.at(0, 0, 0), 1.0);
  EXPECT_EQ(back.at(0, 1, 0), 0.0);
  EXPECT_EQ(back.at(0, 2, 0), 128.0 / 255.0);
}

TEST(Codecs, SaveLoadRoundTripWithinQuantisation) {
  TempDir dir("codec");
  const Image img = random_image(1, 37, 53);
  save_protected(img, dir / "x.png");
  const Image back = load_image(dir / "x.png");
  ASSERT_EQ(back.height(), 37);
  ASSERT_EQ(back.width(), 53);
  EXPECT_LE(max_abs_diff(img, back), 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(back, quantize_8bit(img));
}

TEST(Codecs, ConstantHalfRoundsToNeighbour) {
  TempDir dir("codec");
  save_protected(Image(4, 4, 0.5), dir / "h.png");
  const double v = load_image(dir / "h.png").at(2, 2, 1);
  EXPECT_TRUE(v == 128.0 / 255.0 || v == 127.0 / 255.0);
}

TEST(Codecs, Errors) {
  TempDir dir("codec");
  EXPECT_THROW(save_protected(Image(2, 2), dir / "missing" / "x.png"), IoError);
  EXPECT_THROW(load_image(dir / "none.png"), IoError);
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_THROW(decode_image(junk), IoError);
}

TEST(Codecs, JpegDecodes) {
  const Image img = synthetic_scene(3, 48, 64).image;
  const Image j = jpeg_roundtrip(img, 95);
  EXPECT_EQ(j.height(), 48);
  EXPECT_EQ(j.width(), 64);
  EXPECT_TRUE(j.in_unit_range());
}

TEST(Resize, IdentityIsExact) {
  const Image img = random_image(2, 17, 23);
  EXPECT_EQ(resize(img, 17, 23), img);
}

TEST(Resize, CheckerboardAveragesToHalf) {
  Image img(2, 2);
  for (int c = 0; c < 3; ++c) img.at(0, 1, c) = img.at(1, 0, c) = 1.0;
  EXPECT_DOUBLE_EQ(resize(img, 1, 1).at(0, 0, 0), 0.5);
}

TEST(Resize, UpDownRoundTripBounded) {
  const Image img = synthetic_scene(1, 224, 224).image;
  const Image back = resize(resize(img, 640, 640), 224, 224);
  EXPECT_TRUE(back.in_unit_range());
  EXPECT_LE(max_abs_diff(img, back), 0.1);
  EXPECT_LE(mean_abs_diff(img, back), 0.005);
}

TEST(Resize, RejectsNonPositiveSize) {
  EXPECT_THROW(resize(Image(4, 4), 0, 3), DomainError);
  EXPECT_THROW(resize(Image(4, 4), 3, -1), DomainError);
}

TEST(Resize, BackwardIsAdjoint) {
  // <resize(x), g> == <x, resize^T(g)> for the linear map x -> resize_region(x)
  const Image x = random_image(4, 31, 29);
  const CropRegion r{3, 5, 20, 17};
  const Image g = random_image(5, 11, 13);
  const Image y = resize_region(x, r, 11, 13);
  Image gx(31, 29, 0.0);
  resize_region_backward(g, r, gx);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y.values()[i] * g.values()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.values()[i] * gx.values()[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Crop, FullAndSinglePixel) {
  const Image img = random_image(6, 9, 7);
  EXPECT_EQ(crop(img, full_region(img)), img);
  const Image px = crop(img, {4, 2, 1, 1});
  for (int c = 0; c < 3; ++c) EXPECT_EQ(px.at(0, 0, c), img.at(4, 2, c));
}

TEST(Crop, Composes) {
  const Image img = random_image(7, 30, 40);
  const CropRegion a{3, 4, 20, 25}, b{2, 6, 10, 12};
  EXPECT_EQ(crop(crop(img, a), b), crop(img, compose(a, b)));
}

TEST(Crop, OutOfBoundsNamesRegionAndImage) {
  try {
    crop(Image(10, 10), {5, 5, 6, 2});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("10x10"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("height=6"), std::string::npos);
  }
}

TEST(RandomCrop, FullScaleGivesFullImage) {
  Rng rng(1);
  CropSampling s;
  s.scale_min = s.scale_max = 1.0;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_random_crop_region(50, 70, rng, s), (CropRegion{0, 0, 50, 70}));
}

TEST(RandomCrop, SeedDeterminism) {
  Rng a(77), b(77);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_random_crop_region(224, 300, a), sample_random_crop_region(224, 300, b));
  const Image img = random_image(1, 64, 64);
  Rng c(3), d(3);
  EXPECT_EQ(sample_random_crop(img, c).second, sample_random_crop(img, d).second);
}

TEST(RandomCrop, AreaAndAspectWithinBounds) {
  Rng rng(123);
  const CropSampling s;
  const int h = 224, w = 224;
  for (int i = 0; i < 10000; ++i) {
    const CropRegion r = sample_random_crop_region(h, w, rng, s);
    ASSERT_TRUE(region_inside(r, h, w));
    const double frac = static_cast<double>(r.area()) / (h * w);
    ASSERT_GE(frac, 0.5);
    ASSERT_LE(frac, 1.0);
    if (r.area() != h * w) {
      const double ratio = static_cast<double>(r.width) / r.height;
      ASSERT_GE(ratio, s.ratio_min - 1e-12);
      ASSERT_LE(ratio, s.ratio_max + 1e-12);
    }
  }
}

TEST(RandomCrop, Errors) {
  Rng rng(1);
  CropSampling s;
  s.scale_min = 0.0;
  EXPECT_THROW(sample_random_crop_region(10, 10, rng, s), DomainError);
  s.scale_min = 0.6;
  s.scale_max = 0.5;
  EXPECT_THROW(sample_random_crop_region(10, 10, rng, s), DomainError);
  s.scale_min = s.scale_max = 0.001;
  EXPECT_THROW(sample_random_crop_region(10, 10, rng, s), DomainError);
}

TEST(Jpeg, ShapeRangeAndQualityOrdering) {
  const Image img = synthetic_scene(2, 160, 200).image;
  const Image q100 = jpeg_roundtrip(img, 100);
  EXPECT_EQ(q100.height(), 160);
  EXPECT_EQ(q100.width(), 200);
  EXPECT_TRUE(q100.in_unit_range());
  EXPECT_LT(mean_abs_diff(img, q100), 0.02);
  EXPECT_GE(mean_abs_diff(img, jpeg_roundtrip(img, 30)), mean_abs_diff(img, jpeg_roundtrip(img, 90)));
}

TEST(Jpeg, QualityRange) {
  EXPECT_THROW(jpeg_roundtrip(Image(8, 8), 0), DomainError);
  EXPECT_THROW(jpeg_roundtrip(Image(8, 8), 101), DomainError);
}

TEST(Blur, ZeroRadiusIsIdentity) {
  const Image img = random_image(8, 20, 30);
  EXPECT_EQ(gaussian_blur(img, 0.0), img);
}

TEST(Blur, ConstantUnchanged) {
  const Image img(25, 19, 0.37);
  for (double r : {0.5, 1.0, 2.5, 8.0}) EXPECT_LT(max_abs_diff(gaussian_blur(img, r), img), 1e-12);
}

TEST(Blur, PreservesMeanAndRange) {
  const Image img = random_image(9, 64, 48);
  for (double r : {0.7, 1.0, 3.0}) {
    const Image b = gaussian_blur(img, r);
    EXPECT_TRUE(b.in_unit_range());
    EXPECT_NEAR(sum(b) / b.size(), sum(img) / img.size(), 1e-6);
    EXPECT_NEAR(sum(b), sum(img), 1e-5 * sum(img));
  }
}

TEST(Blur, NegativeRadius) { EXPECT_THROW(gaussian_blur(Image(4, 4), -1.0), DomainError); }

TEST(ContentHash, DependsOnQuantisedPixelsAndShape) {
  const Image a = random_image(10, 8, 8);
  Image b = a;
  b.at(0, 0, 0) = std::min(1.0, b.at(0, 0, 0) + 1e-6);
  EXPECT_EQ(content_hash(a), content_hash(quantize_8bit(a)));
  EXPECT_EQ(content_hash(a).size(), 16u);
  Image c = a;
  c.at(3, 3, 2) = c.at(3, 3, 2) > 0.5 ? 0.0 : 1.0;
  EXPECT_NE(content_hash(a), content_hash(c));
  EXPECT_NE(content_hash(Image(4, 16, 0.2)), content_hash(Image(16, 4, 0.2)));
}

TEST(Image, RejectsBadShapes) {
  EXPECT_THROW(Image(0, 3), DomainError);
  EXPECT_THROW(Image(2, 2, std::vector<double>(5)), DomainError);
}

}  // namespace
