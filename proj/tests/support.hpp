#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "geoshield/encoder.hpp"
#include "geoshield/geo_ee.hpp"
#include "geoshield/gnfd.hpp"
#include "geoshield/psae.hpp"
#include "geoshield/random.hpp"
#include "geoshield/synthetic.hpp"

namespace geoshield::test_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("geoshield_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Image random_image(std::uint64_t seed, int h, int w) {
  Rng rng(seed);
  Image img(h, w);
  for (double& v : img.values()) v = uniform01(rng);
  return img;
}

inline EncoderEnsemble toy_ensemble(int pairs = 2, int input_size = 224, int dim = 64) {
  std::vector<EncoderPtr> list;
  for (int i = 0; i < pairs; ++i) list.push_back(make_toy_encoder(11 + i, input_size, dim));
  return EncoderEnsemble(std::move(list));
}

inline GeoFilteredDescription fixture_description() {
  return {"a street with buildings, cars and people under a cloudy sky", ResponseSource::kFixture,
          "fixture"};
}

/// Whole-image targets plus one box per synthetic landmark.
inline GeoFeatureBundle fixture_bundle(const EncoderEnsemble& ens, const SyntheticScene& scene) {
  GeoFeatureBundle bundle = build_geo_bundle(ens, scene.image, fixture_description());
  std::vector<BoundingBox> boxes;
  for (const auto& r : scene.landmarks) boxes.push_back({r, {"tower", {}}, 0.9});
  attach_box_features(bundle, ens, box_features(ens, scene.image, boxes));
  return bundle;
}

/// Spherical law of cosines, written independently of the library.
inline double law_of_cosines_km(double lat1, double lon1, double lat2, double lon2) {
  const double d = std::numbers::pi / 180.0;
  const double c = std::sin(lat1 * d) * std::sin(lat2 * d) +
                   std::cos(lat1 * d) * std::cos(lat2 * d) * std::cos((lon2 - lon1) * d);
  return 6371.0 * std::acos(std::clamp(c, -1.0, 1.0));
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace geoshield::test_support

namespace geoshield::test_support {

/// Largest relative error between the analytic input gradient of `spec` and
/// central differences at `samples` random pixels.
inline double max_gradient_error(const EncoderEnsemble& ens, const LossSpec& spec, const Image& img,
                                 std::uint64_t seed, int samples = 16, double h = 1e-5) {
  const Image g = loss_input_gradient(ens, spec, img).gradient;
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < samples; ++k) {
    const int y = static_cast<int>(uniform_int(rng, 0, img.height() - 1));
    const int x = static_cast<int>(uniform_int(rng, 0, img.width() - 1));
    const int c = static_cast<int>(uniform_int(rng, 0, 2));
    Image p = img, m = img;
    p.at(y, x, c) += h;
    m.at(y, x, c) -= h;
    const double fd = (evaluate_loss(ens, spec, p).value - evaluate_loss(ens, spec, m).value) / (2 * h);
    worst = std::max(worst, relative_error(g.at(y, x, c), fd, 1e-9));
  }
  return worst;
}

/// x + uniform noise in [-a, a], clamped to [0, 1].
inline Image jitter(const Image& x, double a, std::uint64_t seed) {
  Rng rng(seed);
  Image out = x;
  for (double& v : out.values()) v = std::clamp(v + uniform_real(rng, -a, a), 0.0, 1.0);
  return out;
}

}  // namespace geoshield::test_support
