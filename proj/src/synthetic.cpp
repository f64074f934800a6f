#include "geoshield/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "geoshield/random.hpp"

namespace geoshield {

SyntheticScene synthetic_scene(std::uint64_t seed, int height, int width) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 17);
  SyntheticScene scene{Image(height, width), {}};
  Image& img = scene.image;

  std::array<double, 3> sky{}, ground{};
  for (int c = 0; c < 3; ++c) {
    sky[c] = uniform_real(rng, 0.45, 0.95);
    ground[c] = uniform_real(rng, 0.1, 0.6);
  }
  const double horizon = uniform_real(rng, 0.35, 0.65) * height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = static_cast<double>(y) / height;
      for (int c = 0; c < 3; ++c) {
        const double base = y < horizon ? sky[c] * (1.0 - 0.3 * t) : ground[c] * (0.7 + 0.3 * t);
        img.at(y, x, c) = base;
      }
    }
  }

  const int n_buildings = static_cast<int>(uniform_int(rng, 2, 4));
  for (int b = 0; b < n_buildings; ++b) {
    const int w = std::max(4, static_cast<int>(uniform_real(rng, 0.12, 0.3) * width));
    const int h = std::max(4, static_cast<int>(uniform_real(rng, 0.2, 0.5) * height));
    const int left = static_cast<int>(uniform_int(rng, 0, width - w));
    const int top = std::clamp(static_cast<int>(horizon) - h + static_cast<int>(0.1 * h), 0, height - h);
    std::array<double, 3> col{};
    for (double& v : col) v = uniform_real(rng, 0.05, 0.95);
    const int window = std::max(2, w / 8);
    for (int y = top; y < top + h; ++y)
      for (int x = left; x < left + w; ++x) {
        const bool lit = ((y - top) / window + (x - left) / window) % 3 == 0;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = lit ? std::min(1.0, col[c] + 0.25) : col[c];
      }
    scene.landmarks.push_back({top, left, h, w});
  }

  const double cy = uniform_real(rng, 0.05, 0.3) * height;
  const double cx = uniform_real(rng, 0.1, 0.9) * width;
  const double radius = uniform_real(rng, 0.04, 0.09) * std::min(height, width);
  std::array<double, 3> disc{};
  for (double& v : disc) v = uniform_real(rng, 0.6, 1.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = disc[c];

  for (double& v : img.values()) v = std::clamp(v + 0.04 * (uniform01(rng) - 0.5), 0.0, 1.0);
  return scene;
}

}  // namespace geoshield
