#pragma once

#include <cstdint>
#include <vector>

#include "geoshield/image.hpp"

namespace geoshield {

/// Procedural street-like scene for offline demos and tests: sky and ground
/// gradients, a few rectangular "landmarks", a disc, and pixel noise.
struct SyntheticScene {
  Image image;
  std::vector<CropRegion> landmarks;
};

SyntheticScene synthetic_scene(std::uint64_t seed, int height, int width);

}  // namespace geoshield
