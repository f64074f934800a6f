#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace geoshield {

/// Lower-cased runs of ASCII letters and digits; everything else separates.
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view text);

/// FNV-1a 64-bit over the bytes of `text`, starting from `basis`.
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace geoshield
