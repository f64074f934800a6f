#pragma once

#include <string>
#include <vector>

#include "geoshield/encoder.hpp"
#include "geoshield/vlm.hpp"

namespace geoshield {

/// Image description with geographic clues left out.
struct GeoFilteredDescription {
  std::string text;
  ResponseSource source = ResponseSource::kLive;
  std::string prompt_id;
};

/// Asks the auxiliary VLM for a non-geographic description of img. With a
/// cache, a repeated request for the same image content is served without
/// calling the client. Empty answers raise ProtocolError.
GeoFilteredDescription request_nongeo_description(AuxiliaryVlmClient& client, const Image& img,
                                                  ResponseCache* cache = nullptr,
                                                  const PromptTemplate& prompt = default_nongeo_prompt());

/// Stoplist entries (case-insensitive words or phrases) found in text.
std::vector<std::string> find_geo_terms(const std::string& text,
                                        const std::vector<std::string>& stoplist);

/// How features enter the decomposition. kNormalized L2-normalises image and
/// text features before subtracting; kRaw subtracts raw features (ablation).
enum class FeatureMode { kNormalized, kRaw };

/// Text-side estimate of the non-geographic component for one pair.
FeatureVector nongeo_feature(const EncoderPair& pair, const GeoFilteredDescription& desc,
                             FeatureMode mode = FeatureMode::kNormalized);

/// normalize(image_feature - z_non_geo). Raises DegenerateDecompositionError
/// when the difference has norm below 1e-8.
FeatureVector geo_feature(const FeatureVector& image_feature, const FeatureVector& z_non_geo,
                          FeatureMode mode = FeatureMode::kNormalized);

/// Decomposition target for one iteration: the geographic component of the
/// clean image's `region`, the same region the iteration crops from the
/// perturbed image.
FeatureVector per_iteration_geo_target(const EncoderPair& pair, const Image& clean,
                                       const CropRegion& region, const FeatureVector& z_non_geo,
                                       FeatureMode mode = FeatureMode::kNormalized);

/// Targets for one encoder pair.
struct PairTargets {
  std::string pair_id;
  FeatureVector z_non_geo;
  FeatureVector z_geo;                // whole clean image
  std::vector<FeatureVector> boxes;   // geo-exposure box features, may be empty
};

struct GeoFeatureBundle {
  FeatureMode mode = FeatureMode::kNormalized;
  std::vector<PairTargets> pairs;  // ensemble order

  /// Throws ContractError when the bundle has no entry for the pair.
  const PairTargets& for_pair(const std::string& pair_id) const;
  PairTargets& for_pair(const std::string& pair_id);
};

/// z_non_geo and whole-image z_geo for every pair; boxes left empty.
GeoFeatureBundle build_geo_bundle(const EncoderEnsemble& ensemble, const Image& clean,
                                  const GeoFilteredDescription& desc,
                                  FeatureMode mode = FeatureMode::kNormalized);

}  // namespace geoshield
