#include "geoshield/gnfd.hpp"

#include <algorithm>
#include <utility>

#include "geoshield/errors.hpp"
#include "geoshield/text.hpp"

namespace geoshield {

GeoFilteredDescription request_nongeo_description(AuxiliaryVlmClient& client, const Image& img,
                                                  ResponseCache* cache,
                                                  const PromptTemplate& prompt) {
  const std::string key = cache_key("describe", prompt.id, img);
  if (cache) {
    if (auto hit = cache->get(key); hit && hit->contains("text")) {
      return {(*hit)["text"].get<std::string>(), ResponseSource::kCached, prompt.id};
    }
  }
  std::string text = client.describe_nongeo(img, prompt);
  if (tokenize(text).empty())
    throw ProtocolError("auxiliary VLM returned an empty description (" + client.version() + ")");
  if (cache) cache->put(key, {{"text", text}, {"prompt_id", prompt.id}, {"client", client.version()}});
  return {std::move(text), client.source_kind(), prompt.id};
}

std::vector<std::string> find_geo_terms(const std::string& text,
                                        const std::vector<std::string>& stoplist) {
  const auto tokens = tokenize(text);
  std::vector<std::string> found;
  for (const auto& entry : stoplist) {
    const auto needle = tokenize(entry);
    if (needle.empty() || needle.size() > tokens.size()) continue;
    for (std::size_t i = 0; i + needle.size() <= tokens.size(); ++i) {
      if (std::equal(needle.begin(), needle.end(), tokens.begin() + static_cast<long>(i))) {
        found.push_back(entry);
        break;
      }
    }
  }
  return found;
}

FeatureVector nongeo_feature(const EncoderPair& pair, const GeoFilteredDescription& desc,
                             FeatureMode mode) {
  FeatureVector t = encode_text(pair, desc.text);
  return mode == FeatureMode::kNormalized ? t.normalized() : t;
}

FeatureVector geo_feature(const FeatureVector& image_feature, const FeatureVector& z_non_geo,
                          FeatureMode mode) {
  FeatureVector diff = mode == FeatureMode::kNormalized
                           ? image_feature.normalized() - z_non_geo.normalized()
                           : image_feature - z_non_geo;
  if (!(diff.norm() >= 1e-8))
    throw DegenerateDecompositionError(
        "image feature coincides with its non-geographic component; no geographic direction left");
  return diff.normalized();
}

FeatureVector per_iteration_geo_target(const EncoderPair& pair, const Image& clean,
                                       const CropRegion& region, const FeatureVector& z_non_geo,
                                       FeatureMode mode) {
  return geo_feature(encode_region(pair, clean, region), z_non_geo, mode);
}

const PairTargets& GeoFeatureBundle::for_pair(const std::string& pair_id) const {
  for (const auto& p : pairs)
    if (p.pair_id == pair_id) return p;
  throw ContractError("geo feature bundle has no entry for encoder pair '" + pair_id + "'");
}

PairTargets& GeoFeatureBundle::for_pair(const std::string& pair_id) {
  return const_cast<PairTargets&>(std::as_const(*this).for_pair(pair_id));
}

GeoFeatureBundle build_geo_bundle(const EncoderEnsemble& ensemble, const Image& clean,
                                  const GeoFilteredDescription& desc, FeatureMode mode) {
  GeoFeatureBundle bundle;
  bundle.mode = mode;
  for (const auto& pair : ensemble.pairs()) {
    PairTargets t;
    t.pair_id = pair->id();
    t.z_non_geo = nongeo_feature(*pair, desc, mode);
    t.z_geo = geo_feature(encode_image(*pair, clean), t.z_non_geo, mode);
    bundle.pairs.push_back(std::move(t));
  }
  return bundle;
}

}  // namespace geoshield
