#include "geoshield/geo_ee.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "geoshield/errors.hpp"
#include "geoshield/text.hpp"

namespace geoshield {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

RawDetection raw_from_json(const nlohmann::json& j) {
  RawDetection d;
  d.top = j.at("top").get<double>();
  d.left = j.at("left").get<double>();
  d.height = j.at("height").get<double>();
  d.width = j.at("width").get<double>();
  d.label = j.value("label", std::string());
  d.score = j.at("score").get<double>();
  return d;
}

std::vector<RawDetection> raws_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw ProtocolError("detections must be a JSON array");
  std::vector<RawDetection> out;
  try {
    for (const auto& j : arr) out.push_back(raw_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed detection record: ") + e.what());
  }
  return out;
}

}  // namespace

MockDetector::MockDetector(const std::filesystem::path& file) : label_(file.string()) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open mock detector table: " + file.string());
  try {
    table_ = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid mock detector table " + file.string() + ": " + e.what());
  }
  if (!table_.is_object()) throw ValidationError("mock detector table must be a JSON object");
}

MockDetector::MockDetector(nlohmann::json table, std::string label)
    : table_(std::move(table)), label_(std::move(label)) {
  if (!table_.is_object()) throw ValidationError("mock detector table must be a JSON object");
}

std::vector<RawDetection> MockDetector::detect(const Image& img, const std::vector<std::string>&) {
  ++calls_;
  const std::string key = content_hash(img);
  if (auto it = table_.find(key); it != table_.end()) return raws_from_json(*it);
  if (auto it = table_.find("*"); it != table_.end()) return raws_from_json(*it);
  return {};
}

std::vector<RawDetection> HttpDetector::detect(const Image& img,
                                               const std::vector<std::string>& prompts) {
  const nlohmann::json body = {{"prompts", prompts},
                               {"image_png_base64", base64_encode(encode_png(img))}};
  const auto reply = post_json(endpoint_, "/detect", body);
  if (!reply.contains("boxes")) throw ProtocolError("detector reply lacks 'boxes'");
  return raws_from_json(reply["boxes"]);
}

std::vector<GeoEntity> identify_geo_entities(AuxiliaryVlmClient& client, const Image& img,
                                             ResponseCache* cache, const PromptTemplate& prompt) {
  const std::string key = cache_key("entities", prompt.id, img);
  std::vector<std::string> names;
  bool hit = false;
  if (cache) {
    if (auto cached = cache->get(key); cached && cached->contains("entities")) {
      names = (*cached)["entities"].get<std::vector<std::string>>();
      hit = true;
    }
  }
  if (!hit) {
    names = client.list_geo_entities(img, prompt);
    if (cache)
      cache->put(key, {{"entities", names}, {"prompt_id", prompt.id}, {"client", client.version()}});
  }

  std::vector<GeoEntity> out;
  std::set<std::string> seen;
  for (const auto& raw : names) {
    std::string name = trim(raw);
    if (name.empty()) continue;
    if (!seen.insert(to_lower(name)).second) continue;
    out.push_back({std::move(name), std::nullopt});
  }
  return out;
}

double iou(const CropRegion& a, const CropRegion& b) {
  const int top = std::max(a.top, b.top);
  const int left = std::max(a.left, b.left);
  const int bottom = std::min(a.bottom(), b.bottom());
  const int right = std::min(a.right(), b.right());
  if (bottom <= top || right <= left) return 0.0;
  const double inter = static_cast<double>(bottom - top) * (right - left);
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

DetectionResult detect_boxes(DetectorClient& detector, const Image& img,
                             const std::vector<GeoEntity>& entities, const DetectionConfig& config) {
  DetectionResult result;
  if (entities.empty()) return result;

  std::vector<std::string> prompts;
  for (const auto& e : entities) prompts.push_back(e.name);
  const auto raws = detector.detect(img, prompts);

  std::vector<BoundingBox> candidates;
  for (const auto& d : raws) {
    if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0) {
      result.warnings.push_back("dropped detection '" + d.label + "' with invalid score");
      continue;
    }
    if (d.score < config.score_threshold) continue;
    if (!std::isfinite(d.top) || !std::isfinite(d.left) || !std::isfinite(d.height) ||
        !std::isfinite(d.width) || d.height <= 0.0 || d.width <= 0.0) {
      result.warnings.push_back("dropped detection '" + d.label + "' with malformed geometry");
      continue;
    }
    const double top = std::floor(d.top);
    const double left = std::floor(d.left);
    const double bottom = std::ceil(d.top + d.height);
    const double right = std::ceil(d.left + d.width);
    const int ct = static_cast<int>(std::clamp(top, 0.0, static_cast<double>(img.height())));
    const int cl = static_cast<int>(std::clamp(left, 0.0, static_cast<double>(img.width())));
    const int cb = static_cast<int>(std::clamp(bottom, 0.0, static_cast<double>(img.height())));
    const int cr = static_cast<int>(std::clamp(right, 0.0, static_cast<double>(img.width())));
    if (cb <= ct || cr <= cl) {
      result.warnings.push_back("dropped detection '" + d.label + "' lying outside the image");
      continue;
    }
    if (ct != top || cl != left || cb != bottom || cr != right)
      result.warnings.push_back("clipped detection '" + d.label + "' to image bounds");

    GeoEntity entity{d.label, std::nullopt};
    for (const auto& e : entities)
      if (to_lower(e.name) == to_lower(d.label)) entity = e;
    candidates.push_back({{ct, cl, cb - ct, cr - cl}, std::move(entity), d.score});
  }

  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const BoundingBox& a, const BoundingBox& b) { return a.score > b.score; });
  for (auto& c : candidates) {
    const bool duplicate = std::any_of(result.boxes.begin(), result.boxes.end(), [&](const auto& k) {
      return iou(k.region, c.region) >= config.iou_merge;
    });
    if (duplicate) continue;
    if (static_cast<int>(result.boxes.size()) >= config.max_boxes) break;
    result.boxes.push_back(std::move(c));
  }
  return result;
}

BoxFeatureTable box_features(const EncoderEnsemble& ensemble, const Image& img,
                             const std::vector<BoundingBox>& boxes, const DetectionConfig& config) {
  BoxFeatureTable table;
  table.features.resize(ensemble.size());
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    CropRegion r = boxes[k].region;
    if (!region_inside(r, img.height(), img.width()))
      throw DomainError("box_features: box " + to_string(r) + " is outside the image");
    if (config.padding > 0) {
      const int top = std::max(0, r.top - config.padding);
      const int left = std::max(0, r.left - config.padding);
      const int bottom = std::min(img.height(), r.bottom() + config.padding);
      const int right = std::min(img.width(), r.right() + config.padding);
      r = {top, left, bottom - top, right - left};
    }
    if (r.height < config.min_side || r.width < config.min_side) {
      table.warnings.push_back("skipped box '" + boxes[k].entity.name + "' " + to_string(r) +
                               ": smaller than " + std::to_string(config.min_side) + " px");
      continue;
    }
    table.used_boxes.push_back(k);
    for (std::size_t i = 0; i < ensemble.size(); ++i)
      table.features[i].push_back(encode_region(ensemble[i], img, r).normalized());
  }
  return table;
}

void attach_box_features(GeoFeatureBundle& bundle, const EncoderEnsemble& ensemble,
                         const BoxFeatureTable& table) {
  if (table.features.size() != ensemble.size())
    throw ContractError("box feature table does not match the ensemble size");
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    bundle.for_pair(ensemble[i].id()).boxes = table.features[i];
  }
}

CropRegion scale_region(const CropRegion& r, int from_h, int from_w, int to_h, int to_w) {
  if (from_h <= 0 || from_w <= 0 || to_h <= 0 || to_w <= 0)
    throw DomainError("scale_region: dimensions must be positive");
  const double sy = static_cast<double>(to_h) / from_h;
  const double sx = static_cast<double>(to_w) / from_w;
  const int top = std::clamp(static_cast<int>(std::floor(r.top * sy)), 0, to_h - 1);
  const int left = std::clamp(static_cast<int>(std::floor(r.left * sx)), 0, to_w - 1);
  const int bottom = std::clamp(static_cast<int>(std::ceil(r.bottom() * sy)), top + 1, to_h);
  const int right = std::clamp(static_cast<int>(std::ceil(r.right() * sx)), left + 1, to_w);
  return {top, left, bottom - top, right - left};
}

}  // namespace geoshield
