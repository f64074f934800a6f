#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "geoshield/encoder.hpp"
#include "geoshield/gnfd.hpp"
#include "geoshield/vlm.hpp"

namespace geoshield {

/// A named object or landmark that may reveal where an image was taken.
struct GeoEntity {
  std::string name;
  std::optional<double> confidence;
};

struct BoundingBox {
  CropRegion region;
  GeoEntity entity;
  double score = 0.0;
};

/// A detector answer before validation: floating-point pixel coordinates.
struct RawDetection {
  double top = 0.0;
  double left = 0.0;
  double height = 0.0;
  double width = 0.0;
  std::string label;
  double score = 0.0;
};

class DetectorClient {
 public:
  virtual ~DetectorClient() = default;
  virtual std::vector<RawDetection> detect(const Image& img,
                                           const std::vector<std::string>& prompts) = 0;
  virtual std::string version() const = 0;
};

/// Replays detections from a JSON object mapping content hash (or "*") to
/// [{"top", "left", "height", "width", "label", "score"}, ...].
class MockDetector final : public DetectorClient {
 public:
  explicit MockDetector(const std::filesystem::path& file);
  explicit MockDetector(nlohmann::json table, std::string label = "inline");

  std::vector<RawDetection> detect(const Image& img, const std::vector<std::string>& prompts) override;
  std::string version() const override { return "mock:" + label_; }
  int calls() const noexcept { return calls_.load(); }

 private:
  nlohmann::json table_;
  std::string label_;
  std::atomic<int> calls_{0};
};

/// POST {url}/detect {"prompts": [...], "image_png_base64"} -> {"boxes": [RawDetection...]}
class HttpDetector final : public DetectorClient {
 public:
  explicit HttpDetector(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<RawDetection> detect(const Image& img, const std::vector<std::string>& prompts) override;
  std::string version() const override { return "http:" + endpoint_.url; }

 private:
  HttpEndpoint endpoint_;
};

struct DetectionConfig {
  double score_threshold = 0.35;
  double iou_merge = 0.9;  // boxes with IoU >= this collapse onto the higher score
  int max_boxes = 8;
  int padding = 0;    // context pixels added around each box before encoding
  int min_side = 16;  // smaller boxes are skipped when encoding
};

/// Asks the auxiliary VLM for geo-revealing entities; names are trimmed and
/// deduplicated case-insensitively (first spelling wins). Cached like
/// descriptions.
std::vector<GeoEntity> identify_geo_entities(AuxiliaryVlmClient& client, const Image& img,
                                             ResponseCache* cache = nullptr,
                                             const PromptTemplate& prompt = default_entity_prompt());

struct DetectionResult {
  std::vector<BoundingBox> boxes;
  std::vector<std::string> warnings;
};

double iou(const CropRegion& a, const CropRegion& b);

/// Grounds entity names to boxes: clip to the image, drop low scores, merge
/// near-duplicates, keep at most max_boxes by score. No entities means no
/// detector call.
DetectionResult detect_boxes(DetectorClient& detector, const Image& img,
                             const std::vector<GeoEntity>& entities, const DetectionConfig& config = {});

struct BoxFeatureTable {
  std::vector<std::vector<FeatureVector>> features;  // [pair][box], unit norm
  std::vector<std::size_t> used_boxes;               // indices into the input list
  std::vector<std::string> warnings;
};

/// Encodes each box crop with every pair of the ensemble.
BoxFeatureTable box_features(const EncoderEnsemble& ensemble, const Image& img,
                             const std::vector<BoundingBox>& boxes, const DetectionConfig& config = {});

/// Copies per-pair box features into the bundle (ensemble order).
void attach_box_features(GeoFeatureBundle& bundle, const EncoderEnsemble& ensemble,
                         const BoxFeatureTable& table);

/// Maps a region between two resolutions of the same image, clipped to the
/// destination bounds.
CropRegion scale_region(const CropRegion& r, int from_h, int from_w, int to_h, int to_w);

}  // namespace geoshield
