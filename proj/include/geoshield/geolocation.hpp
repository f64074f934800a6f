#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geoshield/encoder.hpp"
#include "geoshield/geo_metrics.hpp"
#include "geoshield/vlm.hpp"

namespace geoshield {

/// A target model's answer for one image. `predicted` is empty for a refusal
/// (no parsable coordinate in raw_response).
struct GeoPrediction {
  std::string image_id;
  std::optional<GeoCoordinate> predicted;
  std::string raw_response;
  std::string model_id;

  bool refused() const noexcept { return !predicted.has_value(); }
};

/// Extracts one decimal-degree coordinate from free text. Accepts plain
/// "lat, lon" pairs, labelled values (lat/latitude, lon/lng/long/longitude),
/// signed decimals with exponents and N/S/E/W (or North/South/...) suffixes.
/// Returns nullopt when nothing usable is found or the values are out of range.
std::optional<GeoCoordinate> parse_coordinates(std::string_view text);

/// "lat, lon" with enough digits that parse_coordinates restores the exact
/// doubles.
std::string format_coordinates(const GeoCoordinate& c);

/// The geolocation model under evaluation.
class TargetVlmClient {
 public:
  virtual ~TargetVlmClient() = default;
  /// Free-text answer to the geolocation prompt.
  virtual std::string geolocate(const std::string& image_id, const Image& img,
                                const PromptTemplate& prompt) = 0;
  virtual std::string model_id() const = 0;
};

/// POST {url}/geolocate {"prompt_id", "prompt", "image_png_base64"} -> {"text": "..."}
class HttpTargetVlmClient final : public TargetVlmClient {
 public:
  HttpTargetVlmClient(HttpEndpoint endpoint, std::string model_id)
      : endpoint_(std::move(endpoint)), model_id_(std::move(model_id)) {}

  std::string geolocate(const std::string& image_id, const Image& img,
                        const PromptTemplate& prompt) override;
  std::string model_id() const override { return model_id_; }

 private:
  HttpEndpoint endpoint_;
  std::string model_id_;
};

/// Canned answers keyed by image id, read from JSONL lines
/// {"image_id": ..., "response": ...}. Unknown ids raise TransportError.
class FixtureTargetVlmClient final : public TargetVlmClient {
 public:
  explicit FixtureTargetVlmClient(const std::filesystem::path& jsonl,
                                  std::string model_id = "fixture-target");
  FixtureTargetVlmClient(std::map<std::string, std::string> responses, std::string model_id);

  std::string geolocate(const std::string& image_id, const Image& img,
                        const PromptTemplate& prompt) override;
  std::string model_id() const override { return model_id_; }

 private:
  std::map<std::string, std::string> responses_;
  std::string model_id_;
};

/// Offline stand-in for a geolocating model: answers with the coordinate of
/// the most similar reference image under one encoder, or refuses when the
/// best cosine similarity is below min_similarity.
class GalleryGeolocator final : public TargetVlmClient {
 public:
  struct Entry {
    Image image;
    GeoCoordinate location;
  };
  GalleryGeolocator(EncoderPtr encoder, std::vector<Entry> gallery, double min_similarity = 0.0);

  std::string geolocate(const std::string& image_id, const Image& img,
                        const PromptTemplate& prompt) override;
  std::string model_id() const override;

 private:
  EncoderPtr encoder_;
  std::vector<FeatureVector> features_;
  std::vector<GeoCoordinate> locations_;
  double min_similarity_;
};

/// Sends the prompt and parses the answer. Transport failures propagate;
/// an unparsable answer is a refusal.
GeoPrediction query_geolocation(TargetVlmClient& client, const std::string& image_id,
                                const Image& img,
                                const PromptTemplate& prompt = default_geolocation_prompt());

/// JSONL: {"image_id", "lat", "lon", "raw_response", "model_id"} with lat/lon
/// null for refusals.
void write_predictions_jsonl(const std::vector<GeoPrediction>& predictions,
                             const std::filesystem::path& path);
std::vector<GeoPrediction> read_predictions_jsonl(const std::filesystem::path& path);

}  // namespace geoshield
