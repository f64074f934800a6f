#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "geoshield/image.hpp"
#include "json.hpp"

namespace geoshield {

/// Versioned prompt text sent to a VLM.
struct PromptTemplate {
  std::string id;
  std::string text;
};

PromptTemplate default_nongeo_prompt();
PromptTemplate default_entity_prompt();
PromptTemplate default_geolocation_prompt();
/// Reads {"id": ..., "text": ...}.
PromptTemplate load_prompt_template(const std::filesystem::path& path);

enum class ResponseSource { kLive, kCached, kFixture };
std::string to_string(ResponseSource s);

/// Remote HTTP endpoint accepting and returning JSON. The bearer token, if
/// any, is read from the environment variable named by token_env.
struct HttpEndpoint {
  std::string url;  // scheme://host[:port][/base-path]
  std::string token_env;
  int timeout_seconds = 60;
  int max_attempts = 3;
  int backoff_ms = 500;
};

/// POSTs `body` to endpoint.url + path and parses the JSON reply. Connection
/// failures, timeouts and 429/5xx statuses are retried with exponential
/// backoff and finally raise TransportError; other non-2xx statuses and
/// unparsable bodies raise ProtocolError.
nlohmann::json post_json(const HttpEndpoint& endpoint, const std::string& path,
                         const nlohmann::json& body);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// The auxiliary VLM consulted while building protection targets.
class AuxiliaryVlmClient {
 public:
  virtual ~AuxiliaryVlmClient() = default;
  virtual std::string describe_nongeo(const Image& img, const PromptTemplate& prompt) = 0;
  virtual std::vector<std::string> list_geo_entities(const Image& img,
                                                     const PromptTemplate& prompt) = 0;
  virtual ResponseSource source_kind() const = 0;
  /// Recorded in run manifests.
  virtual std::string version() const = 0;
};

/// Replays answers from `<dir>/index.json`:
///   {"<content_hash>": {"description": "...", "entities": ["...", ...]}, "*": {...}}
/// The "*" entry, when present, answers for images without their own entry.
class FixtureVlmClient final : public AuxiliaryVlmClient {
 public:
  explicit FixtureVlmClient(const std::filesystem::path& dir);
  explicit FixtureVlmClient(nlohmann::json index, std::string label = "inline");

  std::string describe_nongeo(const Image& img, const PromptTemplate& prompt) override;
  std::vector<std::string> list_geo_entities(const Image& img, const PromptTemplate& prompt) override;
  ResponseSource source_kind() const override { return ResponseSource::kFixture; }
  std::string version() const override { return "fixture:" + label_; }

  int calls() const noexcept { return calls_.load(); }

 private:
  const nlohmann::json& entry_for(const Image& img) const;
  nlohmann::json index_;
  std::string label_;
  std::atomic<int> calls_{0};
};

/// JSON-over-HTTP client. Wire format (both requests):
///   POST {url}/describe  {"prompt_id", "prompt", "image_png_base64"} -> {"text": "..."}
///   POST {url}/entities  {"prompt_id", "prompt", "image_png_base64"} -> {"entities": ["...", ...]}
class HttpVlmClient final : public AuxiliaryVlmClient {
 public:
  explicit HttpVlmClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

  std::string describe_nongeo(const Image& img, const PromptTemplate& prompt) override;
  std::vector<std::string> list_geo_entities(const Image& img, const PromptTemplate& prompt) override;
  ResponseSource source_kind() const override { return ResponseSource::kLive; }
  std::string version() const override { return "http:" + endpoint_.url; }

 private:
  HttpEndpoint endpoint_;
};

/// Content-addressed response store. With a directory every entry is one
/// JSON file `<key>.json`; without one it is in-memory only. Lookups may run
/// concurrently; writes are serialised.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, const nlohmann::json& value);

 private:
  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mutex_;
  std::map<std::string, nlohmann::json> memory_;
};

std::string cache_key(const std::string& kind, const std::string& prompt_id, const Image& img);

}  // namespace geoshield
