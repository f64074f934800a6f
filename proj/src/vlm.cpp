#include "geoshield/vlm.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <openssl/evp.h>

#include "httplib.h"

#include "geoshield/errors.hpp"

namespace geoshield {

PromptTemplate default_nongeo_prompt() {
  return {"nongeo-v1",
          "Describe this image in detail: the objects, people, colours, weather, lighting, "
          "activities and overall scene. Exclude any geographical clues such as place names, "
          "landmarks, street or shop signs, languages, or city/country identifiers."};
}

PromptTemplate default_entity_prompt() {
  return {"entities-v1",
          "List the objects or landmarks in this image that could reveal where it was taken "
          "(for example architecture styles, towers, signage, vegetation, vehicles). Answer with "
          "a JSON array of short names."};
}

PromptTemplate default_geolocation_prompt() {
  return {"geolocate-v1",
          "Where was this photo taken? Answer with the latitude and longitude in decimal "
          "degrees, formatted as: latitude, longitude"};
}

PromptTemplate load_prompt_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt template: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return {j.at("id").get<std::string>(), j.at("text").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid prompt template " + path.string() + ": " + e.what());
  }
}

std::string to_string(ResponseSource s) {
  switch (s) {
    case ResponseSource::kLive: return "live-vlm";
    case ResponseSource::kCached: return "cached";
    case ResponseSource::kFixture: return "fixture";
  }
  return "unknown";
}

// ---- base64 ----------------------------------------------------------------

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("invalid base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// ---- HTTP ------------------------------------------------------------------

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw DomainError("invalid endpoint URL: " + url);
  std::string base = m[2].matched ? m[2].str() : std::string();
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {m[1].str(), base};
}

bool retriable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

nlohmann::json post_json(const HttpEndpoint& endpoint, const std::string& path,
                         const nlohmann::json& body) {
  const ParsedUrl url = parse_url(endpoint.url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(endpoint.timeout_seconds, 0);
  client.set_read_timeout(endpoint.timeout_seconds, 0);
  client.set_write_timeout(endpoint.timeout_seconds, 0);
  httplib::Headers headers;
  if (!endpoint.token_env.empty()) {
    if (const char* token = std::getenv(endpoint.token_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  const std::string payload = body.dump();
  const int attempts = std::max(1, endpoint.max_attempts);
  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(endpoint.backoff_ms << (attempt - 1)));
    }
    auto res = client.Post(url.base_path + path, headers, payload, "application/json");
    if (!res) {
      last_error = "request to " + endpoint.url + path + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (retriable_status(res->status)) {
      last_error = endpoint.url + path + " answered HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw ProtocolError(endpoint.url + path + " answered HTTP " + std::to_string(res->status) +
                          ": " + res->body);
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError(endpoint.url + path + " returned a non-JSON body");
    }
  }
  throw TransportError(last_error);
}

// ---- fixture client ----------------------------------------------------------

FixtureVlmClient::FixtureVlmClient(const std::filesystem::path& dir) : label_(dir.string()) {
  const auto file = dir / "index.json";
  std::ifstream in(file);
  if (!in) throw IoError("fixture store has no index.json: " + dir.string());
  try {
    index_ = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid fixture index " + file.string() + ": " + e.what());
  }
  if (!index_.is_object()) throw ValidationError("fixture index must be a JSON object");
}

FixtureVlmClient::FixtureVlmClient(nlohmann::json index, std::string label)
    : index_(std::move(index)), label_(std::move(label)) {
  if (!index_.is_object()) throw ValidationError("fixture index must be a JSON object");
}

const nlohmann::json& FixtureVlmClient::entry_for(const Image& img) const {
  const std::string key = content_hash(img);
  if (auto it = index_.find(key); it != index_.end()) return *it;
  if (auto it = index_.find("*"); it != index_.end()) return *it;
  throw TransportError("fixture store has no entry for image " + key);
}

std::string FixtureVlmClient::describe_nongeo(const Image& img, const PromptTemplate&) {
  ++calls_;
  const auto& e = entry_for(img);
  return e.value("description", std::string());
}

std::vector<std::string> FixtureVlmClient::list_geo_entities(const Image& img,
                                                             const PromptTemplate&) {
  ++calls_;
  const auto& e = entry_for(img);
  if (!e.contains("entities")) return {};
  return e["entities"].get<std::vector<std::string>>();
}

// ---- HTTP client -------------------------------------------------------------

namespace {

nlohmann::json image_request(const Image& img, const PromptTemplate& prompt) {
  return {{"prompt_id", prompt.id},
          {"prompt", prompt.text},
          {"image_png_base64", base64_encode(encode_png(img))}};
}

}  // namespace

std::string HttpVlmClient::describe_nongeo(const Image& img, const PromptTemplate& prompt) {
  const auto reply = post_json(endpoint_, "/describe", image_request(img, prompt));
  if (!reply.contains("text") || !reply["text"].is_string())
    throw ProtocolError("describe reply lacks a 'text' string");
  return reply["text"].get<std::string>();
}

std::vector<std::string> HttpVlmClient::list_geo_entities(const Image& img,
                                                          const PromptTemplate& prompt) {
  const auto reply = post_json(endpoint_, "/entities", image_request(img, prompt));
  if (!reply.contains("entities") || !reply["entities"].is_array())
    throw ProtocolError("entities reply lacks an 'entities' array");
  std::vector<std::string> out;
  for (const auto& e : reply["entities"]) {
    if (!e.is_string()) throw ProtocolError("entities reply contains a non-string entry");
    out.push_back(e.get<std::string>());
  }
  return out;
}

// ---- cache -------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(*dir_, ec);
  if (ec) throw IoError("cannot create cache dir " + dir_->string() + ": " + ec.message());
}

std::optional<nlohmann::json> ResponseCache::get(const std::string& key) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (!dir_) return std::nullopt;
  std::ifstream in(*dir_ / (key + ".json"));
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;  // partial or foreign file; treat as a miss
  }
}

void ResponseCache::put(const std::string& key, const nlohmann::json& value) {
  std::lock_guard lock(mutex_);
  memory_[key] = value;
  if (!dir_) return;
  const auto final_path = *dir_ / (key + ".json");
  const auto tmp = *dir_ / (key + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry " + tmp.string());
    out << value.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, final_path);
}

std::string cache_key(const std::string& kind, const std::string& prompt_id, const Image& img) {
  return kind + "-" + prompt_id + "-" + content_hash(img);
}

}  // namespace geoshield
