#include "geoshield/geolocation.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "geoshield/errors.hpp"
#include "geoshield/text.hpp"

namespace geoshield {

namespace {

enum class Axis { kNone, kLat, kLon };

struct NumberToken {
  double value = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t suffix_end = 0;  // past any degree sign and hemisphere word
  Axis label = Axis::kNone;
  Axis hemisphere_axis = Axis::kNone;
  int hemisphere_sign = 1;
};

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

constexpr std::string_view kUnicodeMinus = "\xE2\x88\x92";
constexpr std::string_view kDegreeSign = "\xC2\xB0";
constexpr std::string_view kOrdinalSign = "\xC2\xBA";

Axis label_before(std::string_view text, std::size_t pos) {
  std::size_t i = pos;
  while (i > 0) {
    const char c = text[i - 1];
    if (c == ' ' || c == ':' || c == '=' || c == '"' || c == '\'' || c == '\t' || c == '(') --i;
    else break;
  }
  std::size_t j = i;
  while (j > 0 && is_alpha(text[j - 1])) --j;
  const std::string word = to_lower(text.substr(j, i - j));
  if (word == "lat" || word == "latitude") return Axis::kLat;
  if (word == "lon" || word == "lng" || word == "long" || word == "longitude") return Axis::kLon;
  return Axis::kNone;
}

std::string word_at(std::string_view text, std::size_t i) {
  std::size_t j = i;
  while (j < text.size() && is_alpha(text[j])) ++j;
  return to_lower(text.substr(i, j - i));
}

bool is_unit_word(const std::string& w) {
  return w == "n" || w == "s" || w == "e" || w == "w" || w == "north" || w == "south" ||
         w == "east" || w == "west" || w == "deg" || w == "degrees";
}

void read_hemisphere(std::string_view text, NumberToken& tok) {
  std::size_t i = tok.end;
  auto skip = [&] {
    for (;;) {
      if (i < text.size() && text[i] == ' ') ++i;
      else if (text.substr(i, 2) == kDegreeSign || text.substr(i, 2) == kOrdinalSign) i += 2;
      else break;
    }
  };
  skip();
  std::string w = word_at(text, i);
  if (w == "deg" || w == "degrees") {
    i += w.size();
    skip();
    w = word_at(text, i);
  }
  tok.suffix_end = i;
  if (w == "n" || w == "north") tok.hemisphere_axis = Axis::kLat;
  else if (w == "s" || w == "south") tok.hemisphere_axis = Axis::kLat, tok.hemisphere_sign = -1;
  else if (w == "e" || w == "east") tok.hemisphere_axis = Axis::kLon;
  else if (w == "w" || w == "west") tok.hemisphere_axis = Axis::kLon, tok.hemisphere_sign = -1;
  else return;
  tok.suffix_end = i + w.size();
}

std::vector<NumberToken> scan_numbers(std::string_view text) {
  std::vector<NumberToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    bool negative = false;
    std::size_t digits = i;
    if (text[i] == '-' || text[i] == '+') {
      negative = text[i] == '-';
      digits = i + 1;
    } else if (text.substr(i, kUnicodeMinus.size()) == kUnicodeMinus) {
      negative = true;
      digits = i + kUnicodeMinus.size();
    }
    const bool starts_number =
        digits < text.size() &&
        (is_digit(text[digits]) ||
         (text[digits] == '.' && digits + 1 < text.size() && is_digit(text[digits + 1])));
    const bool glued = start > 0 && (is_alpha(text[start - 1]) || is_digit(text[start - 1]) ||
                                     text[start - 1] == '.');
    if (!starts_number || glued) {
      ++i;
      continue;
    }
    double v = 0.0;
    const auto res = std::from_chars(text.data() + digits, text.data() + text.size(), v,
                                     std::chars_format::general);
    if (res.ec != std::errc()) {
      i = digits + 1;
      continue;
    }
    NumberToken tok;
    tok.value = negative ? -v : v;
    tok.begin = start;
    tok.end = static_cast<std::size_t>(res.ptr - text.data());
    if (const std::string w = word_at(text, tok.end); !w.empty() && !is_unit_word(w)) {
      i = tok.end + w.size();  // "12abc" is not a coordinate
      continue;
    }
    tok.label = label_before(text, start);
    read_hemisphere(text, tok);
    out.push_back(tok);
    i = tok.suffix_end;
  }
  return out;
}

double signed_value(const NumberToken& t) {
  if (t.hemisphere_axis == Axis::kNone) return t.value;
  return t.hemisphere_sign * std::abs(t.value);
}

Axis axis_of(const NumberToken& t) {
  return t.label != Axis::kNone ? t.label : t.hemisphere_axis;
}

bool only_separators(std::string_view gap) {
  for (char c : gap)
    if (!(c == ' ' || c == ',' || c == ';' || c == '/' || c == '\t' || c == '\n')) return false;
  return true;
}

std::optional<GeoCoordinate> make_checked(double lat, double lon) {
  try {
    return GeoCoordinate::make(lat, lon);
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

}  // namespace

std::optional<GeoCoordinate> parse_coordinates(std::string_view text) {
  const auto nums = scan_numbers(text);
  const NumberToken* lat = nullptr;
  const NumberToken* lon = nullptr;
  for (const auto& t : nums) {
    const Axis a = axis_of(t);
    if (a == Axis::kLat && !lat) lat = &t;
    if (a == Axis::kLon && !lon) lon = &t;
  }
  if (lat && lon) return make_checked(signed_value(*lat), signed_value(*lon));

  // Fall back to the first adjacent pair "a, b"; an identified axis on
  // either side fixes the order.
  for (std::size_t k = 0; k + 1 < nums.size(); ++k) {
    const auto& a = nums[k];
    const auto& b = nums[k + 1];
    if (b.label == Axis::kNone && !only_separators(text.substr(a.suffix_end, b.begin - a.suffix_end)))
      continue;
    if (axis_of(a) == Axis::kLon || axis_of(b) == Axis::kLat)
      return make_checked(signed_value(b), signed_value(a));
    return make_checked(signed_value(a), signed_value(b));
  }
  return std::nullopt;
}

std::string format_coordinates(const GeoCoordinate& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g, %.17g", c.lat(), c.lon());
  return buf;
}

// ---- clients -----------------------------------------------------------------

std::string HttpTargetVlmClient::geolocate(const std::string& image_id, const Image& img,
                                           const PromptTemplate& prompt) {
  const nlohmann::json body = {{"image_id", image_id},
                               {"prompt_id", prompt.id},
                               {"prompt", prompt.text},
                               {"image_png_base64", base64_encode(encode_png(img))}};
  const auto reply = post_json(endpoint_, "/geolocate", body);
  if (!reply.contains("text") || !reply["text"].is_string())
    throw ProtocolError("geolocate reply lacks a 'text' string");
  return reply["text"].get<std::string>();
}

FixtureTargetVlmClient::FixtureTargetVlmClient(const std::filesystem::path& jsonl,
                                               std::string model_id)
    : model_id_(std::move(model_id)) {
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot open target fixtures " + jsonl.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      responses_[rec.at("image_id").get<std::string>()] = rec.at("response").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

FixtureTargetVlmClient::FixtureTargetVlmClient(std::map<std::string, std::string> responses,
                                               std::string model_id)
    : responses_(std::move(responses)), model_id_(std::move(model_id)) {}

std::string FixtureTargetVlmClient::geolocate(const std::string& image_id, const Image&,
                                              const PromptTemplate&) {
  const auto it = responses_.find(image_id);
  if (it == responses_.end()) throw TransportError("no fixture response for '" + image_id + "'");
  return it->second;
}

GalleryGeolocator::GalleryGeolocator(EncoderPtr encoder, std::vector<Entry> gallery,
                                     double min_similarity)
    : encoder_(std::move(encoder)), min_similarity_(min_similarity) {
  if (!encoder_) throw DomainError("gallery geolocator needs an encoder");
  if (gallery.empty()) throw DomainError("gallery geolocator needs at least one reference image");
  for (const auto& e : gallery) {
    features_.push_back(encode_image(*encoder_, e.image).normalized());
    locations_.push_back(e.location);
  }
}

std::string GalleryGeolocator::geolocate(const std::string&, const Image& img, const PromptTemplate&) {
  const FeatureVector f = encode_image(*encoder_, img).normalized();
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const double s = dot(f, features_[i]);
    if (s > best_sim) best_sim = s, best = i;
  }
  if (best_sim < min_similarity_) return "I cannot determine the location of this image.";
  return format_coordinates(locations_[best]);
}

std::string GalleryGeolocator::model_id() const { return "gallery:" + encoder_->id(); }

GeoPrediction query_geolocation(TargetVlmClient& client, const std::string& image_id,
                                const Image& img, const PromptTemplate& prompt) {
  GeoPrediction p;
  p.image_id = image_id;
  p.model_id = client.model_id();
  p.raw_response = client.geolocate(image_id, img, prompt);
  p.predicted = parse_coordinates(p.raw_response);
  return p;
}

void write_predictions_jsonl(const std::vector<GeoPrediction>& predictions,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : predictions) {
    nlohmann::json rec = {{"image_id", p.image_id},
                          {"lat", nullptr},
                          {"lon", nullptr},
                          {"raw_response", p.raw_response},
                          {"model_id", p.model_id}};
    if (p.predicted) {
      rec["lat"] = p.predicted->lat();
      rec["lon"] = p.predicted->lon();
    }
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<GeoPrediction> read_predictions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path.string());
  std::vector<GeoPrediction> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      GeoPrediction p;
      p.image_id = rec.at("image_id").get<std::string>();
      p.raw_response = rec.value("raw_response", std::string());
      p.model_id = rec.value("model_id", std::string());
      const auto lat = rec.find("lat");
      const auto lon = rec.find("lon");
      const bool has_lat = lat != rec.end() && !lat->is_null();
      const bool has_lon = lon != rec.end() && !lon->is_null();
      if (has_lat != has_lon) throw ValidationError("lat and lon must both be set or both null");
      if (has_lat) p.predicted = GeoCoordinate::make(lat->get<double>(), lon->get<double>());
      else if (!p.raw_response.empty()) p.predicted = parse_coordinates(p.raw_response);
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DomainError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace geoshield
