#include "geoshield/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "geoshield/errors.hpp"
#include "geoshield/random.hpp"
#include "geoshield/synthetic.hpp"
#include "geoshield/text.hpp"

namespace geoshield {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- dataset -----------------------------------------------------------------

DatasetManifest DatasetManifest::load(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot open manifest " + jsonl.string());
  const fs::path base = fs::absolute(jsonl).parent_path();
  DatasetManifest m;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = jsonl.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const json rec = json::parse(line);
      std::string id = rec.at("image_id").get<std::string>();
      if (id.empty()) throw ValidationError("empty image_id");
      if (!seen.insert(id).second) throw ValidationError("duplicate image_id '" + id + "'");
      fs::path p = rec.at("path").get<std::string>();
      if (p.is_relative()) p = base / p;
      m.records.push_back({std::move(id), p.lexically_normal(),
                           GeoCoordinate::make(rec.at("lat").get<double>(), rec.at("lon").get<double>())});
    } catch (const json::exception& e) {
      throw ValidationError(where + e.what());
    } catch (const DomainError& e) {
      throw ValidationError(where + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return m;
}

void DatasetManifest::save(const fs::path& jsonl) const {
  std::ofstream out(jsonl, std::ios::binary);
  if (!out) throw IoError("cannot write " + jsonl.string());
  const fs::path base = fs::absolute(jsonl).parent_path();
  for (const auto& r : records) {
    fs::path p = fs::absolute(r.path).lexically_normal();
    const fs::path rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") p = rel;
    out << json{{"image_id", r.image_id}, {"path", p.generic_string()}, {"lat", r.location.lat()},
                {"lon", r.location.lon()}}
               .dump()
        << '\n';
  }
}

const ManifestRecord* DatasetManifest::find(const std::string& image_id) const {
  for (const auto& r : records)
    if (r.image_id == image_id) return &r;
  return nullptr;
}

std::string safe_file_stem(const std::string& image_id) {
  std::string out = image_id;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

// ---- encoders ----------------------------------------------------------------

std::vector<EncoderSpec> load_encoder_registry(const fs::path& path) {
  const json j = read_json(path);
  const json& list = j.is_object() && j.contains("encoders") ? j["encoders"] : j;
  if (!list.is_array()) throw ValidationError(path.string() + ": expected an array of encoders");
  std::vector<EncoderSpec> out;
  for (const auto& e : list) {
    try {
      EncoderSpec s;
      s.id = e.value("id", std::string());
      s.kind = e.value("kind", std::string("toy"));
      s.seed = e.value("seed", std::uint64_t{0});
      s.weights_ref = e.value("weights_ref", std::string());
      s.input_size = e.value("input_size", 224);
      s.feature_dim = e.value("feature_dim", 64);
      out.push_back(std::move(s));
    } catch (const json::exception& ex) {
      throw ValidationError(path.string() + ": " + ex.what());
    }
  }
  if (out.empty()) throw ValidationError(path.string() + ": no encoders listed");
  return out;
}

EncoderEnsemble build_ensemble(const std::vector<EncoderSpec>& specs, const EncoderFactory& factory) {
  std::vector<EncoderPtr> pairs;
  for (const auto& s : specs) {
    EncoderPtr p;
    if (s.kind == "toy") {
      p = make_toy_encoder(s.seed, s.input_size, s.feature_dim);
    } else if (factory) {
      p = factory(s);
    } else {
      throw CapabilityError("encoder kind '" + s.kind + "' (" + s.id +
                            ") needs an adapter; load it through the Python bindings");
    }
    if (!p) throw CapabilityError("no encoder produced for '" + s.id + "'");
    if (p->feature_dim() != s.feature_dim)
      throw ContractError("encoder '" + s.id + "' has feature_dim " + std::to_string(p->feature_dim()) +
                          ", registry says " + std::to_string(s.feature_dim));
    pairs.push_back(std::move(p));
  }
  return EncoderEnsemble(std::move(pairs));
}

std::vector<EncoderSpec> default_encoder_specs() {
  return {{"toy-a", "toy", 11, "", 224, 64}, {"toy-b", "toy", 12, "", 224, 64}};
}

// ---- helpers -----------------------------------------------------------------

std::uint64_t image_seed(std::uint64_t base, std::size_t index) {
  return base ^ static_cast<std::uint64_t>(index);
}

Image load_working_image(const fs::path& path, int working_size) {
  Image img = load_image(path);
  if (working_size <= 0) return img;
  const int longer = std::max(img.height(), img.width());
  if (longer == working_size) return img;
  const double s = static_cast<double>(working_size) / longer;
  const int h = std::max(1, static_cast<int>(std::lround(img.height() * s)));
  const int w = std::max(1, static_cast<int>(std::lround(img.width() * s)));
  return resize(img, h, w);
}

Image quantize_within_budget(const Image& x, const Image& clean, double eps) {
  if (x.height() != clean.height() || x.width() != clean.width())
    throw ContractError("quantize_within_budget: shape mismatch");
  if (!(eps >= 1.0 / 255.0)) throw DomainError("quantize_within_budget: eps must be >= 1/255");
  Image out = x;
  auto o = out.values();
  const auto c = clean.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double lo = std::max(0.0, c[i] - eps), hi = std::min(1.0, c[i] + eps);
    double v = std::round(std::clamp(o[i], lo, hi) * 255.0);
    if (v / 255.0 > hi) v -= 1.0;
    if (v / 255.0 < lo) v += 1.0;
    o[i] = v / 255.0;
  }
  return out;
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string full_config_text(const ProtectOptions& o) {
  std::ostringstream s;
  s << to_config_text(o.attack);
  s << "working-size = " << o.working_size << '\n'
    << "feature-mode = " << (o.feature_mode == FeatureMode::kNormalized ? "normalized" : "raw") << '\n'
    << "score-threshold = " << o.detection.score_threshold << '\n'
    << "iou-merge = " << o.detection.iou_merge << '\n'
    << "max-boxes = " << o.detection.max_boxes << '\n'
    << "box-padding = " << o.detection.padding << '\n'
    << "min-box-side = " << o.detection.min_side << '\n';
  return s.str();
}

void validate_options(const ProtectOptions& o) {
  o.attack.validate();
  if (o.working_size < 0) throw DomainError("working_size must be >= 0");
  if (o.workers < 1) throw DomainError("workers must be >= 1");
  if (o.detection.max_boxes < 0) throw DomainError("max_boxes must be >= 0");
}

/// Patch size that fits the working image: the configured size clamped to
/// the shorter side.
AttackConfig fitted_config(const AttackConfig& base, const EncoderEnsemble& ensemble, const Image& img,
                           std::uint64_t seed, std::vector<std::string>& warnings) {
  AttackConfig cfg = base;
  cfg.seed = seed;
  const int wanted = cfg.patch_size > 0 ? cfg.patch_size : ensemble.max_input_size();
  const int fit = std::min({wanted, img.height(), img.width()});
  if (cfg.n_patch > 0 && fit < wanted)
    warnings.push_back("patch size reduced from " + std::to_string(wanted) + " to " +
                       std::to_string(fit) + " px to fit the image");
  cfg.patch_size = fit;
  return cfg;
}

double linf_distance(const Image& a, const Image& b) {
  double m = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

template <typename Fn>
void for_each_index(std::size_t n, int workers, Fn&& fn) {
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
  if (k <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < k; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

void write_trace(const AttackTrace& trace, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_trace_jsonl(trace, out);
  if (!out) throw IoError("failed writing " + path.string());
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

RunManifest start_manifest(const ProtectOptions& o, const EncoderEnsemble& ensemble) {
  RunManifest rm;
  rm.config_text = full_config_text(o);
  rm.prompts = {{"nongeo", o.nongeo_prompt.id}, {"entity", o.entity_prompt.id}};
  rm.seed = o.attack.seed;
  rm.working_size = o.working_size;
  for (const auto& p : ensemble.pairs()) rm.encoders.push_back(p->id());
  rm.config_hash = rm.compute_hash();
  return rm;
}

void finish_manifest(const RunManifest& rm, const fs::path& out_dir) {
  write_json(rm.to_json(), out_dir / "run_manifest.json");
  std::ofstream(out_dir / "config.txt", std::ios::binary) << rm.config_text;
  spdlog::info("{} of {} images processed, manifest {}", rm.n_ok(), rm.images.size(),
               (out_dir / "run_manifest.json").string());
}

}  // namespace

std::string RunManifest::compute_hash() const {
  std::string key = config_text;
  for (const auto& [k, v] : prompts) key += "prompt." + k + " = " + v + '\n';
  for (const auto& e : encoders) key += "encoder = " + e + '\n';
  return hex64(fnv1a64(key));
}

std::size_t RunManifest::n_ok() const {
  return static_cast<std::size_t>(
      std::count_if(images.begin(), images.end(), [](const ImageOutcome& o) { return o.ok; }));
}

json RunManifest::to_json() const {
  json imgs = json::array();
  for (const auto& o : images) {
    json j = {{"image_id", o.image_id}, {"status", o.ok ? "ok" : "failed"}, {"seed", o.seed}};
    if (!o.ok) {
      j["error"] = o.error;
    } else {
      j["output"] = o.output.filename().string();
      j["trace"] = o.trace.filename().string();
      j["height"] = o.height;
      j["width"] = o.width;
      j["boxes"] = o.boxes;
      j["geo_similarity_clean"] = opt_json(o.geo_similarity_clean);
      j["geo_similarity_protected"] = opt_json(o.geo_similarity_protected);
      j["nongeo_similarity_clean"] = opt_json(o.nongeo_similarity_clean);
      j["nongeo_similarity_protected"] = opt_json(o.nongeo_similarity_protected);
      j["linf"] = o.linf;
      j["final_loss"] = o.final_loss;
    }
    j["warnings"] = o.warnings;
    imgs.push_back(std::move(j));
  }
  return {{"config_text", config_text},
          {"config_hash", config_hash},
          {"seed", seed},
          {"working_size", working_size},
          {"encoders", encoders},
          {"prompts", prompts},
          {"clients", {{"vlm", vlm_version}, {"detector", detector_version}}},
          {"n_images", images.size()},
          {"n_ok", n_ok()},
          {"images", imgs}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest rm;
  try {
    rm.config_text = j.at("config_text").get<std::string>();
    rm.config_hash = j.at("config_hash").get<std::string>();
    rm.seed = j.at("seed").get<std::uint64_t>();
    rm.working_size = j.at("working_size").get<int>();
    rm.encoders = j.at("encoders").get<std::vector<std::string>>();
    rm.prompts = j.value("prompts", std::map<std::string, std::string>{});
    rm.vlm_version = j.at("clients").at("vlm").get<std::string>();
    rm.detector_version = j.at("clients").at("detector").get<std::string>();
    for (const auto& e : j.at("images")) {
      ImageOutcome o;
      o.image_id = e.at("image_id").get<std::string>();
      o.ok = e.at("status").get<std::string>() == "ok";
      o.seed = e.at("seed").get<std::uint64_t>();
      o.warnings = e.value("warnings", std::vector<std::string>{});
      if (!o.ok) {
        o.error = e.value("error", std::string());
      } else {
        o.output = e.at("output").get<std::string>();
        o.trace = e.at("trace").get<std::string>();
        o.height = e.at("height").get<int>();
        o.width = e.at("width").get<int>();
        o.boxes = e.at("boxes").get<std::size_t>();
        o.geo_similarity_clean = opt_from(e, "geo_similarity_clean");
        o.geo_similarity_protected = opt_from(e, "geo_similarity_protected");
        o.nongeo_similarity_clean = opt_from(e, "nongeo_similarity_clean");
        o.nongeo_similarity_protected = opt_from(e, "nongeo_similarity_protected");
        o.linf = e.at("linf").get<double>();
        o.final_loss = e.at("final_loss").get<double>();
      }
      rm.images.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run manifest: ") + e.what());
  }
  return rm;
}

// ---- protection --------------------------------------------------------------

RunManifest cli_protect(const DatasetManifest& manifest, const EncoderEnsemble& ensemble,
                        const ProtectOptions& options, const ProtectClients& clients,
                        const fs::path& out_dir) {
  validate_options(options);
  if (!clients.vlm) throw ContractError("cli_protect needs an auxiliary VLM client");
  fs::create_directories(out_dir);

  RunManifest rm = start_manifest(options, ensemble);
  rm.vlm_version = clients.vlm->version();
  rm.detector_version = clients.detector ? clients.detector->version() : "none";
  rm.images.resize(manifest.records.size());

  for_each_index(manifest.records.size(), options.workers, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    ImageOutcome& o = rm.images[i];
    o.image_id = rec.image_id;
    o.seed = image_seed(options.attack.seed, i);
    try {
      const Image original = load_image(rec.path);
      const Image work = load_working_image(rec.path, options.working_size);
      o.height = work.height();
      o.width = work.width();

      const auto desc = request_nongeo_description(*clients.vlm, original, clients.cache, options.nongeo_prompt);
      GeoFeatureBundle bundle = build_geo_bundle(ensemble, work, desc, options.feature_mode);

      if (clients.detector && options.attack.alpha > 0.0) {
        const auto entities = identify_geo_entities(*clients.vlm, original, clients.cache, options.entity_prompt);
        auto det = detect_boxes(*clients.detector, original, entities, options.detection);
        for (auto& b : det.boxes)
          b.region = scale_region(b.region, original.height(), original.width(), work.height(), work.width());
        const auto table = box_features(ensemble, work, det.boxes, options.detection);
        attach_box_features(bundle, ensemble, table);
        o.boxes = table.used_boxes.size();
        o.warnings.insert(o.warnings.end(), det.warnings.begin(), det.warnings.end());
        o.warnings.insert(o.warnings.end(), table.warnings.begin(), table.warnings.end());
      }

      const AttackConfig cfg = fitted_config(options.attack, ensemble, work, o.seed, o.warnings);
      const AttackResult res = ifgsm_protect(work, ensemble, bundle, cfg);

      const std::string stem = safe_file_stem(rec.image_id);
      o.output = out_dir / (stem + ".png");
      o.trace = out_dir / (stem + ".trace.jsonl");
      const Image saved = quantize_within_budget(res.protected_image, work, cfg.epsilon);
      save_protected(saved, o.output);
      write_trace(res.trace, o.trace);

      o.linf = linf_distance(saved, work);
      o.final_loss = res.trace.iterations.empty() ? 0.0 : res.trace.iterations.back().loss;
      o.geo_similarity_clean = mean_geo_similarity(ensemble, work, bundle);
      o.geo_similarity_protected = mean_geo_similarity(ensemble, saved, bundle);
      o.nongeo_similarity_clean = mean_nongeo_similarity(ensemble, work, bundle);
      o.nongeo_similarity_protected = mean_nongeo_similarity(ensemble, saved, bundle);
      o.ok = true;
      spdlog::info("protected {} ({}x{}, {} boxes): geo similarity {:.4f} -> {:.4f}", rec.image_id,
                   o.height, o.width, o.boxes, *o.geo_similarity_clean, *o.geo_similarity_protected);
    } catch (const std::exception& e) {
      o.ok = false;
      o.error = e.what();
      spdlog::warn("skipping {}: {}", rec.image_id, e.what());
    }
  });

  finish_manifest(rm, out_dir);
  return rm;
}

// ---- baselines ---------------------------------------------------------------

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = to_lower(e.path().extension().string());
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunManifest cli_baseline(const DatasetManifest& manifest, const EncoderEnsemble& ensemble,
                         const ProtectOptions& options, BaselineKind kind,
                         const std::vector<fs::path>& target_images, const fs::path& out_dir) {
  validate_options(options);
  if (kind == BaselineKind::kTargeted && target_images.empty())
    throw DomainError("targeted baseline needs at least one target image");
  fs::create_directories(out_dir);

  RunManifest rm = start_manifest(options, ensemble);
  rm.config_text += std::string("# baseline: ") +
                    (kind == BaselineKind::kTargeted ? "targeted" : "untargeted") + '\n';
  rm.config_hash = rm.compute_hash();
  rm.vlm_version = "none";
  rm.detector_version = "none";
  rm.images.resize(manifest.records.size());

  for_each_index(manifest.records.size(), options.workers, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    ImageOutcome& o = rm.images[i];
    o.image_id = rec.image_id;
    o.seed = image_seed(options.attack.seed, i);
    try {
      const Image work = load_working_image(rec.path, options.working_size);
      o.height = work.height();
      o.width = work.width();
      const AttackConfig cfg = fitted_config(options.attack, ensemble, work, o.seed, o.warnings);
      AttackResult res;
      if (kind == BaselineKind::kTargeted) {
        Rng pick(o.seed);
        const auto& target_path = target_images[static_cast<std::size_t>(
            uniform_int(pick, 0, static_cast<std::int64_t>(target_images.size()) - 1))];
        o.warnings.push_back("target image " + target_path.filename().string());
        res = targeted_baseline(work, load_image(target_path), ensemble, cfg);
      } else {
        res = untargeted_baseline(work, ensemble, cfg);
      }
      const std::string stem = safe_file_stem(rec.image_id);
      o.output = out_dir / (stem + ".png");
      o.trace = out_dir / (stem + ".trace.jsonl");
      const Image saved = quantize_within_budget(res.protected_image, work, cfg.epsilon);
      save_protected(saved, o.output);
      write_trace(res.trace, o.trace);
      o.linf = linf_distance(saved, work);
      o.final_loss = res.trace.iterations.empty() ? 0.0 : res.trace.iterations.back().loss;
      o.ok = true;
    } catch (const std::exception& e) {
      o.ok = false;
      o.error = e.what();
      spdlog::warn("skipping {}: {}", rec.image_id, e.what());
    }
  });

  finish_manifest(rm, out_dir);
  return rm;
}

// ---- evaluation --------------------------------------------------------------

std::vector<GeoPrediction> predict_geolocations(TargetVlmClient& client, const DatasetManifest& manifest,
                                                const std::optional<fs::path>& image_dir,
                                                const PromptTemplate& prompt,
                                                const std::function<Image(const Image&)>& transform) {
  std::vector<GeoPrediction> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    const fs::path p = image_dir ? *image_dir / (safe_file_stem(rec.image_id) + ".png") : rec.path;
    Image img = load_image(p);
    if (transform) img = transform(img);
    out.push_back(query_geolocation(client, rec.image_id, img, prompt));
  }
  return out;
}

DistanceReport evaluate_predictions(const DatasetManifest& manifest,
                                    const std::vector<GeoPrediction>& predictions,
                                    std::span<const double> thresholds_km) {
  std::map<std::string, const GeoPrediction*> by_id;
  std::vector<std::string> duplicates, unknown, missing;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.image_id, &p).second) duplicates.push_back(p.image_id);
    if (!manifest.find(p.image_id)) unknown.push_back(p.image_id);
  }
  for (const auto& r : manifest.records)
    if (!by_id.count(r.image_id)) missing.push_back(r.image_id);
  if (!duplicates.empty() || !unknown.empty() || !missing.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s;
    };
    std::string msg = "predictions do not match the manifest:";
    if (!missing.empty()) msg += " missing [" + join(missing) + "]";
    if (!unknown.empty()) msg += " unknown [" + join(unknown) + "]";
    if (!duplicates.empty()) msg += " duplicated [" + join(duplicates) + "]";
    throw ValidationError(msg);
  }
  std::vector<DistanceEntry> entries;
  for (const auto& r : manifest.records) {
    const GeoPrediction& p = *by_id.at(r.image_id);
    entries.push_back({r.image_id, p.predicted ? std::optional<double>(haversine_distance(*p.predicted, r.location))
                                               : std::nullopt});
  }
  return make_distance_report(std::move(entries), thresholds_km);
}

// ---- robustness --------------------------------------------------------------

std::string TransformSetting::label() const {
  char buf[64];
  switch (kind) {
    case Kind::kIdentity:
      return "identity";
    case Kind::kJpeg:
      std::snprintf(buf, sizeof buf, "jpeg_q%g", value);
      return buf;
    case Kind::kBlur:
      std::snprintf(buf, sizeof buf, "blur_r%g", value);
      return buf;
  }
  return "unknown";
}

Image TransformSetting::apply(const Image& img) const {
  switch (kind) {
    case Kind::kIdentity:
      return img;
    case Kind::kJpeg:
      return jpeg_roundtrip(img, static_cast<int>(value));
    case Kind::kBlur:
      return gaussian_blur(img, value);
  }
  return img;
}

std::vector<TransformSetting> load_transform_sweep(const json& config) {
  std::vector<TransformSetting> out;
  try {
    if (config.value("include_identity", true)) out.push_back({TransformSetting::Kind::kIdentity, 0.0});
    for (const auto& q : config.value("jpeg_quality", std::vector<double>{})) {
      if (!(q >= 1 && q <= 100) || q != std::floor(q))
        throw DomainError("jpeg_quality must be an integer in [1, 100]");
      out.push_back({TransformSetting::Kind::kJpeg, q});
    }
    for (const auto& r : config.value("blur_radius", std::vector<double>{})) {
      if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("blur_radius must be >= 0");
      out.push_back({TransformSetting::Kind::kBlur, r});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("transform sweep: ") + e.what());
  }
  if (out.empty()) throw DomainError("transform sweep is empty");
  return out;
}

double feature_displacement(const EncoderEnsemble& ensemble, const Image& clean, const Image& protected_img,
                            const TransformSetting& t) {
  const Image a = t.apply(protected_img);
  const Image b = t.apply(clean);
  double sum = 0.0;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const FeatureVector fa = encode_image(ensemble[i], a).normalized();
    const FeatureVector fb = encode_image(ensemble[i], b).normalized();
    sum += (fa - fb).norm();
  }
  return sum / static_cast<double>(ensemble.size());
}

json RobustnessResult::table() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json j = {{"setting", r.setting.label()},
              {"kind", r.setting.kind == TransformSetting::Kind::kIdentity ? "identity"
                       : r.setting.kind == TransformSetting::Kind::kJpeg   ? "jpeg"
                                                                           : "blur"},
              {"value", r.setting.value},
              {"accuracy", r.report.accuracy},
              {"avg_distance_km", opt_json(r.report.avg_distance_km)},
              {"n", r.report.n},
              {"n_refused", r.report.n_refused},
              {"displacement", opt_json(r.displacement)},
              {"displacement_retained", opt_json(r.displacement_retained)}};
    rows_json.push_back(std::move(j));
  }
  std::vector<double> thresholds = rows.empty() ? std::vector<double>(kDefaultThresholdsKm.begin(),
                                                                      kDefaultThresholdsKm.end())
                                                : rows.front().report.thresholds_km;
  return {{"thresholds_km", thresholds}, {"rows", rows_json}};
}

RobustnessResult cli_robustness(const DatasetManifest& manifest, const fs::path& protected_dir,
                                const std::vector<TransformSetting>& settings, TargetVlmClient& client,
                                const EncoderEnsemble* ensemble, const fs::path& out_dir,
                                const PromptTemplate& prompt, int working_size) {
  if (settings.empty()) throw DomainError("no transform settings");
  fs::create_directories(out_dir);

  // clean/protected pairs for the displacement proxy
  std::vector<std::pair<Image, Image>> pairs;
  if (ensemble) {
    for (const auto& rec : manifest.records) {
      Image prot = load_image(protected_dir / (safe_file_stem(rec.image_id) + ".png"));
      Image clean = load_working_image(rec.path, working_size);
      if (clean.height() != prot.height() || clean.width() != prot.width())
        clean = resize(clean, prot.height(), prot.width());
      pairs.emplace_back(std::move(clean), std::move(prot));
    }
  }
  auto mean_displacement = [&](const TransformSetting& t) -> std::optional<double> {
    if (!ensemble || pairs.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& [clean, prot] : pairs) s += feature_displacement(*ensemble, clean, prot, t);
    return s / static_cast<double>(pairs.size());
  };
  const auto base_disp = mean_displacement({TransformSetting::Kind::kIdentity, 0.0});

  RobustnessResult result;
  for (const auto& t : settings) {
    RobustnessRow row;
    row.setting = t;
    const auto preds = predict_geolocations(client, manifest, protected_dir, prompt,
                                            [&t](const Image& img) { return t.apply(img); });
    row.report = evaluate_predictions(manifest, preds);
    row.displacement = t.kind == TransformSetting::Kind::kIdentity ? base_disp : mean_displacement(t);
    if (row.displacement && base_disp && *base_disp > 0.0)
      row.displacement_retained = *row.displacement / *base_disp;
    write_json(to_json(row.report), out_dir / ("report_" + t.label() + ".json"));
    spdlog::info("robustness {}: {} of {} refused", t.label(), row.report.n_refused, row.report.n);
    result.rows.push_back(std::move(row));
  }
  write_json(result.table(), out_dir / "robustness_table.json");
  return result;
}

// ---- sweep -------------------------------------------------------------------

std::vector<SweepCell> cli_sweep(const DatasetManifest& manifest, const EncoderEnsemble& ensemble,
                                 const ProtectOptions& options, const ProtectClients& clients,
                                 const std::vector<int>& sizes, const std::vector<double>& budgets,
                                 const fs::path& out_dir) {
  if (sizes.empty() || budgets.empty()) throw DomainError("sweep needs at least one size and one budget");
  for (int s : sizes)
    if (s <= 0) throw DomainError("sweep sizes must be positive");
  for (const auto& b : budgets) {
    ProtectOptions o = options;
    o.attack.epsilon = b;
    o.attack.step_size = std::min(o.attack.step_size, b);
    validate_options(o);
  }
  std::vector<SweepCell> cells;
  for (int size : sizes) {
    for (double budget : budgets) {
      ProtectOptions o = options;
      o.working_size = size;
      o.attack.epsilon = budget;
      o.attack.step_size = std::min(o.attack.step_size, budget);
      char name[64];
      std::snprintf(name, sizeof name, "size%d_budget%g", size, budget * 255.0);
      SweepCell cell;
      cell.size = size;
      cell.budget = budget;
      cell.run_dir = out_dir / name;
      const RunManifest rm = cli_protect(manifest, ensemble, o, clients, cell.run_dir);
      cell.n_ok = rm.n_ok();
      double geo = 0.0, nongeo = 0.0;
      for (const auto& img : rm.images) {
        if (!img.ok) continue;
        cell.max_linf = std::max(cell.max_linf, img.linf);
        geo += *img.geo_similarity_clean - *img.geo_similarity_protected;
        nongeo += *img.nongeo_similarity_clean - *img.nongeo_similarity_protected;
      }
      if (cell.n_ok > 0) {
        cell.mean_geo_drop = geo / static_cast<double>(cell.n_ok);
        cell.mean_nongeo_drop = nongeo / static_cast<double>(cell.n_ok);
      }
      cells.push_back(std::move(cell));
    }
  }
  write_json(sweep_grid_json(cells), out_dir / "sweep_grid.json");
  return cells;
}

json sweep_grid_json(const std::vector<SweepCell>& cells) {
  std::set<int> sizes;
  std::set<double> budgets;
  json rows = json::array();
  for (const auto& c : cells) {
    sizes.insert(c.size);
    budgets.insert(c.budget);
    rows.push_back({{"size", c.size},
                    {"budget", c.budget},
                    {"budget_255", c.budget * 255.0},
                    {"n_ok", c.n_ok},
                    {"max_linf", c.max_linf},
                    {"mean_geo_drop", opt_json(c.mean_geo_drop)},
                    {"mean_nongeo_drop", opt_json(c.mean_nongeo_drop)},
                    {"run_dir", c.run_dir.filename().string()}});
  }
  return {{"sizes", std::vector<int>(sizes.begin(), sizes.end())},
          {"budgets", std::vector<double>(budgets.begin(), budgets.end())},
          {"cells", rows}};
}

// ---- synthetic fixtures ------------------------------------------------------

fs::path write_synthetic_dataset(const fs::path& dir, int count, int size, std::uint64_t seed) {
  if (count < 0) throw DomainError("count must be >= 0");
  if (size < 32) throw DomainError("synthetic images need size >= 32");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "vlm");
  static const char* const kEntities[] = {"clock tower", "church", "apartment block", "tv tower"};
  static const char* const kScenes[] = {"a quiet street", "an open square", "a residential road",
                                        "a wide avenue"};
  Rng rng(seed);
  DatasetManifest manifest;
  json vlm_index = json::object();
  json detector = json::object();
  std::ostringstream targets;
  for (int i = 0; i < count; ++i) {
    const auto scene = synthetic_scene(seed * 1000 + static_cast<std::uint64_t>(i), size, size);
    const Image img = quantize_8bit(scene.image);
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", i);
    const fs::path rel = fs::path("images") / (std::string(id) + ".png");
    save_protected(img, dir / rel);
    const double lat = uniform_real(rng, -60.0, 70.0);
    const double lon = uniform_real(rng, -180.0, 180.0);
    const GeoCoordinate loc = GeoCoordinate::make(lat, lon);
    manifest.records.push_back({id, dir / rel, loc});

    const std::string hash = content_hash(img);
    json entities = json::array();
    json boxes = json::array();
    for (std::size_t k = 0; k < scene.landmarks.size(); ++k) {
      const std::string name = kEntities[k % std::size(kEntities)];
      if (std::find(entities.begin(), entities.end(), name) == entities.end()) entities.push_back(name);
      const auto& r = scene.landmarks[k];
      boxes.push_back({{"top", r.top}, {"left", r.left}, {"height", r.height}, {"width", r.width},
                       {"label", name}, {"score", 0.9 - 0.05 * static_cast<double>(k)}});
    }
    const std::string desc = std::string(kScenes[i % std::size(kScenes)]) + " with " +
                             std::to_string(scene.landmarks.size()) +
                             " buildings with lit windows, a round object in the sky and people nearby";
    vlm_index[hash] = {{"description", desc}, {"entities", entities}};
    detector[hash] = boxes;
    targets << json{{"image_id", id}, {"response", "The photo was taken near " + format_coordinates(loc) + "."}}
                   .dump()
            << '\n';
  }
  write_json(vlm_index, dir / "vlm" / "index.json");
  write_json(detector, dir / "detector.json");
  {
    std::ofstream out(dir / "target_fixtures.jsonl", std::ios::binary);
    out << targets.str();
  }
  const fs::path manifest_path = dir / "manifest.jsonl";
  manifest.save(manifest_path);
  return manifest_path;
}

}  // namespace geoshield
