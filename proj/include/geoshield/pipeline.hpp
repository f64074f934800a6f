#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoshield/encoder.hpp"
#include "geoshield/geo_ee.hpp"
#include "geoshield/geo_metrics.hpp"
#include "geoshield/geolocation.hpp"
#include "geoshield/gnfd.hpp"
#include "geoshield/psae.hpp"
#include "geoshield/vlm.hpp"
#include "json.hpp"

namespace geoshield {

// ---- dataset -----------------------------------------------------------------

struct ManifestRecord {
  std::string image_id;
  std::filesystem::path path;  // absolute after loading
  GeoCoordinate location;
};

/// JSONL, one {"image_id", "path", "lat", "lon"} per line. Relative paths are
/// resolved against the manifest's directory. Duplicate ids, invalid
/// coordinates and malformed lines raise ValidationError.
struct DatasetManifest {
  std::vector<ManifestRecord> records;

  static DatasetManifest load(const std::filesystem::path& jsonl);
  /// Paths are written relative to the file's directory when possible.
  void save(const std::filesystem::path& jsonl) const;
  const ManifestRecord* find(const std::string& image_id) const;
};

/// Filename-safe form of an image id.
std::string safe_file_stem(const std::string& image_id);

// ---- encoders ----------------------------------------------------------------

/// One registry entry. kind "toy" builds make_toy_encoder(seed, input_size,
/// feature_dim); other kinds must be supplied through an EncoderFactory.
struct EncoderSpec {
  std::string id;
  std::string kind = "toy";
  std::uint64_t seed = 0;
  std::string weights_ref;
  int input_size = 224;
  int feature_dim = 64;
};

/// Reads a JSON array of {id, kind, seed | weights_ref, input_size, feature_dim}.
std::vector<EncoderSpec> load_encoder_registry(const std::filesystem::path& path);

using EncoderFactory = std::function<EncoderPtr(const EncoderSpec&)>;

/// Builds every entry; non-toy kinds go to `factory` and raise
/// CapabilityError when there is none. Feature dimensions are checked
/// against the spec.
EncoderEnsemble build_ensemble(const std::vector<EncoderSpec>& specs,
                               const EncoderFactory& factory = {});

/// Two toy pairs, used when no registry is given.
std::vector<EncoderSpec> default_encoder_specs();

// ---- protection --------------------------------------------------------------

struct ProtectOptions {
  AttackConfig attack;
  /// Longer image side after loading; 0 keeps the original resolution.
  int working_size = 0;
  DetectionConfig detection;
  FeatureMode feature_mode = FeatureMode::kNormalized;
  PromptTemplate nongeo_prompt = default_nongeo_prompt();
  PromptTemplate entity_prompt = default_entity_prompt();
  int workers = 1;
};

struct ProtectClients {
  AuxiliaryVlmClient* vlm = nullptr;
  DetectorClient* detector = nullptr;  // null disables box detection
  ResponseCache* cache = nullptr;
};

struct ImageOutcome {
  std::string image_id;
  bool ok = false;
  std::string error;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::filesystem::path trace;
  int height = 0;
  int width = 0;
  std::size_t boxes = 0;
  // mean over pairs, absent for baselines
  std::optional<double> geo_similarity_clean;
  std::optional<double> geo_similarity_protected;
  std::optional<double> nongeo_similarity_clean;
  std::optional<double> nongeo_similarity_protected;
  double linf = 0.0;  // of the saved 8-bit image against the working input
  double final_loss = 0.0;
  std::vector<std::string> warnings;
};

struct RunManifest {
  std::string config_text;  // loadable with --config
  std::string config_hash;  // FNV-1a over config text, prompt ids and encoder ids, hex
  std::uint64_t seed = 0;
  int working_size = 0;
  std::vector<std::string> encoders;
  std::map<std::string, std::string> prompts;  // role -> prompt id
  std::string vlm_version;
  std::string detector_version;
  std::vector<ImageOutcome> images;

  std::size_t n_ok() const;
  std::string compute_hash() const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Per-image seed: base ^ index.
std::uint64_t image_seed(std::uint64_t base, std::size_t index);

/// Loads an image and scales its longer side to working_size (if > 0).
Image load_working_image(const std::filesystem::path& path, int working_size);

/// The 8-bit image closest to x with |result - clean| <= eps in every
/// channel. This is what protection runs save, so the budget also holds for
/// resized or 16-bit inputs that are off the 8-bit grid. eps >= 1/255.
Image quantize_within_budget(const Image& x, const Image& clean, double eps);

/// For every record: load, build targets (description, entities, boxes),
/// run ifgsm_protect, write `<out>/<id>.png` and `<out>/<id>.trace.jsonl`.
/// Per-image failures are recorded and skipped. Writes
/// `<out>/run_manifest.json` and `<out>/config.txt` and returns the
/// manifest. Invalid options throw before any work.
RunManifest cli_protect(const DatasetManifest& manifest, const EncoderEnsemble& ensemble,
                        const ProtectOptions& options, const ProtectClients& clients,
                        const std::filesystem::path& out_dir);

// ---- baselines ---------------------------------------------------------------

enum class BaselineKind { kTargeted, kUntargeted };

/// Runs the chosen baseline on every record. Targeted runs pick a target
/// image per record from target_images with the record's seed.
RunManifest cli_baseline(const DatasetManifest& manifest, const EncoderEnsemble& ensemble,
                         const ProtectOptions& options, BaselineKind kind,
                         const std::vector<std::filesystem::path>& target_images,
                         const std::filesystem::path& out_dir);

/// PNG and JPEG files in dir, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// ---- evaluation --------------------------------------------------------------

/// Queries the target model for every record. `image_dir`, when given,
/// replaces each record's image by `<image_dir>/<safe id>.png`.
std::vector<GeoPrediction> predict_geolocations(
    TargetVlmClient& client, const DatasetManifest& manifest,
    const std::optional<std::filesystem::path>& image_dir = std::nullopt,
    const PromptTemplate& prompt = default_geolocation_prompt(),
    const std::function<Image(const Image&)>& transform = {});

/// Distances of predictions against manifest truth. Every manifest id needs
/// exactly one prediction and vice versa, otherwise ValidationError lists
/// the offending ids.
DistanceReport evaluate_predictions(const DatasetManifest& manifest,
                                    const std::vector<GeoPrediction>& predictions,
                                    std::span<const double> thresholds_km = kDefaultThresholdsKm);

/// Writes JSON with a trailing newline; reports are byte-stable.
void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

// ---- robustness --------------------------------------------------------------

struct TransformSetting {
  enum class Kind { kIdentity, kJpeg, kBlur };
  Kind kind = Kind::kIdentity;
  double value = 0.0;  // JPEG quality or blur radius in pixels

  std::string label() const;
  Image apply(const Image& img) const;
};

/// {"jpeg_quality": [..], "blur_radius": [..], "include_identity": bool}.
/// Blur radius r is a Gaussian with sigma = r.
std::vector<TransformSetting> load_transform_sweep(const nlohmann::json& config);

/// Mean over pairs of |f^(T(protected)) - f^(T(clean))|, f^ the unit
/// feature: how far the perturbation still moves the representation after
/// the transform.
double feature_displacement(const EncoderEnsemble& ensemble, const Image& clean,
                            const Image& protected_img, const TransformSetting& t);

struct RobustnessRow {
  TransformSetting setting;
  DistanceReport report;
  std::optional<double> displacement;          // mean over images
  std::optional<double> displacement_retained;  // relative to identity
};

struct RobustnessResult {
  std::vector<RobustnessRow> rows;
  nlohmann::json table() const;
};

/// For each setting, transforms every protected image `<protected_dir>/<id>.png`,
/// queries the target model and evaluates against the manifest. With an
/// ensemble, also measures feature displacement against the clean images.
/// Writes `<out>/report_<label>.json` per setting and `<out>/robustness_table.json`.
RobustnessResult cli_robustness(const DatasetManifest& manifest,
                                const std::filesystem::path& protected_dir,
                                const std::vector<TransformSetting>& settings,
                                TargetVlmClient& client, const EncoderEnsemble* ensemble,
                                const std::filesystem::path& out_dir,
                                const PromptTemplate& prompt = default_geolocation_prompt(),
                                int working_size = 0);

// ---- sweep -------------------------------------------------------------------

struct SweepCell {
  int size = 0;
  double budget = 0.0;  // pixel units
  std::size_t n_ok = 0;
  double max_linf = 0.0;
  std::optional<double> mean_geo_drop;
  std::optional<double> mean_nongeo_drop;
  std::filesystem::path run_dir;
};

/// cli_protect for every (size, budget) pair into `<out>/size<S>_budget<k>`;
/// writes `<out>/sweep_grid.json`.
std::vector<SweepCell> cli_sweep(const DatasetManifest& manifest, const EncoderEnsemble& ensemble,
                                 const ProtectOptions& options, const ProtectClients& clients,
                                 const std::vector<int>& sizes, const std::vector<double>& budgets,
                                 const std::filesystem::path& out_dir);
nlohmann::json sweep_grid_json(const std::vector<SweepCell>& cells);

// ---- synthetic fixtures ------------------------------------------------------

/// Writes a self-contained offline dataset: PNG scenes, manifest.jsonl,
/// vlm/index.json (description + entities per image hash), detector.json
/// (landmark boxes per hash) and target_fixtures.jsonl (the true coordinate
/// as answer). Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, int count, int size,
                                              std::uint64_t seed);

}  // namespace geoshield
