// geoshield command line: protect, baseline, sweep, evaluate, robustness, synth.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geoshield/errors.hpp"
#include "geoshield/pipeline.hpp"

namespace fs = std::filesystem;
using namespace geoshield;

namespace {

struct SharedArgs {
  std::string manifest;
  std::string out;
  std::string encoders;
  std::string clients;
  std::string fixtures;
  std::string cache;
  std::string nongeo_prompt;
  std::string entity_prompt;
  std::string budget = "8";
  std::string step_size = "1";
  std::string feature_mode = "normalized";
  bool mock_clients = false;
  bool verbose = false;
  int working_size = 0;
  int workers = 1;
  ProtectOptions opts;
};

/// "8" means 8/255; "8/255" and "0.03" style fractions are taken literally
/// when they contain a slash.
double parse_per255(const std::string& text, const char* what) {
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double k = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return k / 255.0;
    }
    const double a = std::stod(text.substr(0, slash), &used);
    if (used != slash) throw std::invalid_argument(text);
    const std::string rest = text.substr(slash + 1);
    const double b = std::stod(rest, &used);
    if (used != rest.size() || b == 0.0) throw std::invalid_argument(text);
    return a / b;
  } catch (const std::logic_error&) {
    throw DomainError(std::string(what) + ": cannot parse '" + text + "'");
  }
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

HttpEndpoint endpoint_from(const nlohmann::json& j) {
  HttpEndpoint e;
  e.url = j.at("url").get<std::string>();
  e.token_env = j.value("token_env", std::string());
  e.timeout_seconds = j.value("timeout_seconds", e.timeout_seconds);
  e.max_attempts = j.value("max_attempts", e.max_attempts);
  e.backoff_ms = j.value("backoff_ms", e.backoff_ms);
  return e;
}

void add_attack_options(CLI::App& app, SharedArgs& a) {
  AttackConfig& c = a.opts.attack;
  app.add_option("--manifest", a.manifest, "Dataset manifest (JSONL)");
  app.add_option("--out", a.out, "Output directory");
  app.add_option("--seed", c.seed, "Base seed; image i uses seed ^ i");
  app.add_option("--budget", a.budget, "L-inf budget in 1/255 units (or a/b)");
  app.add_option("--step-size", a.step_size, "Step size in 1/255 units (or a/b)");
  app.add_option("--steps", c.iterations, "I-FGSM iterations");
  app.add_option("--alpha", c.alpha, "Weight of the geo-exposure box terms");
  app.add_option("--beta", c.beta, "Weight of the non-geographic terms");
  app.add_option("--patches", c.n_patch, "Local patches per iteration (0 disables)");
  app.add_option("--patch-size", c.patch_size, "Patch side in px (0: largest encoder input)");
  app.add_option("--crop-scale-min", c.crop.scale_min);
  app.add_option("--crop-scale-max", c.crop.scale_max);
  app.add_option("--crop-ratio-min", c.crop.ratio_min);
  app.add_option("--crop-ratio-max", c.crop.ratio_max);
  app.add_option("--disentangle", c.disentangle, "false swaps z_geo for plain repulsion");
  app.add_option("--working-size", a.working_size, "Longer image side before protection (0 keeps)");
  app.add_option("--feature-mode", a.feature_mode, "normalized | raw")
      ->check(CLI::IsMember({"normalized", "raw"}));
  app.add_option("--score-threshold", a.opts.detection.score_threshold);
  app.add_option("--iou-merge", a.opts.detection.iou_merge);
  app.add_option("--max-boxes", a.opts.detection.max_boxes);
  app.add_option("--box-padding", a.opts.detection.padding);
  app.add_option("--min-box-side", a.opts.detection.min_side);
  app.add_option("--workers", a.workers, "Images processed concurrently");
  app.add_option("--encoders", a.encoders, "Encoder registry JSON (default: two toy pairs)");
  app.add_option("--clients", a.clients, "Client endpoints JSON {vlm, detector, target}");
  app.add_flag("--mock-clients", a.mock_clients, "Use fixture clients instead of HTTP endpoints");
  app.add_option("--fixtures", a.fixtures, "Fixture directory (default: the manifest's directory)");
  app.add_option("--cache", a.cache, "Response cache directory");
  app.add_option("--nongeo-prompt", a.nongeo_prompt, "Prompt template JSON for descriptions");
  app.add_option("--entity-prompt", a.entity_prompt, "Prompt template JSON for entity listing");
  app.add_flag("-v,--verbose", a.verbose);
}

void finalize_options(SharedArgs& a) {
  a.opts.attack.epsilon = parse_per255(a.budget, "--budget");
  a.opts.attack.step_size = parse_per255(a.step_size, "--step-size");
  a.opts.working_size = a.working_size;
  a.opts.workers = a.workers;
  a.opts.feature_mode = a.feature_mode == "raw" ? FeatureMode::kRaw : FeatureMode::kNormalized;
  if (!a.nongeo_prompt.empty()) a.opts.nongeo_prompt = load_prompt_template(a.nongeo_prompt);
  if (!a.entity_prompt.empty()) a.opts.entity_prompt = load_prompt_template(a.entity_prompt);
  a.opts.attack.validate();
}

fs::path fixture_dir(const SharedArgs& a) {
  if (!a.fixtures.empty()) return a.fixtures;
  return fs::absolute(a.manifest).parent_path();
}

EncoderEnsemble make_ensemble(const SharedArgs& a) {
  return build_ensemble(a.encoders.empty() ? default_encoder_specs() : load_encoder_registry(a.encoders));
}

struct Clients {
  std::unique_ptr<AuxiliaryVlmClient> vlm;
  std::unique_ptr<DetectorClient> detector;
  std::unique_ptr<ResponseCache> cache;
  ProtectClients view() const { return {vlm.get(), detector.get(), cache.get()}; }
};

Clients make_clients(const SharedArgs& a) {
  Clients c;
  c.cache = a.cache.empty() ? std::make_unique<ResponseCache>() : std::make_unique<ResponseCache>(a.cache);
  if (a.mock_clients) {
    const fs::path dir = fixture_dir(a);
    if (fs::exists(dir / "vlm" / "index.json")) {
      c.vlm = std::make_unique<FixtureVlmClient>(dir / "vlm");
    } else {
      spdlog::warn("no {} ; using a generic description and no entities",
                   (dir / "vlm" / "index.json").string());
      c.vlm = std::make_unique<FixtureVlmClient>(
          nlohmann::json{{"*", {{"description", "a photo of an outdoor scene"}, {"entities", nlohmann::json::array()}}}},
          "generic");
    }
    if (fs::exists(dir / "detector.json")) c.detector = std::make_unique<MockDetector>(dir / "detector.json");
    return c;
  }
  if (a.clients.empty()) throw DomainError("either --mock-clients or --clients <json> is required");
  const auto j = read_json(a.clients);
  c.vlm = std::make_unique<HttpVlmClient>(endpoint_from(j.at("vlm")));
  if (j.contains("detector")) c.detector = std::make_unique<HttpDetector>(endpoint_from(j.at("detector")));
  return c;
}

struct TargetArgs {
  std::string fixtures;
  bool gallery = false;
  double gallery_min_similarity = 0.0;
  std::string prompt;
};

std::unique_ptr<TargetVlmClient> make_target(const SharedArgs& a, const TargetArgs& t,
                                             const DatasetManifest& manifest) {
  if (!t.fixtures.empty()) return std::make_unique<FixtureTargetVlmClient>(t.fixtures);
  if (t.gallery) {
    const EncoderEnsemble ens = make_ensemble(a);
    std::vector<GalleryGeolocator::Entry> gallery;
    for (const auto& r : manifest.records)
      gallery.push_back({load_working_image(r.path, a.working_size), r.location});
    return std::make_unique<GalleryGeolocator>(ens.ptr(0), std::move(gallery), t.gallery_min_similarity);
  }
  if (a.mock_clients) return std::make_unique<FixtureTargetVlmClient>(fixture_dir(a) / "target_fixtures.jsonl");
  if (a.clients.empty())
    throw DomainError("choose a target: --target-fixtures, --target-gallery, --mock-clients or --clients");
  const auto j = read_json(a.clients);
  const auto& target = j.at("target");
  return std::make_unique<HttpTargetVlmClient>(endpoint_from(target),
                                               target.value("model_id", std::string("http-target")));
}

void add_target_options(CLI::App& app, TargetArgs& t) {
  app.add_option("--target-fixtures", t.fixtures, "JSONL {image_id, response} answers");
  app.add_flag("--target-gallery", t.gallery, "Nearest clean image under the first encoder answers");
  app.add_option("--gallery-min-similarity", t.gallery_min_similarity);
  app.add_option("--geolocation-prompt", t.prompt, "Prompt template JSON");
}

PromptTemplate geolocation_prompt(const TargetArgs& t) {
  return t.prompt.empty() ? default_geolocation_prompt() : load_prompt_template(t.prompt);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw DomainError(std::string(flag) + " is required");
}

int exit_code_for(const RunManifest& rm) { return rm.n_ok() == rm.images.size() ? 0 : 3; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeoShield: adversarial perturbations against image geolocation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value file (see config.txt in any run directory)");
  app.allow_config_extras(false);

  SharedArgs args;
  add_attack_options(app, args);

  auto* protect = app.add_subcommand("protect", "Protect every image in a manifest")->fallthrough();
  auto* baseline = app.add_subcommand("baseline", "Targeted or untargeted comparison attacks")->fallthrough();
  std::string baseline_kind = "untargeted";
  std::string target_dir;
  baseline->add_option("--kind", baseline_kind)->check(CLI::IsMember({"targeted", "untargeted"}));
  baseline->add_option("--targets", target_dir, "Directory of target images (targeted)");

  auto* sweep = app.add_subcommand("sweep", "Protect over a grid of sizes and budgets")->fallthrough();
  std::string sizes_text = "224,640";
  std::string budgets_text = "4,8,16";
  sweep->add_option("--sizes", sizes_text, "Comma-separated working sizes");
  sweep->add_option("--budgets", budgets_text, "Comma-separated budgets in 1/255 units");

  auto* evaluate = app.add_subcommand("evaluate", "Geolocation accuracy report")->fallthrough();
  TargetArgs eval_target;
  std::string predictions, report_path, images_dir, predictions_out;
  evaluate->add_option("--predictions", predictions, "Precomputed predictions JSONL");
  evaluate->add_option("--images", images_dir, "Query <dir>/<id>.png instead of the manifest images");
  evaluate->add_option("--report", report_path, "Report path (default <out>/report.json)");
  evaluate->add_option("--predictions-out", predictions_out, "Also write the predictions");
  add_target_options(*evaluate, eval_target);

  auto* robustness = app.add_subcommand("robustness", "Re-evaluate after JPEG and blur")->fallthrough();
  TargetArgs rob_target;
  std::string protected_dir, sweep_config, jpeg_text = "90", blur_text = "1";
  bool no_displacement = false;
  robustness->add_option("--protected", protected_dir, "Directory with <id>.png protected images")->required();
  robustness->add_option("--sweep", sweep_config, "JSON {jpeg_quality: [...], blur_radius: [...]}");
  robustness->add_option("--jpeg", jpeg_text, "Comma-separated JPEG qualities");
  robustness->add_option("--blur", blur_text, "Comma-separated blur radii (px)");
  robustness->add_flag("--no-displacement", no_displacement, "Skip the encoder displacement proxy");
  add_target_options(*robustness, rob_target);

  auto* synth = app.add_subcommand("synth", "Write an offline synthetic dataset with fixtures")->fallthrough();
  int synth_count = 4, synth_size = 256;
  synth->add_option("--count", synth_count);
  synth->add_option("--size", synth_size);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_level(args.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth) {
      require(args.out, "--out");
      const auto m = write_synthetic_dataset(args.out, synth_count, synth_size, args.opts.attack.seed);
      std::cout << m.string() << '\n';
      return 0;
    }

    finalize_options(args);
    require(args.manifest, "--manifest");
    const DatasetManifest manifest = DatasetManifest::load(args.manifest);

    if (*protect) {
      require(args.out, "--out");
      const EncoderEnsemble ens = make_ensemble(args);
      const Clients clients = make_clients(args);
      return exit_code_for(cli_protect(manifest, ens, args.opts, clients.view(), args.out));
    }
    if (*baseline) {
      require(args.out, "--out");
      const EncoderEnsemble ens = make_ensemble(args);
      const auto kind = baseline_kind == "targeted" ? BaselineKind::kTargeted : BaselineKind::kUntargeted;
      std::vector<fs::path> targets;
      if (kind == BaselineKind::kTargeted) {
        require(target_dir, "--targets");
        targets = list_images(target_dir);
      }
      return exit_code_for(cli_baseline(manifest, ens, args.opts, kind, targets, args.out));
    }
    if (*sweep) {
      require(args.out, "--out");
      const EncoderEnsemble ens = make_ensemble(args);
      const Clients clients = make_clients(args);
      std::vector<int> sizes;
      for (double s : parse_list(sizes_text)) sizes.push_back(static_cast<int>(s));
      std::vector<double> budgets;
      for (double b : parse_list(budgets_text)) budgets.push_back(b / 255.0);
      const auto cells = cli_sweep(manifest, ens, args.opts, clients.view(), sizes, budgets, args.out);
      std::cout << sweep_grid_json(cells).dump(2) << '\n';
      return 0;
    }
    if (*evaluate) {
      std::vector<GeoPrediction> preds;
      if (!predictions.empty()) {
        preds = read_predictions_jsonl(predictions);
      } else {
        auto client = make_target(args, eval_target, manifest);
        std::optional<fs::path> dir;
        if (!images_dir.empty()) dir = fs::path(images_dir);
        preds = predict_geolocations(*client, manifest, dir, geolocation_prompt(eval_target));
      }
      if (!predictions_out.empty()) write_predictions_jsonl(preds, predictions_out);
      const DistanceReport report = evaluate_predictions(manifest, preds);
      const fs::path out = !report_path.empty() ? fs::path(report_path)
                           : !args.out.empty()  ? fs::path(args.out) / "report.json"
                                                : fs::path();
      if (!out.empty()) write_json(to_json(report), out);
      std::cout << to_json(report).dump(2) << '\n';
      return 0;
    }
    if (*robustness) {
      require(args.out, "--out");
      std::vector<TransformSetting> settings;
      if (!sweep_config.empty()) {
        settings = load_transform_sweep(read_json(sweep_config));
      } else {
        nlohmann::json cfg = {{"jpeg_quality", parse_list(jpeg_text)}, {"blur_radius", parse_list(blur_text)}};
        settings = load_transform_sweep(cfg);
      }
      auto client = make_target(args, rob_target, manifest);
      std::optional<EncoderEnsemble> ens;
      if (!no_displacement) ens.emplace(make_ensemble(args));
      const auto result = cli_robustness(manifest, protected_dir, settings, *client, ens ? &*ens : nullptr,
                                         args.out, geolocation_prompt(rob_target), args.working_size);
      std::cout << result.table().dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
