#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "geoshield/errors.hpp"
#include "geoshield/pipeline.hpp"
#include "support.hpp"

using namespace geoshield;
using geoshield::test_support::TempDir;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Fixture {
  TempDir dir{"pipeline"};
  fs::path manifest_path;
  DatasetManifest manifest;
  EncoderEnsemble ensemble = test_support::toy_ensemble(2, 64, 32);
  FixtureVlmClient vlm;
  MockDetector detector;
  ProtectOptions options;

  explicit Fixture(int count = 2, int size = 96)
      : manifest_path(write_synthetic_dataset(dir / "data", count, size, 5)),
        manifest(DatasetManifest::load(manifest_path)),
        vlm(dir / "data" / "vlm"),
        detector(dir / "data" / "detector.json") {
    options.attack.iterations = 6;
  }
  ProtectClients clients() { return {&vlm, &detector, nullptr}; }
};

TEST(Manifest, LoadSaveRoundTrip) {
  TempDir dir("manifest");
  fs::create_directories(dir / "sub");
  {
    std::ofstream out(dir / "sub" / "m.jsonl");
    out << R"({"image_id": "a", "path": "img/a.png", "lat": 1.5, "lon": 2.5})" << "\n\n"
        << R"({"image_id": "b", "path": "/abs/b.png", "lat": -3, "lon": 180})" << "\n";
  }
  const auto m = DatasetManifest::load(dir / "sub" / "m.jsonl");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0].path, fs::absolute(dir / "sub" / "img" / "a.png").lexically_normal());
  EXPECT_EQ(m.records[1].location.lon(), -180.0);
  m.save(dir / "sub" / "copy.jsonl");
  const auto back = DatasetManifest::load(dir / "sub" / "copy.jsonl");
  EXPECT_EQ(back.records[0].path, m.records[0].path);
  EXPECT_NE(slurp(dir / "sub" / "copy.jsonl").find("\"img/a.png\""), std::string::npos);
  EXPECT_NE(m.find("b"), nullptr);
  EXPECT_EQ(m.find("c"), nullptr);
}

TEST(Manifest, Errors) {
  TempDir dir("manifest");
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "m.jsonl") << body;
    return dir / "m.jsonl";
  };
  EXPECT_THROW(DatasetManifest::load(dir / "none.jsonl"), IoError);
  EXPECT_THROW(DatasetManifest::load(write(R"({"image_id": "a", "path": "x", "lat": 1, "lon": 2}
{"image_id": "a", "path": "y", "lat": 1, "lon": 2})")),
               ValidationError);
  EXPECT_THROW(DatasetManifest::load(write(R"({"image_id": "a", "path": "x", "lat": 91, "lon": 2})")),
               ValidationError);
  try {
    DatasetManifest::load(write("{\"image_id\": \"a\", \"path\": \"x\", \"lat\": 1, \"lon\": 2}\nnot json\n"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(Encoders, RegistryAndFactory) {
  TempDir dir("registry");
  std::ofstream(dir / "r.json") << R"({"encoders": [
      {"id": "a", "kind": "toy", "seed": 3, "input_size": 32, "feature_dim": 16},
      {"id": "b", "kind": "open_clip", "weights_ref": "ViT-B-32", "feature_dim": 16}]})";
  const auto specs = load_encoder_registry(dir / "r.json");
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[1].weights_ref, "ViT-B-32");
  EXPECT_THROW(build_ensemble(specs), CapabilityError);
  const auto ens = build_ensemble(specs, [](const EncoderSpec& s) { return make_toy_encoder(99, 32, s.feature_dim); });
  EXPECT_EQ(ens.size(), 2u);
  EXPECT_THROW(build_ensemble(specs, [](const EncoderSpec&) { return make_toy_encoder(99, 32, 8); }), ContractError);
  EXPECT_EQ(build_ensemble(default_encoder_specs()).size(), 2u);
}

TEST(Protect, EmptyManifestSucceeds) {
  Fixture f(0);
  const auto rm = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "run");
  EXPECT_TRUE(rm.images.empty());
  EXPECT_TRUE(fs::exists(f.dir / "run" / "run_manifest.json"));
}

TEST(Protect, TwoImagesWithinBudgetAndReproducible) {
  Fixture f;
  const auto a = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "a");
  ASSERT_EQ(a.n_ok(), 2u);
  for (const auto& o : a.images) {
    const Image out = load_image(o.output);
    const Image in = load_image(f.manifest.find(o.image_id)->path);
    double linf = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) linf = std::max(linf, std::abs(out.values()[i] - in.values()[i]));
    EXPECT_LE(linf, 8.0 / 255 + 1e-12);
    EXPECT_GT(o.boxes, 0u);
    EXPECT_TRUE(fs::exists(o.trace));
  }
  const auto b = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "b");
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(slurp(a.images[i].output), slurp(b.images[i].output));
    EXPECT_EQ(slurp(a.images[i].trace), slurp(b.images[i].trace));
  }
  EXPECT_EQ(a.config_hash, b.config_hash);
}

TEST(Protect, ManifestRecordsProvenanceAndRoundTrips) {
  Fixture f;
  const auto rm = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "run");
  const json j = read_json(f.dir / "run" / "run_manifest.json");
  EXPECT_EQ(j["config_hash"], rm.config_hash);
  EXPECT_EQ(j["clients"]["vlm"], f.vlm.version());
  EXPECT_EQ(j["n_ok"], 2);
  EXPECT_EQ(RunManifest::from_json(j).to_json(), rm.to_json());
  EXPECT_EQ(slurp(f.dir / "run" / "config.txt"), rm.config_text);
  EXPECT_EQ(rm.config_hash, rm.compute_hash());
}

TEST(Protect, AlphaZeroSkipsDetector) {
  Fixture f;
  f.options.attack.alpha = 0.0;
  const auto rm = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "run");
  EXPECT_EQ(rm.n_ok(), 2u);
  EXPECT_EQ(f.detector.calls(), 0);
}

TEST(Protect, FailedImageIsRecordedAndSkipped) {
  Fixture f;
  f.manifest.records.push_back({"ghost", f.dir / "missing.png", GeoCoordinate::make(0, 0)});
  const auto rm = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "run");
  EXPECT_EQ(rm.n_ok(), 2u);
  EXPECT_FALSE(rm.images[2].ok);
  EXPECT_FALSE(rm.images[2].error.empty());
}

TEST(Protect, WorkersDoNotChangeResults) {
  Fixture f(3);
  const auto a = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "a");
  f.options.workers = 3;
  const auto b = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "b");
  for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(slurp(a.images[i].output), slurp(b.images[i].output));
}

TEST(Protect, InvalidOptionsThrowBeforeWork) {
  Fixture f;
  f.options.attack.epsilon = -1;
  EXPECT_THROW(cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "run"), DomainError);
  EXPECT_FALSE(fs::exists(f.dir / "run"));
}

TEST(Baseline, TargetedAndUntargeted) {
  Fixture f;
  const auto targets = list_images(f.dir / "data" / "images");
  const auto t = cli_baseline(f.manifest, f.ensemble, f.options, BaselineKind::kTargeted, targets, f.dir / "t");
  const auto u = cli_baseline(f.manifest, f.ensemble, f.options, BaselineKind::kUntargeted, {}, f.dir / "u");
  EXPECT_EQ(t.n_ok(), 2u);
  EXPECT_EQ(u.n_ok(), 2u);
  for (const auto& o : u.images) {
    EXPECT_LE(o.linf, 8.0 / 255 + 1e-12);
    EXPECT_GT(o.linf, 0.0);
  }
  EXPECT_THROW(cli_baseline(f.manifest, f.ensemble, f.options, BaselineKind::kTargeted, {}, f.dir / "x"), DomainError);
}

TEST(Evaluate, PerfectPredictions) {
  Fixture f(3);
  std::vector<GeoPrediction> preds;
  for (const auto& r : f.manifest.records) preds.push_back({r.image_id, r.location, "", "m"});
  const auto rep = evaluate_predictions(f.manifest, preds);
  EXPECT_EQ(rep.accuracy, (std::vector<double>{1, 1, 1, 1, 1}));
  EXPECT_EQ(*rep.avg_distance_km, 0.0);
}

TEST(Evaluate, AllRefusals) {
  Fixture f(2);
  std::vector<GeoPrediction> preds;
  for (const auto& r : f.manifest.records) preds.push_back({r.image_id, std::nullopt, "no", "m"});
  const auto rep = evaluate_predictions(f.manifest, preds);
  EXPECT_EQ(rep.accuracy, (std::vector<double>{0, 0, 0, 0, 0}));
  EXPECT_FALSE(rep.avg_distance_km);
  EXPECT_EQ(rep.n_refused, 2u);
}

TEST(Evaluate, MismatchListsIds) {
  Fixture f(2);
  const std::vector<GeoPrediction> preds = {{"scene_000", std::nullopt, "", "m"}, {"zzz", std::nullopt, "", "m"}};
  try {
    evaluate_predictions(f.manifest, preds);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("scene_001"), std::string::npos);
    EXPECT_NE(w.find("zzz"), std::string::npos);
  }
}

TEST(Evaluate, FixtureTargetOnCleanImages) {
  Fixture f(3);
  FixtureTargetVlmClient client(f.dir / "data" / "target_fixtures.jsonl");
  const auto preds = predict_geolocations(client, f.manifest);
  const auto rep = evaluate_predictions(f.manifest, preds);
  EXPECT_EQ(rep.accuracy[0], 1.0);
  EXPECT_NEAR(*rep.avg_distance_km, 0.0, 1e-6);
  write_json(to_json(rep), f.dir / "r1.json");
  write_json(to_json(rep), f.dir / "r2.json");
  EXPECT_EQ(slurp(f.dir / "r1.json"), slurp(f.dir / "r2.json"));
}

TEST(Robustness, SweepShapeAndIdentityBlur) {
  Fixture f(2);
  cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "run");
  FixtureTargetVlmClient client(f.dir / "data" / "target_fixtures.jsonl");
  const auto settings = load_transform_sweep(json{{"jpeg_quality", {30, 60, 90}}, {"blur_radius", {0}}});
  ASSERT_EQ(settings.size(), 5u);
  const auto res = cli_robustness(f.manifest, f.dir / "run", settings, client, &f.ensemble, f.dir / "rob");
  ASSERT_EQ(res.rows.size(), 5u);
  for (const char* name : {"report_identity.json", "report_jpeg_q30.json", "report_jpeg_q60.json",
                           "report_jpeg_q90.json", "report_blur_r0.json", "robustness_table.json"})
    EXPECT_TRUE(fs::exists(f.dir / "rob" / name)) << name;
  EXPECT_EQ(slurp(f.dir / "rob" / "report_identity.json"), slurp(f.dir / "rob" / "report_blur_r0.json"));
  EXPECT_EQ(*res.rows[4].displacement_retained, 1.0);
  EXPECT_EQ(res.table()["rows"].size(), 5u);
}

TEST(Robustness, SweepValidation) {
  EXPECT_THROW(load_transform_sweep(json{{"jpeg_quality", {0}}}), DomainError);
  EXPECT_THROW(load_transform_sweep(json{{"blur_radius", {-1}}}), DomainError);
  EXPECT_THROW(load_transform_sweep(json{{"include_identity", false}}), DomainError);
  EXPECT_EQ(TransformSetting({TransformSetting::Kind::kBlur, 1.5}).label(), "blur_r1.5");
}

TEST(Sweep, SingleCellMatchesProtect) {
  Fixture f(2);
  f.options.working_size = 80;
  const auto cells = cli_sweep(f.manifest, f.ensemble, f.options, f.clients(), {80}, {8.0 / 255}, f.dir / "sw");
  ASSERT_EQ(cells.size(), 1u);
  const auto rm = cli_protect(f.manifest, f.ensemble, f.options, f.clients(), f.dir / "direct");
  for (const auto& o : rm.images)
    EXPECT_EQ(slurp(o.output), slurp(cells[0].run_dir / o.output.filename()));
}

TEST(Sweep, BudgetsRespectedPerCell) {
  Fixture f(2);
  const std::vector<double> budgets = {4.0 / 255, 8.0 / 255};
  const auto cells = cli_sweep(f.manifest, f.ensemble, f.options, f.clients(), {64, 96}, budgets, f.dir / "sw");
  ASSERT_EQ(cells.size(), 4u);
  for (const auto& c : cells) {
    EXPECT_EQ(c.n_ok, 2u);
    EXPECT_LE(c.max_linf, c.budget + 1e-12);
  }
  const json grid = read_json(f.dir / "sw" / "sweep_grid.json");
  EXPECT_EQ(grid["cells"].size(), 4u);
  EXPECT_EQ(grid["sizes"], json({64, 96}));
}

TEST(Synthetic, DatasetIsSelfContained) {
  TempDir dir("synth");
  const auto m = DatasetManifest::load(write_synthetic_dataset(dir / "d", 3, 64, 1));
  ASSERT_EQ(m.records.size(), 3u);
  for (const auto& r : m.records) EXPECT_TRUE(fs::exists(r.path));
  EXPECT_TRUE(fs::exists(dir / "d" / "vlm" / "index.json"));
  EXPECT_TRUE(fs::exists(dir / "d" / "detector.json"));
  EXPECT_THROW(write_synthetic_dataset(dir / "e", 1, 16, 1), DomainError);
}

}  // namespace
