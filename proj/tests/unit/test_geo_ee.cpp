#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "geoshield/errors.hpp"
#include "geoshield/geo_ee.hpp"
#include "geoshield/psae.hpp"
#include "geoshield/synthetic.hpp"
#include "support.hpp"

using namespace geoshield;
using geoshield::test_support::random_image;

namespace {

nlohmann::json det(double top, double left, double h, double w, const std::string& label, double score) {
  return {{"top", top}, {"left", left}, {"height", h}, {"width", w}, {"label", label}, {"score", score}};
}

FixtureVlmClient entity_client(nlohmann::json entities) {
  return FixtureVlmClient(nlohmann::json{{"*", {{"description", "x"}, {"entities", std::move(entities)}}}});
}

TEST(Entities, FixtureReplay) {
  auto client = entity_client({"clock tower", "tram"});
  const auto e = identify_geo_entities(client, Image(8, 8));
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].name, "clock tower");
  EXPECT_EQ(e[1].name, "tram");
}

TEST(Entities, EmptyListAndDeduplication) {
  auto empty = entity_client(nlohmann::json::array());
  EXPECT_TRUE(identify_geo_entities(empty, Image(8, 8)).empty());
  auto dup = entity_client({"Clock Tower", " clock tower ", "TRAM", "tram", ""});
  const auto e = identify_geo_entities(dup, Image(8, 8));
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].name, "Clock Tower");
  EXPECT_EQ(e[1].name, "TRAM");
}

TEST(Entities, Cached) {
  auto client = entity_client({"church"});
  ResponseCache cache;
  identify_geo_entities(client, Image(8, 8), &cache);
  identify_geo_entities(client, Image(8, 8), &cache);
  EXPECT_EQ(client.calls(), 1);
}

TEST(DetectBoxes, PassesThroughMockBoxes) {
  MockDetector detector(nlohmann::json{{"*", {det(10, 20, 30, 40, "clock tower", 0.9), det(50, 5, 20, 20, "tram", 0.8)}}});
  const auto r = detect_boxes(detector, Image(100, 100), {{"clock tower", {}}, {"tram", {}}});
  ASSERT_EQ(r.boxes.size(), 2u);
  EXPECT_EQ(r.boxes[0].region, (CropRegion{10, 20, 30, 40}));
  EXPECT_EQ(r.boxes[0].entity.name, "clock tower");
  EXPECT_EQ(r.boxes[1].region, (CropRegion{50, 5, 20, 20}));
  EXPECT_TRUE(r.warnings.empty());
}

TEST(DetectBoxes, NoEntitiesMeansNoDetectorCall) {
  MockDetector detector(nlohmann::json{{"*", {det(0, 0, 10, 10, "x", 0.9)}}});
  EXPECT_TRUE(detect_boxes(detector, Image(20, 20), {}).boxes.empty());
  EXPECT_EQ(detector.calls(), 0);
}

TEST(DetectBoxes, MergesNearDuplicatesKeepingHigherScore) {
  // 100x100 vs 100x95 inside it: IoU 0.95
  MockDetector detector(nlohmann::json{{"*", {det(0, 0, 100, 95, "a", 0.7), det(0, 0, 100, 100, "a", 0.9)}}});
  const auto r = detect_boxes(detector, Image(200, 200), {{"a", {}}});
  ASSERT_EQ(r.boxes.size(), 1u);
  EXPECT_EQ(r.boxes[0].score, 0.9);
  EXPECT_EQ(r.boxes[0].region, (CropRegion{0, 0, 100, 100}));
  EXPECT_NEAR(iou({0, 0, 100, 95}, {0, 0, 100, 100}), 0.95, 1e-12);
}

TEST(DetectBoxes, ClipsToImageWithWarning) {
  MockDetector detector(nlohmann::json{{"*", {det(80, 70, 23, 20, "a", 0.9)}}});
  const auto r = detect_boxes(detector, Image(100, 80), {{"a", {}}});
  ASSERT_EQ(r.boxes.size(), 1u);
  EXPECT_EQ(r.boxes[0].region, (CropRegion{80, 70, 20, 10}));
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("clipped"), std::string::npos);
}

TEST(DetectBoxes, ThresholdAndCap) {
  nlohmann::json list = nlohmann::json::array();
  for (int i = 0; i < 6; ++i) list.push_back(det(i * 15, 0, 10, 10, "a", 0.3 + 0.1 * i));
  MockDetector detector(nlohmann::json{{"*", list}});
  DetectionConfig cfg;
  cfg.max_boxes = 2;
  const auto r = detect_boxes(detector, Image(100, 20), {{"a", {}}}, cfg);
  ASSERT_EQ(r.boxes.size(), 2u);
  EXPECT_NEAR(r.boxes[0].score, 0.8, 1e-12);
  EXPECT_NEAR(r.boxes[1].score, 0.7, 1e-12);
  cfg.max_boxes = 8;
  EXPECT_EQ(detect_boxes(detector, Image(100, 20), {{"a", {}}}, cfg).boxes.size(), 5u);
}

TEST(DetectBoxes, DropsBoxesOutsideImage) {
  MockDetector detector(nlohmann::json{{"*", {det(200, 200, 10, 10, "a", 0.9)}}});
  const auto r = detect_boxes(detector, Image(50, 50), {{"a", {}}});
  EXPECT_TRUE(r.boxes.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(BoxFeatures, FullImageBoxEqualsGlobalFeature) {
  const auto ens = test_support::toy_ensemble();
  const Image img = synthetic_scene(3, 120, 160).image;
  const auto t = box_features(ens, img, {{full_region(img), {"all", {}}, 1.0}});
  for (std::size_t i = 0; i < ens.size(); ++i) EXPECT_EQ(t.features[i][0], encode_image(ens[i], img).normalized());
}

TEST(BoxFeatures, EmptyAndSmallBoxes) {
  const auto ens = test_support::toy_ensemble();
  const Image img = random_image(1, 64, 64);
  const auto empty = box_features(ens, img, {});
  EXPECT_EQ(empty.features.size(), ens.size());
  EXPECT_TRUE(empty.features[0].empty());
  const auto small = box_features(ens, img, {{{0, 0, 10, 40}, {"tiny", {}}, 0.9}, {{5, 5, 30, 30}, {"ok", {}}, 0.9}});
  EXPECT_EQ(small.used_boxes, (std::vector<std::size_t>{1}));
  EXPECT_EQ(small.warnings.size(), 1u);
}

TEST(BoxFeatures, PermutationEquivariant) {
  const auto ens = test_support::toy_ensemble();
  const auto scene = synthetic_scene(5, 160, 160);
  std::vector<BoundingBox> boxes;
  for (const auto& r : scene.landmarks) boxes.push_back({r, {"b", {}}, 0.9});
  boxes.push_back({{20, 30, 40, 50}, {"extra", {}}, 0.5});
  std::vector<BoundingBox> reversed(boxes.rbegin(), boxes.rend());
  const auto a = box_features(ens, scene.image, boxes), b = box_features(ens, scene.image, reversed);
  const std::size_t n = boxes.size();
  for (std::size_t i = 0; i < ens.size(); ++i)
    for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(a.features[i][k], b.features[i][n - 1 - k]);
}

TEST(BoxFeatures, GoldenTable) {
  const auto ens = test_support::toy_ensemble();
  const auto bundle = test_support::fixture_bundle(ens, synthetic_scene(100, 224, 224));
  const auto& boxes = bundle.pairs[0].boxes;
  ASSERT_EQ(boxes.size(), 4u);
  const double golden[4][2] = {{-0.19278801707629226, 0.052032720404853842},
                               {-0.00057111763202248372, -0.096187776873043987},
                               {-0.12834220180961153, -0.04573192403981953},
                               {-0.17563181753429435, -0.12163838439302022}};
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(boxes[k][j], golden[k][j], 1e-9);
}

TEST(BoxFeatures, NoBoxesMatchesAlphaFreeLossExactly) {
  const auto ens = test_support::toy_ensemble();
  const auto scene = synthetic_scene(9, 128, 128);
  const auto bundle = build_geo_bundle(ens, scene.image, test_support::fixture_description());
  std::vector<PairViewFeatures> f;
  for (std::size_t i = 0; i < ens.size(); ++i) f.push_back({encode_image(ens[i], scene.image), std::nullopt});
  EXPECT_EQ(total_loss(ens, f, bundle, 1.0, 1.0).value, total_loss(ens, f, bundle, 0.0, 1.0).value);
}

TEST(ScaleRegion, MapsBetweenResolutions) {
  EXPECT_EQ(scale_region({10, 20, 30, 40}, 100, 200, 200, 400), (CropRegion{20, 40, 60, 80}));
  const CropRegion r = scale_region({0, 0, 100, 200}, 100, 200, 33, 67);
  EXPECT_TRUE(region_inside(r, 33, 67));
  EXPECT_THROW(scale_region({0, 0, 1, 1}, 0, 1, 1, 1), DomainError);
}

TEST(MockDetector, FileTable) {
  test_support::TempDir dir("det");
  const Image img = random_image(3, 30, 30);
  {
    std::ofstream out(dir / "d.json");
    out << nlohmann::json{{content_hash(img), {det(1, 2, 20, 20, "a", 0.9)}}}.dump();
  }
  MockDetector detector(dir / "d.json");
  EXPECT_EQ(detector.detect(img, {"a"}).size(), 1u);
  EXPECT_TRUE(detector.detect(random_image(4, 30, 30), {"a"}).empty());
  EXPECT_THROW(MockDetector(dir / "missing.json"), IoError);
}

}  // namespace
