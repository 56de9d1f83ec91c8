#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hfusion/annotation.h"
#include "hfusion/errors.h"
#include "oracles.h"

using namespace hfusion;
using namespace hfusion::annotation;
using hfusion::testing::disk_oracle;

namespace {

const char* kListing = R"({
  "scores": {
    "Thermal Retention": 4,
    "Texture Preservation": 3,
    "Artifacts": 2,
    "Sharpness": 3,
    "Overall Score": 3
  },
  "shapes": [
    {"label": "Artifacts", "points": [[390, 420], [430, 420]], "shape_type": "circle"},
    {"label": "Artifacts", "points": [[250, 170], [290, 170]], "shape_type": "circle"}
  ]
})";

const ImageDims k640x480{480, 640};

std::string all_threes(const std::string& shapes = "[]") {
  return R"({"scores": {"Thermal Retention": 3, "Texture Preservation": 3, "Artifacts": 3,
             "Sharpness": 3, "Overall Score": 3}, "shapes": )" +
         shapes + "}";
}

std::string error_of(const std::string& doc, ImageDims dims = {32, 32}) {
  try {
    parse_annotation(doc, dims);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("annotation") {

TEST_CASE("listing parses to the expected scores and radii") {
  const auto r = parse_annotation(kListing, k640x480);
  CHECK(r.scores == ScoreVector{4, 3, 2, 3, 3});
  REQUIRE(r.shapes.size() == 2);
  CHECK(r.shapes[0].center == Point{390, 420});
  CHECK(r.shapes[0].rim_point == Point{430, 420});
  CHECK(r.shapes[1].center == Point{250, 170});
  CHECK(r.shapes[0].radius() == 40.0);
  CHECK(r.shapes[1].radius() == 40.0);
}

TEST_CASE("empty shapes are valid") {
  const auto r = parse_annotation(all_threes(), {16, 16});
  CHECK(r.shapes.empty());
  CHECK(r.scores == ScoreVector{3, 3, 3, 3, 3});
}

TEST_CASE("schema, range, shape and bounds errors") {
  std::string doc = all_threes();
  doc.replace(doc.find("\"Sharpness\": 3"), 14, "\"Sharpness\": 6");
  try {
    parse_annotation(doc, {32, 32});
    FAIL("expected RangeError");
  } catch (const RangeError& e) {
    CHECK(std::string(e.what()).find("Sharpness") != std::string::npos);
  }

  std::string missing = all_threes();
  missing.replace(missing.find("\"Artifacts\": 3,"), 15, "");
  CHECK(error_of(missing).find("Artifacts") != std::string::npos);
  CHECK_THROWS_AS(parse_annotation(missing, {32, 32}), SchemaError);
  CHECK_THROWS_AS(parse_annotation(R"({"shapes": []})", {32, 32}), SchemaError);
  CHECK_THROWS_AS(parse_annotation("{not json", {32, 32}), SchemaError);

  CHECK_THROWS_AS(parse_annotation(all_threes(R"([{"label":"Artifacts","points":[[1,1]],"shape_type":"circle"}])"), {32, 32}),
                  ShapeError);
  CHECK_THROWS_AS(parse_annotation(all_threes(R"([{"label":"Artifacts","points":[[1,1],[2,2]],"shape_type":"polygon"}])"), {32, 32}),
                  ShapeError);
  CHECK_THROWS_AS(parse_annotation(all_threes(R"([{"label":"Artifacts","points":[[4,4],[4,4]],"shape_type":"circle"}])"), {32, 32}),
                  ShapeError);
  CHECK_THROWS_AS(parse_annotation(all_threes(R"([{"label":"Artifacts","points":[[40,4],[42,4]],"shape_type":"circle"}])"), {32, 32}),
                  BoundsError);
  // Rim outside the image is allowed.
  CHECK_NOTHROW(parse_annotation(all_threes(R"([{"label":"Artifacts","points":[[30,4],[50,4]],"shape_type":"circle"}])"), {32, 32}));
  CHECK_THROWS_AS(parse_annotation(kListing, {32, 32}), BoundsError);
}

TEST_CASE("serialize and parse round trip exactly") {
  auto r = parse_annotation(kListing, k640x480);
  r.triplet_id = "scene__m";
  r.annotator = "expert";
  r.reviewed = true;
  r.shapes.push_back({{10.5, 20.25}, {13.5, 24.25}, "Artifacts"});
  const auto back = parse_annotation(serialize_annotation(r), k640x480);
  CHECK(back == r);
}

TEST_CASE("empty heatmap and the 13-pixel disk") {
  const auto empty = rasterize_heatmap({}, {16, 16});
  CHECK(std::all_of(empty.data.begin(), empty.data.end(), [](double v) { return v == 0.0; }));
  const std::vector<CircleAnnotation> one = {{{8, 8}, {10, 8}, "Artifacts"}};
  const auto h = rasterize_heatmap(one, {16, 16});
  CHECK(std::count(h.data.begin(), h.data.end(), 1.0) == 13);
  CHECK(h.data == disk_oracle(one, 16, 16).data);
}

TEST_CASE("random circle sets match the distance oracle bit for bit") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(0.0, 31.999);
  std::uniform_real_distribution<double> off(-9.0, 9.0);
  std::uniform_int_distribution<int> count(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CircleAnnotation> shapes;
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      const Point c{std::floor(pos(rng)), std::floor(pos(rng))};
      shapes.push_back({c, {c.x + std::round(off(rng)), c.y + std::round(off(rng)) + 0.5}, "Artifacts"});
    }
    const auto h = rasterize_heatmap(shapes, {32, 32});
    CHECK(h.data == disk_oracle(shapes, 32, 32).data);
  }
}

TEST_CASE("union is the elementwise max, order independent and monotone") {
  const CircleAnnotation a{{10, 10}, {15, 10}, "Artifacts"};
  const CircleAnnotation b{{13, 12}, {13, 18}, "Artifacts"};
  const auto ha = rasterize_heatmap({a}, {32, 32});
  const auto hb = rasterize_heatmap({b}, {32, 32});
  const auto hab = rasterize_heatmap({a, b}, {32, 32});
  const auto hba = rasterize_heatmap({b, a}, {32, 32});
  CHECK(hab.data == hba.data);
  for (std::size_t i = 0; i < hab.data.size(); ++i) {
    CHECK(hab.data[i] == std::max(ha.data[i], hb.data[i]));
    CHECK(hab.data[i] >= ha.data[i]);
  }
}

TEST_CASE("gaussian style peaks at the center and stays in [0,1]") {
  const CircleAnnotation c{{16, 16}, {20, 16}, "Artifacts"};
  const auto h = rasterize_heatmap({c}, {32, 32}, HeatmapStyle::kGaussian);
  CHECK(h.at(16, 16) == 1.0);
  // sigma = r/2 = 2, so one radius away the value is exp(-2).
  CHECK(h.at(16, 20) == doctest::Approx(std::exp(-2.0)));
  for (double v : h.data) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("score normalization") {
  CHECK(normalize_scores({1, 1, 1, 1, 1}) == std::array<double, 5>{0, 0, 0, 0, 0});
  CHECK(normalize_scores({5, 5, 5, 5, 5}) == std::array<double, 5>{1, 1, 1, 1, 1});
  CHECK(normalize_scores({4, 3, 2, 3, 3}) == std::array<double, 5>{0.75, 0.5, 0.25, 0.5, 0.5});
  const ScoreVector s{1.3, 2.7, 4.9, 3.1, 1.0};
  const auto back = denormalize_scores(normalize_scores(s)).as_array();
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(back[i] - s.as_array()[i]) <= 1e-12);
}

TEST_CASE("discrepancy of a record with itself") {
  const auto a = parse_annotation(kListing, k640x480);
  const auto d = annotation_discrepancy(a, a, k640x480);
  CHECK(d.score_err == 0.0);
  CHECK(d.heatmap_err < 2e-5);
}

TEST_CASE("unit score offset gives 0.0625") {
  AnnotationRecord a, b;
  a.scores = {2, 2, 2, 2, 2};
  b.scores = {3, 3, 3, 3, 3};
  CHECK(annotation_discrepancy(a, b, {8, 8}).score_err == doctest::Approx(0.0625));
}

TEST_CASE("disjoint circles: heatmap error matches per-pixel BCE") {
  AnnotationRecord a, b;
  a.shapes = {{{8, 8}, {11, 8}, "Artifacts"}};
  b.shapes = {{{22, 22}, {25, 22}, "Artifacts"}};
  const auto ha = disk_oracle(a.shapes, 32, 32);
  const auto hb = disk_oracle(b.shapes, 32, 32);
  const double eps = 1e-6;
  double sum = 0.0;
  for (std::size_t i = 0; i < 1024; ++i) {
    const double t = std::clamp(ha.data[i], eps, 1 - eps);
    const double p = std::clamp(hb.data[i], eps, 1 - eps);
    sum += -(t * std::log(p) + (1 - t) * std::log(1 - p));
  }
  const auto d = annotation_discrepancy(a, b, {32, 32});
  CHECK(d.heatmap_err == doctest::Approx(sum / 1024.0).epsilon(1e-12));
}

TEST_CASE("discrepancy requires matching triplet ids") {
  AnnotationRecord a, b;
  a.triplet_id = "x";
  b.triplet_id = "y";
  CHECK_THROWS_AS(annotation_discrepancy(a, b, {8, 8}), ValidationError);
}

}
