#include "hfusion/annotation.h"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "hfusion/errors.h"

namespace hfusion::annotation {

using json = nlohmann::ordered_json;

double CircleAnnotation::radius() const { return std::sqrt(radius_squared()); }

namespace {

json number(double v) {
  if (std::isfinite(v) && std::floor(v) == v && std::abs(v) < 9e15) {
    return json(static_cast<long long>(v));
  }
  return json(v);
}

double read_number(const json& j, const std::string& what) {
  if (!j.is_number()) throw SchemaError(what + " must be a number");
  return j.get<double>();
}

Point read_point(const json& j, std::size_t shape_index, int which) {
  const std::string what =
      "shapes[" + std::to_string(shape_index) + "].points[" + std::to_string(which) + "]";
  if (!j.is_array() || j.size() != 2) throw ShapeError(what + " must be [x, y]");
  return {read_number(j[0], what + ".x"), read_number(j[1], what + ".y")};
}

}  // namespace

void validate_scores(const ScoreVector& scores) {
  const auto values = scores.as_array();
  for (std::size_t i = 0; i < kNumScores; ++i) {
    if (!(values[i] >= 1.0 && values[i] <= 5.0)) {
      throw RangeError("score \"" + std::string(kScoreKeys[i]) + "\" = " +
                       std::to_string(values[i]) + " outside [1,5]");
    }
  }
}

AnnotationRecord parse_annotation(std::string_view document, ImageDims dims,
                                  const std::string& triplet_id) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("annotation must be a JSON object");
  if (!doc.contains("scores") || !doc["scores"].is_object()) {
    throw SchemaError("missing key \"scores\"");
  }
  if (!doc.contains("shapes") || !doc["shapes"].is_array()) {
    throw SchemaError("missing key \"shapes\"");
  }

  AnnotationRecord record;
  std::array<double, kNumScores> values{};
  const json& scores = doc["scores"];
  for (std::size_t i = 0; i < kNumScores; ++i) {
    const std::string key(kScoreKeys[i]);
    if (!scores.contains(key)) throw SchemaError("missing score key \"" + key + "\"");
    values[i] = read_number(scores[key], "score \"" + key + "\"");
  }
  record.scores = ScoreVector::from_array(values);
  validate_scores(record.scores);

  const json& shapes = doc["shapes"];
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const json& shape = shapes[s];
    const std::string where = "shapes[" + std::to_string(s) + "]";
    if (!shape.is_object()) throw ShapeError(where + " must be an object");
    const std::string type = shape.value("shape_type", std::string{});
    if (type != "circle") {
      throw ShapeError(where + ": shape_type must be \"circle\", got \"" + type + "\"");
    }
    if (!shape.contains("points") || !shape["points"].is_array() ||
        shape["points"].size() != 2) {
      throw ShapeError(where + ": circle needs exactly 2 points");
    }
    CircleAnnotation circle;
    circle.center = read_point(shape["points"][0], s, 0);
    circle.rim_point = read_point(shape["points"][1], s, 1);
    circle.label = shape.value("label", std::string("Artifacts"));
    if (circle.label != "Artifacts") {
      throw ShapeError(where + ": label must be \"Artifacts\"");
    }
    if (!(circle.radius_squared() > 0.0)) throw ShapeError(where + ": zero radius");
    if (!(circle.center.x >= 0.0 && circle.center.x < dims.width &&
          circle.center.y >= 0.0 && circle.center.y < dims.height)) {
      throw BoundsError(where + ": center (" + std::to_string(circle.center.x) + ", " +
                        std::to_string(circle.center.y) + ") outside " +
                        std::to_string(dims.width) + "x" + std::to_string(dims.height) +
                        " image");
    }
    record.shapes.push_back(std::move(circle));
  }

  record.triplet_id = doc.value("triplet_id", std::string{});
  if (!triplet_id.empty()) record.triplet_id = triplet_id;
  record.annotator = doc.value("annotator", std::string{});
  if (doc.contains("reviewed")) {
    if (!doc["reviewed"].is_boolean()) throw SchemaError("\"reviewed\" must be boolean");
    record.reviewed = doc["reviewed"].get<bool>();
  }
  return record;
}

std::string serialize_annotation(const AnnotationRecord& record, bool with_metadata) {
  json doc;
  json scores = json::object();
  const auto values = record.scores.as_array();
  for (std::size_t i = 0; i < kNumScores; ++i) {
    scores[std::string(kScoreKeys[i])] = number(values[i]);
  }
  doc["scores"] = scores;
  json shapes = json::array();
  for (const auto& c : record.shapes) {
    json shape;
    shape["label"] = c.label;
    shape["points"] = json::array({json::array({number(c.center.x), number(c.center.y)}),
                                   json::array({number(c.rim_point.x), number(c.rim_point.y)})});
    shape["shape_type"] = "circle";
    shapes.push_back(shape);
  }
  doc["shapes"] = shapes;
  if (with_metadata) {
    if (!record.triplet_id.empty()) doc["triplet_id"] = record.triplet_id;
    if (!record.annotator.empty()) doc["annotator"] = record.annotator;
    doc["reviewed"] = record.reviewed;
  }
  return doc.dump(2);
}

HeatmapLabel rasterize_heatmap(const std::vector<CircleAnnotation>& shapes, ImageDims dims,
                               HeatmapStyle style) {
  HeatmapLabel out(dims.height, dims.width, 0.0);
  for (const auto& c : shapes) {
    const double r2 = c.radius_squared();
    const double sigma = 0.5 * std::sqrt(r2);
    for (int y = 0; y < dims.height; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        const double dx = x - c.center.x;
        const double dy = y - c.center.y;
        const double d2 = dx * dx + dy * dy;
        double v = 0.0;
        if (style == HeatmapStyle::kBinary) {
          v = d2 <= r2 ? 1.0 : 0.0;
        } else {
          v = std::exp(-d2 / (2.0 * sigma * sigma));
        }
        out.at(y, x) = std::max(out.at(y, x), v);
      }
    }
  }
  return out;
}

std::array<double, kNumScores> normalize_scores(const ScoreVector& scores) {
  auto a = scores.as_array();
  for (auto& v : a) v = (v - 1.0) / 4.0;
  return a;
}

ScoreVector denormalize_scores(const std::array<double, kNumScores>& normalized) {
  auto a = normalized;
  for (auto& v : a) v = 1.0 + 4.0 * v;
  return ScoreVector::from_array(a);
}

Discrepancy annotation_discrepancy(const AnnotationRecord& a, const AnnotationRecord& b,
                                   ImageDims dims) {
  if (a.triplet_id != b.triplet_id) {
    throw ValidationError("triplet_id mismatch: " + a.triplet_id + " vs " + b.triplet_id);
  }
  Discrepancy d;
  const auto na = normalize_scores(a.scores);
  const auto nb = normalize_scores(b.scores);
  for (std::size_t i = 0; i < kNumScores; ++i) {
    d.score_err += (na[i] - nb[i]) * (na[i] - nb[i]);
  }
  d.score_err /= static_cast<double>(kNumScores);

  const HeatmapLabel ha = rasterize_heatmap(a.shapes, dims);
  const HeatmapLabel hb = rasterize_heatmap(b.shapes, dims);
  double bce = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) {
    const double t = std::clamp(ha.data[i], kBceEps, 1.0 - kBceEps);
    const double p = std::clamp(hb.data[i], kBceEps, 1.0 - kBceEps);
    bce -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  d.heatmap_err = ha.size() > 0 ? bce / static_cast<double>(ha.size()) : 0.0;
  return d;
}

}  // namespace hfusion::annotation
