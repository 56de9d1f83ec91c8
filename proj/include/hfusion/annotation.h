#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "hfusion/image.h"

namespace hfusion::annotation {

inline constexpr std::size_t kNumScores = 5;

// JSON keys, in score-vector order.
inline constexpr std::array<std::string_view, kNumScores> kScoreKeys = {
    "Thermal Retention", "Texture Preservation", "Artifacts", "Sharpness",
    "Overall Score"};

inline constexpr std::size_t kOverallIndex = 4;

struct ScoreVector {
  double thermal_retention = 3.0;
  double texture_preservation = 3.0;
  double artifacts = 3.0;
  double sharpness = 3.0;
  double overall = 3.0;

  [[nodiscard]] std::array<double, kNumScores> as_array() const {
    return {thermal_retention, texture_preservation, artifacts, sharpness, overall};
  }
  static ScoreVector from_array(const std::array<double, kNumScores>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }

  bool operator==(const ScoreVector&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct CircleAnnotation {
  Point center;
  Point rim_point;
  std::string label = "Artifacts";

  [[nodiscard]] double radius_squared() const {
    const double dx = rim_point.x - center.x;
    const double dy = rim_point.y - center.y;
    return dx * dx + dy * dy;
  }
  [[nodiscard]] double radius() const;

  bool operator==(const CircleAnnotation&) const = default;
};

struct AnnotationRecord {
  std::string triplet_id;
  ScoreVector scores;
  std::vector<CircleAnnotation> shapes;
  std::string annotator;
  bool reviewed = false;

  bool operator==(const AnnotationRecord&) const = default;
};

struct ImageDims {
  int height = 0;
  int width = 0;
};

// Per-pixel values in [0,1], row-major.
using HeatmapLabel = Plane;

// Parses one annotation document ({"scores": {...}, "shapes": [...]}).
// Optional top-level "triplet_id", "annotator" and "reviewed" keys are read
// when present; `triplet_id` overrides the document's value when non-empty.
AnnotationRecord parse_annotation(std::string_view document, ImageDims dims,
                                  const std::string& triplet_id = {});

// Emits the document schema; metadata keys are included only if set.
std::string serialize_annotation(const AnnotationRecord& record, bool with_metadata = true);

enum class HeatmapStyle { kBinary, kGaussian };

// Binary: 1 where some circle covers the pixel center ((x-cx)^2+(y-cy)^2 <= r^2).
// Gaussian: max over circles of exp(-d^2 / (2 sigma^2)), sigma = r/2.
HeatmapLabel rasterize_heatmap(const std::vector<CircleAnnotation>& shapes, ImageDims dims,
                               HeatmapStyle style = HeatmapStyle::kBinary);

std::array<double, kNumScores> normalize_scores(const ScoreVector& scores);
ScoreVector denormalize_scores(const std::array<double, kNumScores>& normalized);

void validate_scores(const ScoreVector& scores);

struct Discrepancy {
  double score_err = 0.0;
  double heatmap_err = 0.0;
};

inline constexpr double kBceEps = 1e-6;

// score_err: mean squared difference of normalized scores.
// heatmap_err: mean BCE with `a` as target and `b` as prediction, both clamped
// to [eps, 1-eps].
Discrepancy annotation_discrepancy(const AnnotationRecord& a, const AnnotationRecord& b,
                                   ImageDims dims);

}  // namespace hfusion::annotation
