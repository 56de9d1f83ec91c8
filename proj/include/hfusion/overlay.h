#pragma once

#include <vector>

#include "hfusion/image.h"

namespace hfusion::overlay {

struct Circle {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

// Pixels strictly above `threshold` are grouped into 8-connected components;
// each component yields its minimal enclosing circle. The heatmap is first
// bilinearly resized to height x width when its size differs.
std::vector<Circle> artifact_circles(const Plane& heatmap, int height, int width,
                                     double threshold = 0.5);

// Fused image with each circle outlined in red.
Image draw_overlay(const Image& fused, const std::vector<Circle>& circles);

// Single-channel image of a [0,1] plane, for saving as grayscale PNG.
Image heatmap_image(const Plane& heatmap);

}  // namespace hfusion::overlay
