#include "hfusion/overlay.h"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace hfusion::overlay {

std::vector<Circle> artifact_circles(const Plane& heatmap, int height, int width,
                                     double threshold) {
  cv::Mat heat(heatmap.height, heatmap.width, CV_64F, const_cast<double*>(heatmap.data.data()));
  cv::Mat sized;
  if (heatmap.height != height || heatmap.width != width) {
    cv::resize(heat, sized, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  } else {
    sized = heat;
  }
  cv::Mat binary = sized > threshold;
  cv::Mat labels;
  const int n = cv::connectedComponents(binary, labels, 8, CV_32S);
  std::vector<std::vector<cv::Point2f>> members(static_cast<std::size_t>(std::max(n, 1)));
  for (int y = 0; y < labels.rows; ++y) {
    for (int x = 0; x < labels.cols; ++x) {
      const int l = labels.at<int>(y, x);
      if (l > 0) members[l].emplace_back(static_cast<float>(x), static_cast<float>(y));
    }
  }
  std::vector<Circle> circles;
  for (int l = 1; l < n; ++l) {
    cv::Point2f center;
    float radius = 0.0f;
    cv::minEnclosingCircle(members[l], center, radius);
    circles.push_back({center.x, center.y, radius});
  }
  return circles;
}

Image draw_overlay(const Image& fused, const std::vector<Circle>& circles) {
  Image out = to_rgb(fused);
  if (circles.empty()) return out;
  cv::Mat canvas(out.height, out.width, CV_32FC3, out.data.data());
  for (const auto& c : circles) {
    const int r = std::max(1, static_cast<int>(std::lround(c.radius)));
    cv::circle(canvas, cv::Point(static_cast<int>(std::lround(c.cx)), static_cast<int>(std::lround(c.cy))),
               r, cv::Scalar(1.0, 0.0, 0.0), 1, cv::LINE_8);
  }
  return out;
}

Image heatmap_image(const Plane& heatmap) {
  Image out(heatmap.height, heatmap.width, 1);
  for (std::size_t i = 0; i < heatmap.data.size(); ++i) {
    out.data[i] = static_cast<float>(std::clamp(heatmap.data[i], 0.0, 1.0));
  }
  return out;
}

}  // namespace hfusion::overlay
