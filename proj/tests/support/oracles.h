#pragma once

#include <set>
#include <string>
#include <vector>

#include "hfusion/annotation.h"
#include "hfusion/data_pipeline.h"
#include "hfusion/image.h"

// Straight-line reimplementations used to cross-check library results.
namespace hfusion::testing {

// 1 where some circle covers the integer pixel center.
Plane disk_oracle(const std::vector<annotation::CircleAnnotation>& shapes, int h, int w);

// Edge preservation with an explicitly padded image and 3x3 kernels.
double qabf_oracle(const Plane& fused, const Plane& visible, const Plane& infrared);

double pearson_oracle(const Plane& a, const Plane& b);

// Connected components of the >= threshold similarity graph (Floyd-Warshall).
std::set<std::set<std::string>> closure_oracle(const std::vector<data::EmbeddingVector>& e,
                                               double threshold);

std::set<std::set<std::string>> as_sets(const std::vector<data::SceneCluster>& clusters);

}  // namespace hfusion::testing
