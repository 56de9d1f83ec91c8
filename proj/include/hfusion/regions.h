#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hfusion/image.h"

namespace hfusion::grpo {

struct RegionSet {
  std::vector<Mask> masks;

  [[nodiscard]] std::size_t size() const { return masks.size(); }
  // Fraction of pixels covered by the union of masks.
  [[nodiscard]] double coverage() const;
  // Every mask non-empty, masks pairwise disjoint, union is the full image.
  [[nodiscard]] bool is_partition() const;
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  [[nodiscard]] virtual RegionSet segment(const Image& fused, int k_target) const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

// Tiles the image into k near-equal rectangles (rows x cols with rows the
// largest divisor of k not above sqrt(k)). Falls back to raster-order strips
// when k does not factor onto the image.
class GridSegmenter final : public Segmenter {
 public:
  [[nodiscard]] RegionSet segment(const Image& fused, int k_target) const override;
  [[nodiscard]] std::string name() const override { return "grid"; }
};

// Greedy region merging over the 4-connected pixel graph: repeatedly merges
// the adjacent pair with the closest mean luma (ties broken by smaller
// combined size, then by region index) until k regions remain.
class SuperpixelSegmenter final : public Segmenter {
 public:
  [[nodiscard]] RegionSet segment(const Image& fused, int k_target) const override;
  [[nodiscard]] std::string name() const override { return "superpixel"; }
};

std::unique_ptr<Segmenter> make_segmenter(const std::string& name);

}  // namespace hfusion::grpo
