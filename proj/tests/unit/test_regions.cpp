#include <doctest.h>

#include <queue>
#include <set>

#include "hfusion/errors.h"
#include "hfusion/regions.h"

using namespace hfusion;
using namespace hfusion::grpo;

namespace {

// 4-connected components of pixels with equal value.
std::vector<Mask> components_oracle(const Image& img) {
  std::vector<int> label(img.pixel_count(), -1);
  std::vector<Mask> out;
  for (int sy = 0; sy < img.height; ++sy) {
    for (int sx = 0; sx < img.width; ++sx) {
      if (label[sy * img.width + sx] >= 0) continue;
      Mask m(img.height, img.width);
      const int id = static_cast<int>(out.size());
      std::queue<std::pair<int, int>> q;
      q.push({sy, sx});
      label[sy * img.width + sx] = id;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        m.at(y, x) = 1;
        const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = y + dy[d], nx = x + dx[d];
          if (ny < 0 || nx < 0 || ny >= img.height || nx >= img.width) continue;
          if (label[ny * img.width + nx] >= 0) continue;
          if (img.at(ny, nx) != img.at(sy, sx)) continue;
          label[ny * img.width + nx] = id;
          q.push({ny, nx});
        }
      }
      out.push_back(m);
    }
  }
  return out;
}

std::set<std::vector<unsigned char>> mask_set(const std::vector<Mask>& masks) {
  std::set<std::vector<unsigned char>> s;
  for (const auto& m : masks) s.insert(m.data);
  return s;
}

}  // namespace

TEST_SUITE("regions") {

TEST_CASE("grid with four regions gives the quadrants") {
  const Image img(32, 32, 3, 0.5f);
  const RegionSet r = GridSegmenter().segment(img, 4);
  REQUIRE(r.size() == 4);
  CHECK(r.is_partition());
  CHECK(r.coverage() == 1.0);
  std::vector<Mask> quads;
  for (int qy = 0; qy < 2; ++qy) {
    for (int qx = 0; qx < 2; ++qx) {
      Mask m(32, 32);
      for (int y = 16 * qy; y < 16 * qy + 16; ++y)
        for (int x = 16 * qx; x < 16 * qx + 16; ++x) m.at(y, x) = 1;
      quads.push_back(m);
    }
  }
  CHECK(mask_set(r.masks) == mask_set(quads));
  for (const auto& m : r.masks) CHECK(m.area() == 256);
}

TEST_CASE("one region is the full image") {
  const Image img(9, 7, 1, 0.2f);
  for (const auto& seg : {make_segmenter("grid"), make_segmenter("superpixel")}) {
    const RegionSet r = seg->segment(img, 1);
    REQUIRE(r.size() == 1);
    CHECK(r.masks[0].area() == 63);
  }
}

TEST_CASE("grid partitions awkward counts") {
  const Image img(10, 13, 1);
  for (int k : {2, 3, 5, 6, 7, 12, 130}) {
    const RegionSet r = GridSegmenter().segment(img, k);
    CHECK(r.size() == static_cast<std::size_t>(k));
    CHECK(r.is_partition());
  }
}

TEST_CASE("superpixel splits a half-black half-white image on the edge") {
  Image img(16, 20, 1, 0.0f);
  for (int y = 0; y < 16; ++y)
    for (int x = 10; x < 20; ++x) img.at(y, x) = 1.0f;
  const RegionSet r = SuperpixelSegmenter().segment(img, 2);
  REQUIRE(r.size() == 2);
  CHECK(r.is_partition());
  CHECK(mask_set(r.masks) == mask_set(components_oracle(img)));
}

TEST_CASE("superpixel recovers flat blobs") {
  Image img(12, 12, 1, 0.1f);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) img.at(y, x) = 0.9f;
  for (int y = 7; y < 11; ++y)
    for (int x = 6; x < 11; ++x) img.at(y, x) = 0.5f;
  const RegionSet r = SuperpixelSegmenter().segment(img, 3);
  CHECK(mask_set(r.masks) == mask_set(components_oracle(img)));
}

TEST_CASE("region count validation") {
  const Image img(4, 4, 1);
  CHECK_THROWS_AS(GridSegmenter().segment(img, 17), RangeError);
  CHECK_THROWS_AS(SuperpixelSegmenter().segment(img, 17), RangeError);
  CHECK_THROWS_AS(GridSegmenter().segment(img, 0), RangeError);
  CHECK_NOTHROW(GridSegmenter().segment(img, 16));
  CHECK_THROWS_AS(make_segmenter("sam"), ValidationError);
}

}
