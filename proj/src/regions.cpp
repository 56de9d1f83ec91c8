#include "hfusion/regions.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>
#include <utility>

#include "hfusion/errors.h"

namespace hfusion::grpo {

double RegionSet::coverage() const {
  if (masks.empty()) return 0.0;
  const std::size_t n = masks.front().data.size();
  std::size_t covered = 0;
  for (std::size_t p = 0; p < n; ++p) {
    for (const auto& m : masks) {
      if (m.data[p]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(n);
}

bool RegionSet::is_partition() const {
  if (masks.empty()) return false;
  const std::size_t n = masks.front().data.size();
  for (const auto& m : masks) {
    if (m.data.size() != n || m.area() == 0) return false;
  }
  for (std::size_t p = 0; p < n; ++p) {
    int hits = 0;
    for (const auto& m : masks) hits += m.data[p] ? 1 : 0;
    if (hits != 1) return false;
  }
  return true;
}

namespace {

void check_k(const Image& image, int k) {
  if (k < 1) throw RangeError("region count must be at least 1");
  if (static_cast<std::size_t>(k) > image.pixel_count()) {
    throw RangeError("region count " + std::to_string(k) + " exceeds pixel count " +
                     std::to_string(image.pixel_count()));
  }
}

RegionSet from_labels(const std::vector<int>& labels, int count, int h, int w) {
  RegionSet set;
  set.masks.assign(count, Mask(h, w, 0));
  for (std::size_t p = 0; p < labels.size(); ++p) set.masks[labels[p]].data[p] = 1;
  return set;
}

}  // namespace

RegionSet GridSegmenter::segment(const Image& fused, int k) const {
  check_k(fused, k);
  const int h = fused.height;
  const int w = fused.width;
  int rows = static_cast<int>(std::sqrt(static_cast<double>(k)));
  while (rows > 1 && k % rows != 0) --rows;
  int cols = k / rows;
  if (h > w) std::swap(rows, cols);
  std::vector<int> labels(fused.pixel_count());
  if (rows <= h && cols <= w) {
    for (int y = 0; y < h; ++y) {
      const int r = static_cast<int>(static_cast<long long>(y) * rows / h);
      for (int x = 0; x < w; ++x) {
        const int c = static_cast<int>(static_cast<long long>(x) * cols / w);
        labels[static_cast<std::size_t>(y) * w + x] = r * cols + c;
      }
    }
  } else {
    const auto n = static_cast<long long>(labels.size());
    for (long long p = 0; p < n; ++p) labels[p] = static_cast<int>(p * k / n);
  }
  return from_labels(labels, k, h, w);
}

RegionSet SuperpixelSegmenter::segment(const Image& fused, int k) const {
  check_k(fused, k);
  const int h = fused.height;
  const int w = fused.width;
  const Plane luma = gray_plane(fused);
  const std::size_t n = luma.size();

  struct Region {
    double sum = 0.0;
    std::size_t count = 0;
    std::set<std::size_t> neighbors;
    unsigned version = 0;
    bool alive = true;
    [[nodiscard]] double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Region> regions(n);
  for (std::size_t p = 0; p < n; ++p) {
    regions[p].sum = luma.data[p];
    regions[p].count = 1;
  }
  // cost, combined size, a, b, version of a, version of b
  using Edge = std::tuple<double, std::size_t, std::size_t, std::size_t, unsigned, unsigned>;
  std::priority_queue<Edge, std::vector<Edge>, std::greater<>> queue;
  auto push = [&](std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    queue.emplace(std::abs(regions[a].mean() - regions[b].mean()),
                  regions[a].count + regions[b].count, a, b, regions[a].version,
                  regions[b].version);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      if (x + 1 < w) {
        regions[p].neighbors.insert(p + 1);
        regions[p + 1].neighbors.insert(p);
        push(p, p + 1);
      }
      if (y + 1 < h) {
        regions[p].neighbors.insert(p + w);
        regions[p + w].neighbors.insert(p);
        push(p, p + w);
      }
    }
  }

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::size_t alive = n;
  while (alive > static_cast<std::size_t>(k) && !queue.empty()) {
    const auto [cost, size, a, b, va, vb] = queue.top();
    queue.pop();
    if (!regions[a].alive || !regions[b].alive || regions[a].version != va ||
        regions[b].version != vb) {
      continue;
    }
    // Merge b into a.
    Region& ra = regions[a];
    Region& rb = regions[b];
    ra.sum += rb.sum;
    ra.count += rb.count;
    for (std::size_t nb : rb.neighbors) {
      if (nb == a) continue;
      regions[nb].neighbors.erase(b);
      regions[nb].neighbors.insert(a);
      ra.neighbors.insert(nb);
    }
    ra.neighbors.erase(b);
    rb.neighbors.clear();
    rb.alive = false;
    parent[b] = a;
    ++ra.version;
    --alive;
    for (std::size_t nb : ra.neighbors) push(a, nb);
  }

  auto root = [&](std::size_t p) {
    std::size_t r = p;
    while (parent[r] != r) r = parent[r];
    while (parent[p] != r) p = std::exchange(parent[p], r);
    return r;
  };
  std::vector<int> labels(n);
  std::vector<int> label_of(n, -1);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t r = root(p);
    if (label_of[r] < 0) label_of[r] = next++;
    labels[p] = label_of[r];
  }
  return from_labels(labels, next, h, w);
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& name) {
  if (name == "grid") return std::make_unique<GridSegmenter>();
  if (name == "superpixel") return std::make_unique<SuperpixelSegmenter>();
  throw ValidationError("unknown segmenter: " + name + " (expected grid|superpixel)");
}

}  // namespace hfusion::grpo
