#include "hfusion/data_pipeline.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hfusion/errors.h"

namespace hfusion::data {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw SchemaError("unknown split: " + name);
}

std::vector<double> DownsampleEmbedder::embed(const Image& image) const {
  const Image small = resize(to_gray(image), grid_, grid_);
  return {small.data.begin(), small.data.end()};
}

ImagePair load_pair(const std::string& pair_id, const fs::path& visible,
                    const fs::path& infrared, const std::string& source_dataset) {
  ImagePair pair;
  pair.pair_id = pair_id;
  pair.visible_path = visible;
  pair.infrared_path = infrared;
  pair.visible = load_image(visible);
  pair.infrared = load_image(infrared);
  if (!pair.visible.same_size(pair.infrared)) {
    throw IngestError("visible and infrared sizes differ for pair " + pair_id);
  }
  pair.source_dataset = source_dataset;
  pair.width = pair.visible.width;
  pair.height = pair.visible.height;
  pair.file_size_bytes = fs::file_size(visible);
  return pair;
}

std::vector<ImagePair> ingest_directory(const fs::path& dir) {
  const fs::path vis_dir = dir / "visible";
  const fs::path ir_dir = dir / "infrared";
  if (!fs::is_directory(vis_dir) || !fs::is_directory(ir_dir)) {
    throw IngestError("expected visible/ and infrared/ under " + dir.string());
  }
  std::vector<fs::path> visible_files;
  for (const auto& entry : fs::directory_iterator(vis_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      visible_files.push_back(entry.path());
    }
  }
  std::sort(visible_files.begin(), visible_files.end());
  const std::string source = dir.filename().string();
  std::vector<ImagePair> pairs;
  for (const auto& vis : visible_files) {
    const fs::path ir = ir_dir / vis.filename();
    if (!fs::exists(ir)) {
      throw IngestError("missing infrared image for " + vis.string());
    }
    pairs.push_back(load_pair(vis.stem().string(), vis, ir, source));
  }
  return pairs;
}

EmbeddingVector embed_visible(const ImagePair& pair, const Embedder& embedder) {
  if (pair.visible.empty()) {
    throw IngestError("visible image not decoded: " + pair.visible_path.string());
  }
  std::vector<double> v = embedder.embed(pair.visible);
  if (v.size() != embedder.dimension()) {
    throw ShapeError("embedder returned wrong dimension for " + pair.pair_id);
  }
  double norm_sq = 0.0;
  for (double x : v) norm_sq += x * x;
  if (!(norm_sq > 0.0) || !std::isfinite(norm_sq)) {
    throw DegenerateEmbeddingError("zero embedding for " + pair.pair_id +
                                   " cannot be normalized");
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
  return {pair.pair_id, std::move(v), true};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("embedding dimension mismatch");
  if (std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
        return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
      })) {
    return 1.0;
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::min(dot, std::nextafter(1.0, 0.0));
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

std::vector<SceneCluster> dedup_cluster(std::span<const EmbeddingVector> embeddings,
                                        double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw RangeError("threshold must lie in (0, 1]");
  }
  if (embeddings.empty()) return {};
  const std::size_t dim = embeddings.front().vector.size();
  for (const auto& e : embeddings) {
    if (e.vector.size() != dim) {
      throw ShapeError("embedding dimension mismatch for " + e.pair_id);
    }
  }
  UnionFind uf(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      if (cosine_similarity(embeddings[i].vector, embeddings[j].vector) >= threshold) {
        uf.unite(i, j);
      }
    }
  }
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    groups[uf.find(i)].push_back(embeddings[i].pair_id);
  }
  std::vector<SceneCluster> clusters;
  clusters.reserve(groups.size());
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end());
    clusters.push_back({0, std::move(members), {}});
  }
  std::sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) {
    return a.member_ids.front() < b.member_ids.front();
  });
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    clusters[i].cluster_id = static_cast<int>(i);
  }
  return clusters;
}

RawQuality raw_quality(const ImagePair& pair) {
  const Plane g = gray_plane(pair.visible);
  const int h = g.height;
  const int w = g.width;
  // Central differences inside, one-sided at the borders.
  auto dx = [&](int y, int x) {
    if (w < 2) return 0.0;
    if (x == 0) return g.at(y, 1) - g.at(y, 0);
    if (x == w - 1) return g.at(y, w - 1) - g.at(y, w - 2);
    return 0.5 * (g.at(y, x + 1) - g.at(y, x - 1));
  };
  auto dy = [&](int y, int x) {
    if (h < 2) return 0.0;
    if (y == 0) return g.at(1, x) - g.at(0, x);
    if (y == h - 1) return g.at(h - 1, x) - g.at(h - 2, x);
    return 0.5 * (g.at(y + 1, x) - g.at(y - 1, x));
  };
  double grad_sum = 0.0;
  double sum = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      grad_sum += std::hypot(dx(y, x), dy(y, x));
      sum += g.at(y, x);
    }
  }
  const double n = static_cast<double>(g.size());
  const double mean = sum / n;
  double var = 0.0;
  for (double v : g.data) var += (v - mean) * (v - mean);
  RawQuality q;
  q.sharpness = grad_sum / n;
  q.contrast = std::sqrt(var / n);
  q.resolution = static_cast<double>(pair.height) * pair.width;
  q.info = static_cast<double>(pair.file_size_bytes);
  return q;
}

namespace {

double min_max(double v, double lo, double hi) {
  return hi > lo ? (v - lo) / (hi - lo) : 1.0;
}

QualityScore normalize_against(const std::string& id, const RawQuality& q,
                               std::span<const RawQuality> context) {
  auto range = [&](auto member) {
    double lo = context.front().*member;
    double hi = lo;
    for (const auto& c : context) {
      lo = std::min(lo, c.*member);
      hi = std::max(hi, c.*member);
    }
    return std::pair{lo, hi};
  };
  const auto [s_lo, s_hi] = range(&RawQuality::sharpness);
  const auto [c_lo, c_hi] = range(&RawQuality::contrast);
  const auto [r_lo, r_hi] = range(&RawQuality::resolution);
  const auto [i_lo, i_hi] = range(&RawQuality::info);
  QualityScore s;
  s.pair_id = id;
  s.sharpness = min_max(q.sharpness, s_lo, s_hi);
  s.contrast = min_max(q.contrast, c_lo, c_hi);
  s.resolution_score = min_max(q.resolution, r_lo, r_hi);
  s.info_score = min_max(q.info, i_lo, i_hi);
  const double visual = 0.5 * (s.sharpness + s.contrast);
  s.total = 0.5 * visual + 0.3 * s.resolution_score + 0.2 * s.info_score;
  return s;
}

}  // namespace

QualityScore quality_score(const ImagePair& pair,
                           std::span<const ImagePair> cluster_context) {
  const bool present = std::any_of(cluster_context.begin(), cluster_context.end(),
                                   [&](const auto& p) { return p.pair_id == pair.pair_id; });
  if (cluster_context.empty() || !present) {
    throw ValidationError("cluster context must contain pair " + pair.pair_id);
  }
  std::vector<RawQuality> raw;
  raw.reserve(cluster_context.size());
  for (const auto& p : cluster_context) raw.push_back(raw_quality(p));
  return normalize_against(pair.pair_id, raw_quality(pair), raw);
}

std::map<std::string, QualityScore> quality_scores(
    std::span<const ImagePair> cluster_members) {
  std::vector<RawQuality> raw;
  raw.reserve(cluster_members.size());
  for (const auto& p : cluster_members) raw.push_back(raw_quality(p));
  std::map<std::string, QualityScore> out;
  for (std::size_t i = 0; i < cluster_members.size(); ++i) {
    out[cluster_members[i].pair_id] =
        normalize_against(cluster_members[i].pair_id, raw[i], raw);
  }
  return out;
}

std::string select_representative(const SceneCluster& cluster,
                                  const std::map<std::string, QualityScore>& scores) {
  if (cluster.member_ids.empty()) throw ValidationError("empty cluster");
  std::optional<std::string> best;
  double best_total = 0.0;
  for (const auto& id : cluster.member_ids) {
    const auto it = scores.find(id);
    if (it == scores.end()) throw ValidationError("missing quality score for " + id);
    const double total = it->second.total;
    if (!best || total > best_total || (total == best_total && id < *best)) {
      best = id;
      best_total = total;
    }
  }
  return *best;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Manifest assemble_manifest(std::span<const SourcePair> pairs,
                           const std::map<std::string, fs::path>& fused_dirs,
                           const ManifestOptions& options) {
  const auto& f = options.fractions;
  if (f.train < 0 || f.val < 0 || f.test < 0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-6) {
    throw RangeError("split fractions must be non-negative and sum to 1");
  }
  std::vector<SourcePair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });

  Manifest manifest;
  for (const auto& [method, dir] : fused_dirs) {
    for (const auto& pair : sorted) {
      if (options.excluded_pairs.contains(pair.pair_id)) {
        manifest.skipped.push_back({pair.pair_id, method, "excluded"});
        continue;
      }
      const fs::path fused = dir / (pair.pair_id + ".png");
      if (!fs::exists(fused)) {
        manifest.skipped.push_back({pair.pair_id, method, "missing fused image"});
        continue;
      }
      try {
        const Image vis = load_image(pair.visible_path);
        const Image fim = load_image(fused);
        if (!vis.same_size(fim)) {
          manifest.skipped.push_back(
              {pair.pair_id, method,
               "dimension mismatch: fused " + std::to_string(fim.height) + "x" +
                   std::to_string(fim.width) + " vs source " +
                   std::to_string(vis.height) + "x" + std::to_string(vis.width)});
          continue;
        }
      } catch (const IngestError& e) {
        manifest.skipped.push_back({pair.pair_id, method, e.what()});
        continue;
      }
      ImageTriplet t;
      t.triplet_id = pair.pair_id + "__" + method;
      t.pair_id = pair.pair_id;
      t.visible_path = pair.visible_path;
      t.infrared_path = pair.infrared_path;
      t.fused_path = fused;
      t.fusion_method = method;
      manifest.triplets.push_back(std::move(t));
    }
  }

  const std::size_t n = manifest.triplets.size();
  const auto n_train = std::min<std::size_t>(n, std::llround(f.train * n));
  const auto n_val = std::min<std::size_t>(n - n_train, std::llround(f.val * n));
  const auto order = seeded_permutation(n, options.seed);
  for (std::size_t rank = 0; rank < n; ++rank) {
    auto& t = manifest.triplets[order[rank]];
    t.split = rank < n_train ? Split::kTrain
              : rank < n_train + n_val ? Split::kVal
                                       : Split::kTest;
  }
  return manifest;
}

std::string serialize_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& t : manifest.triplets) {
    json j;
    j["triplet_id"] = t.triplet_id;
    j["pair_id"] = t.pair_id;
    j["visible_path"] = t.visible_path.string();
    j["infrared_path"] = t.infrared_path.string();
    j["fused_path"] = t.fused_path.string();
    j["fusion_method"] = t.fusion_method;
    j["split"] = to_string(t.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_skips(const Manifest& manifest) {
  std::string out;
  for (const auto& s : manifest.skipped) {
    json j;
    j["pair_id"] = s.pair_id;
    j["fusion_method"] = s.fusion_method;
    j["reason"] = s.reason;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

std::string required_string(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw SchemaError("manifest line " + std::to_string(line) + ": missing key " + key);
  }
  return j[key].get<std::string>();
}

template <typename Fn>
void for_each_json_line(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    fn(j, line_no);
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

fs::path skips_path(const fs::path& manifest_path) {
  return manifest_path.string() + ".skips.jsonl";
}

}  // namespace

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::set<std::string> seen;
  for_each_json_line(text, [&](const json& j, std::size_t line) {
    ImageTriplet t;
    t.triplet_id = required_string(j, "triplet_id", line);
    t.pair_id = required_string(j, "pair_id", line);
    t.visible_path = required_string(j, "visible_path", line);
    t.infrared_path = required_string(j, "infrared_path", line);
    t.fused_path = required_string(j, "fused_path", line);
    t.fusion_method = required_string(j, "fusion_method", line);
    t.split = split_from_string(required_string(j, "split", line));
    if (!seen.insert(t.triplet_id).second) {
      throw SchemaError("duplicate triplet_id " + t.triplet_id);
    }
    m.triplets.push_back(std::move(t));
  });
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  write_text(path, serialize_manifest(manifest));
  write_text(skips_path(path), serialize_skips(manifest));
}

Manifest read_manifest(const fs::path& path) {
  Manifest m = parse_manifest(read_text(path));
  const fs::path skips = skips_path(path);
  if (fs::exists(skips)) {
    for_each_json_line(read_text(skips), [&](const json& j, std::size_t line) {
      m.skipped.push_back({required_string(j, "pair_id", line),
                           required_string(j, "fusion_method", line),
                           required_string(j, "reason", line)});
    });
  }
  return m;
}

}  // namespace hfusion::data
