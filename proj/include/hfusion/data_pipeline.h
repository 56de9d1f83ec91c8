#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hfusion/image.h"

namespace hfusion::data {

struct ImagePair {
  std::string pair_id;
  std::filesystem::path visible_path;
  std::filesystem::path infrared_path;
  Image visible;
  Image infrared;
  std::string source_dataset;
  int width = 0;
  int height = 0;
  std::uintmax_t file_size_bytes = 0;
};

struct EmbeddingVector {
  std::string pair_id;
  std::vector<double> vector;
  bool l2_normalized = false;
};

struct SceneCluster {
  int cluster_id = 0;
  std::vector<std::string> member_ids;  // sorted
  std::string representative_id;

  bool operator==(const SceneCluster&) const = default;
};

// Components are min-max normalized within the cluster (1 when the cluster
// has no spread); raw values come from raw_quality.
struct QualityScore {
  std::string pair_id;
  double sharpness = 0.0;
  double contrast = 0.0;
  double resolution_score = 0.0;
  double info_score = 0.0;
  double total = 0.0;
};

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct ImageTriplet {
  std::string triplet_id;
  std::string pair_id;
  std::filesystem::path visible_path;
  std::filesystem::path infrared_path;
  std::filesystem::path fused_path;
  std::string fusion_method;
  Split split = Split::kTrain;

  bool operator==(const ImageTriplet&) const = default;
};

struct SkipEntry {
  std::string pair_id;
  std::string fusion_method;
  std::string reason;

  bool operator==(const SkipEntry&) const = default;
};

struct Manifest {
  std::vector<ImageTriplet> triplets;
  std::vector<SkipEntry> skipped;

  bool operator==(const Manifest&) const = default;
};

// Maps an image to a fixed-dimension feature vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  [[nodiscard]] virtual std::vector<double> embed(const Image& image) const = 0;
  [[nodiscard]] virtual std::size_t dimension() const = 0;
};

// Grayscale area-downsample to grid x grid, flattened row-major.
class DownsampleEmbedder final : public Embedder {
 public:
  explicit DownsampleEmbedder(int grid = 8) : grid_(grid) {}
  [[nodiscard]] std::vector<double> embed(const Image& image) const override;
  [[nodiscard]] std::size_t dimension() const override {
    return static_cast<std::size_t>(grid_) * grid_;
  }

 private:
  int grid_;
};

// Loads DIR/visible/*.png and DIR/infrared/*.png matched by file stem.
std::vector<ImagePair> ingest_directory(const std::filesystem::path& dir);

ImagePair load_pair(const std::string& pair_id, const std::filesystem::path& visible,
                    const std::filesystem::path& infrared,
                    const std::string& source_dataset = "");

EmbeddingVector embed_visible(const ImagePair& pair, const Embedder& embedder);

// Bit-identical vectors compare as exactly 1; any other pair is kept strictly
// below 1 so a threshold of 1.0 merges only identical embeddings.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Transitive closure of the similarity >= threshold graph. Clusters are
// ordered by their smallest member id; members are sorted. The representative
// is left empty until select_representative fills it.
std::vector<SceneCluster> dedup_cluster(std::span<const EmbeddingVector> embeddings,
                                        double threshold);

// Raw (unnormalized) components of one pair.
struct RawQuality {
  double sharpness = 0.0;
  double contrast = 0.0;
  double resolution = 0.0;
  double info = 0.0;
};
RawQuality raw_quality(const ImagePair& pair);

// Scores `pair` against the min-max range of `cluster_context`.
QualityScore quality_score(const ImagePair& pair,
                           std::span<const ImagePair> cluster_context);

std::map<std::string, QualityScore> quality_scores(
    std::span<const ImagePair> cluster_members);

std::string select_representative(const SceneCluster& cluster,
                                  const std::map<std::string, QualityScore>& scores);

struct SplitFractions {
  double train = 0.786;
  double val = 0.107;
  double test = 0.107;
};

struct ManifestOptions {
  SplitFractions fractions;
  std::uint64_t seed = 0;
  std::set<std::string> excluded_pairs;
};

struct SourcePair {
  std::string pair_id;
  std::filesystem::path visible_path;
  std::filesystem::path infrared_path;
};

// Pairs each retained source pair with DIR/<pair_id>.png from every method
// directory. Missing files, exclusions and size mismatches go to `skipped`.
Manifest assemble_manifest(std::span<const SourcePair> pairs,
                           const std::map<std::string, std::filesystem::path>& fused_dirs,
                           const ManifestOptions& options);

std::string serialize_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);
std::string serialize_skips(const Manifest& manifest);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace hfusion::data
