#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hfusion/data_pipeline.h"
#include "hfusion/image.h"
#include "hfusion/synth.h"

namespace hfusion::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

Image random_image(std::mt19937_64& rng, int h, int w, int c);
Plane random_plane(std::mt19937_64& rng, int h, int w, double scale = 255.0);

// Synthetic corpus plus a manifest where every triplet is in the train split.
struct Corpus {
  synth::SynthCorpus files;
  data::Manifest manifest;
};

Corpus make_corpus(const std::filesystem::path& dir, int pairs, int size, std::uint64_t seed,
                   const std::vector<std::string>& methods = {"artifact", "maximum"});

// One triplet per pair, alternating the artifact and maximum methods.
data::Manifest alternate_methods(const data::Manifest& manifest);

std::string read_file(const std::filesystem::path& path);

}  // namespace hfusion::testing
