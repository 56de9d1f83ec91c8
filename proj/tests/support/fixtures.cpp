#include "fixtures.h"

#include <atomic>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

namespace hfusion::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("hfusion_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Image random_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w, c);
  for (auto& v : img.data) v = u(rng);
  return img;
}

Plane random_plane(std::mt19937_64& rng, int h, int w, double scale) {
  std::uniform_real_distribution<double> u(0.0, scale);
  Plane p(h, w);
  for (auto& v : p.data) v = u(rng);
  return p;
}

Corpus make_corpus(const fs::path& dir, int pairs, int size, std::uint64_t seed,
                   const std::vector<std::string>& methods) {
  synth::SynthOptions opt;
  opt.pairs = pairs;
  opt.size = size;
  opt.seed = seed;
  opt.methods = methods;
  Corpus c;
  c.files = synth::generate(dir, opt);
  data::ManifestOptions mo;
  mo.fractions = {1.0, 0.0, 0.0};
  mo.seed = seed;
  c.manifest = data::assemble_manifest(c.files.sources, c.files.fused_dirs, mo);
  return c;
}

data::Manifest alternate_methods(const data::Manifest& manifest) {
  std::map<std::string, int> index;
  for (const auto& t : manifest.triplets) index.emplace(t.pair_id, 0);
  int i = 0;
  for (auto& [id, n] : index) n = i++;
  data::Manifest out;
  for (const auto& t : manifest.triplets) {
    const std::string want = index[t.pair_id] % 2 == 0 ? "artifact" : "maximum";
    if (t.fusion_method == want) out.triplets.push_back(t);
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace hfusion::testing
