#include "hfusion/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "hfusion/annotation.h"
#include "hfusion/errors.h"

namespace hfusion::synth {

namespace fs = std::filesystem;

namespace {

struct Scene {
  Image visible;
  Image infrared;
};

Scene make_scene(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s{Image(size, size, 3), Image(size, size, 1)};
  const double gx = u(rng) - 0.5;
  const double gy = u(rng) - 0.5;
  const double freq = 0.3 + 0.9 * u(rng);
  const double phase = 6.28318 * u(rng);
  const double tint[3] = {0.9 + 0.1 * u(rng), 0.9 + 0.1 * u(rng), 0.9 + 0.1 * u(rng)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double base = 0.12 + 0.1 * (gx * x + gy * y) / size +
                          0.06 * std::sin(freq * x + phase) * std::cos(freq * 0.7 * y);
      for (int c = 0; c < 3; ++c) s.visible.at(y, x, c) = static_cast<float>(base * tint[c]);
    }
  }
  const int rects = 1 + static_cast<int>(u(rng) * 3);
  for (int r = 0; r < rects; ++r) {
    const int x0 = static_cast<int>(u(rng) * size * 0.75);
    const int y0 = static_cast<int>(u(rng) * size * 0.75);
    const int w = size / 5 + static_cast<int>(u(rng) * size * 0.3);
    const int h = size / 5 + static_cast<int>(u(rng) * size * 0.3);
    const float v = static_cast<float>(0.55 + u(rng) * 0.4);
    for (int y = y0; y < std::min(size, y0 + h); ++y) {
      for (int x = x0; x < std::min(size, x0 + w); ++x) {
        for (int c = 0; c < 3; ++c) s.visible.at(y, x, c) = v;
      }
    }
  }
  const int blobs = 1 + static_cast<int>(u(rng) * 3);
  std::vector<std::array<double, 3>> centers;
  for (int b = 0; b < blobs; ++b) {
    centers.push_back({u(rng) * size, u(rng) * size, 1.5 + u(rng) * size * 0.12});
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = 0.12;
      for (const auto& [cx, cy, sigma] : centers) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        v = std::max(v, 0.9 * std::exp(-d2 / (2 * sigma * sigma)));
      }
      s.infrared.at(y, x, 0) = static_cast<float>(v);
    }
  }
  for (auto& v : s.visible.data) v = std::clamp(v, 0.0f, 1.0f);
  return s;
}

Image fuse_rule(const Scene& s, const std::string& method) {
  Image out(s.visible.height, s.visible.width, 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const float ir = s.infrared.at(y, x, 0);
      for (int c = 0; c < 3; ++c) {
        const float vis = s.visible.at(y, x, c);
        out.at(y, x, c) = method == "maximum" ? std::max(vis, ir) : 0.5f * (vis + ir);
      }
    }
  }
  return out;
}

annotation::AnnotationRecord base_record(const std::string& method) {
  annotation::AnnotationRecord r;
  if (method == "maximum") {
    r.scores = {5, 3, 5, 4, 4};
  } else {
    r.scores = {3, 4, 5, 3, 3};
  }
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

}  // namespace

SynthCorpus generate(const fs::path& dir, const SynthOptions& options) {
  if (options.pairs < 1 || options.size < 8) throw RangeError("need pairs >= 1 and size >= 8");
  if (options.duplicates < 0 || options.duplicates > options.pairs) {
    throw RangeError("duplicates must lie in [0, pairs]");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SynthCorpus corpus;
  fs::create_directories(dir / "visible");
  fs::create_directories(dir / "infrared");
  corpus.annotations_dir = dir / "annotations";
  fs::create_directories(corpus.annotations_dir);
  for (const auto& m : options.methods) {
    corpus.fused_dirs[m] = dir / "fused" / m;
    fs::create_directories(corpus.fused_dirs[m]);
  }

  std::vector<std::pair<std::string, Scene>> scenes;
  for (int i = 0; i < options.pairs; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "scene%03d", i);
    scenes.emplace_back(id, make_scene(rng, options.size));
  }
  for (int i = 0; i < options.duplicates; ++i) {
    Scene copy = scenes[static_cast<std::size_t>(i)].second;
    for (auto& v : copy.visible.data) {
      v = std::clamp(v + static_cast<float>((u(rng) - 0.5) * 0.02), 0.0f, 1.0f);
    }
    scenes.emplace_back(scenes[static_cast<std::size_t>(i)].first + "_dup", std::move(copy));
  }

  const int size = options.size;
  for (const auto& [id, scene] : scenes) {
    const fs::path vis = dir / "visible" / (id + ".png");
    const fs::path ir = dir / "infrared" / (id + ".png");
    save_image(scene.visible, vis);
    save_image(scene.infrared, ir);
    corpus.sources.push_back({id, vis, ir});
    for (const auto& method : options.methods) {
      Image fused = fuse_rule(scene, method);
      annotation::AnnotationRecord record = base_record(method);
      record.triplet_id = id + "__" + method;
      record.annotator = "synth";
      if (method == "artifact") {
        const int spots = 1 + static_cast<int>(u(rng) * 2);
        for (int k = 0; k < spots; ++k) {
          const double r = 2.0 + std::floor(u(rng) * size / 10.0);
          const double cx = std::floor(r + u(rng) * (size - 2 * r));
          const double cy = std::floor(r + u(rng) * (size - 2 * r));
          for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
              if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
                for (int c = 0; c < 3; ++c) fused.at(y, x, c) = 1.0f;
              }
            }
          }
          record.shapes.push_back({{cx, cy}, {cx + r, cy}, "Artifacts"});
        }
        record.scores.artifacts = spots == 1 ? 3 : 1;
        record.scores.overall = spots == 1 ? 2 : 1;
        record.scores.sharpness = 2;
      }
      save_image(fused, corpus.fused_dirs[method] / (id + ".png"));
      write_text(corpus.annotations_dir / (record.triplet_id + ".json"),
                 annotation::serialize_annotation(record) + "\n");
    }
  }
  return corpus;
}

}  // namespace hfusion::synth
