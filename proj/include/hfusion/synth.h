#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hfusion/data_pipeline.h"

// Procedural demo corpus: textured visible images, blob-like infrared images,
// fused images from simple rules, and matching annotation documents. The
// "artifact" method pastes bright disks that the annotations circle.
namespace hfusion::synth {

struct SynthOptions {
  int pairs = 8;
  int size = 32;
  std::uint64_t seed = 0;
  // Extra near-copies of the first scenes, for exercising dedup.
  int duplicates = 0;
  std::vector<std::string> methods = {"average", "maximum", "artifact"};
};

struct SynthCorpus {
  std::vector<data::SourcePair> sources;
  std::map<std::string, std::filesystem::path> fused_dirs;
  std::filesystem::path annotations_dir;
};

// Layout: DIR/visible, DIR/infrared, DIR/fused/<method>, DIR/annotations
// (<pair_id>__<method>.json).
SynthCorpus generate(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace hfusion::synth
