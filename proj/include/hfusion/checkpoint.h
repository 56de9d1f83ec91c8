#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "hfusion/image.h"

namespace hfusion {

// Single-file container: magic, format version, JSON config echo, then named
// tensors (float32/float64, little-endian, contiguous).
//
//   "HFCKPT01" | u32 version | u64 len | config JSON
//   u64 count | { u32 len | name | u8 dtype | u32 ndim | i64 dims[ndim] | bytes }
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t version = kFormatVersion;
  nlohmann::ordered_json config;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  [[nodiscard]] const torch::Tensor& tensor(const std::string& name) const;
  [[nodiscard]] bool has(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parameters and buffers by qualified name, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> module_state(const torch::nn::Module& module);

// Copies matching tensors into the module. Names under `prefix` are looked up
// as prefix + name. Every module tensor must be present with the same shape.
void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt,
                       const std::string& prefix = {});

// [C,H,W] float tensor in [0,1].
torch::Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const torch::Tensor& chw);

// Bytes-level hash used for determinism reports.
std::string file_digest(const std::filesystem::path& path);

}  // namespace hfusion
