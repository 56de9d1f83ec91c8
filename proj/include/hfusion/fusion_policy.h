#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hfusion/data_pipeline.h"
#include "hfusion/image.h"

namespace hfusion::policy {

struct PolicyArch {
  std::vector<int> channels = {16, 32, 64};

  [[nodiscard]] int stages() const { return static_cast<int>(channels.size()); }
  void validate() const;
};

nlohmann::ordered_json to_json(const PolicyArch& arch);
PolicyArch policy_arch_from_json(const nlohmann::ordered_json& j);

// Encoder-decoder fusion network. One encoder (shared by both modalities)
// downsamples through the stages; bottleneck features are concatenated and
// decoded with skip connections from both encoders. Output is sigmoid RGB.
class FusionNetImpl : public torch::nn::Module {
 public:
  explicit FusionNetImpl(const PolicyArch& arch);

  // visible [B,3,H,W], infrared [B,1|3,H,W] -> [B,3,H,W] in (0,1).
  torch::Tensor forward(const torch::Tensor& visible, const torch::Tensor& infrared);

  torch::nn::Conv2d& output_layer() { return out_; }

 private:
  PolicyArch arch_;
  torch::nn::ModuleList encoder_;
  torch::nn::Conv2d bottleneck_{nullptr};
  torch::nn::ModuleList decoder_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(FusionNet);

enum class PolicyRole { kTrainable, kReference };

struct FusionPolicy {
  PolicyArch arch;
  FusionNet net{nullptr};
  PolicyRole role = PolicyRole::kTrainable;

  torch::Tensor forward(const torch::Tensor& visible, const torch::Tensor& infrared) const;
};

FusionPolicy make_policy(const PolicyArch& arch, std::uint64_t seed);

// Single-image inference; output matches the input size.
Image fuse(const FusionPolicy& policy, const Image& visible, const Image& infrared);

// Deep copy with role = reference and gradients disabled.
FusionPolicy clone_reference(const FusionPolicy& policy);

// [B,3,H,W] tensors for a batch of source pairs (infrared replicated to RGB).
struct PairBatch {
  torch::Tensor visible, infrared;
};

struct SourceImages {
  std::string pair_id;
  Image visible;
  Image infrared;
};

PairBatch stack_pairs(const std::vector<SourceImages>& pairs, std::span<const std::size_t> idx);

// Distinct source pairs referenced by the manifest, sorted by pair_id.
std::vector<SourceImages> load_source_pairs(const data::Manifest& manifest);

// mean |F - max(vis_y, ir_y)| + mean | |grad F| - max(|grad vis_y|, |grad ir_y|) |
// with Sobel |gx| + |gy| magnitudes on replicated borders.
torch::Tensor pretrain_loss(const torch::Tensor& fused, const torch::Tensor& visible,
                            const torch::Tensor& infrared);

struct PretrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 2;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
};

// Epoch 0 is the loss before any update.
std::vector<PretrainEpoch> pretrain_supervised(FusionPolicy& policy,
                                               const std::vector<SourceImages>& pairs,
                                               const PretrainConfig& cfg);

double evaluate_pretrain_loss(const FusionPolicy& policy, const std::vector<SourceImages>& pairs);

std::string pretrain_history_csv(const std::vector<PretrainEpoch>& history);

void save_policy(const FusionPolicy& policy, const std::filesystem::path& path,
                 const nlohmann::ordered_json& extra = {});
FusionPolicy load_policy(const std::filesystem::path& path);

// Euclidean norm of the difference of all parameters.
double parameter_drift(const FusionPolicy& a, const FusionPolicy& b);

}  // namespace hfusion::policy
