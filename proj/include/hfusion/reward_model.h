#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hfusion/annotation.h"
#include "hfusion/data_pipeline.h"
#include "hfusion/image.h"

namespace hfusion::reward {

struct EncoderConfig {
  int image_size = 32;
  int patch_size = 4;
  int embed_dim = 32;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 4;
  bool frozen = true;
  // Zeroing positional encodings makes the encoder permutation-equivariant
  // over patches; only used by tests.
  bool positional = true;

  [[nodiscard]] int grid() const { return image_size / patch_size; }
  [[nodiscard]] int tokens() const { return grid() * grid(); }
  void validate() const;
};

nlohmann::ordered_json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j);

// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, int mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Class token + positional encoding + transformer blocks + final norm over a
// token sequence. Input [B,N,D], output [B,N+1,D] (class token first).
class TokenEncoderImpl : public torch::nn::Module {
 public:
  TokenEncoderImpl(int tokens, int dim, int depth, int heads, int mlp_ratio, bool positional);
  torch::Tensor forward(const torch::Tensor& tokens);

 private:
  torch::Tensor cls_token_, pos_embed_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(TokenEncoder);

// Patch-embedding vision transformer. forward returns all tokens; patch_tokens
// drops the class token.
class PatchEncoderImpl : public torch::nn::Module {
 public:
  explicit PatchEncoderImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images);
  torch::Tensor patch_tokens(const torch::Tensor& images);

 private:
  torch::nn::Conv2d patch_embed_{nullptr};
  TokenEncoder encoder_{nullptr};
};
TORCH_MODULE(PatchEncoder);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Channel compression, log2(patch) x (upsample 2x, 1x1 conv, residual block),
// then a 1-channel conv and sigmoid. Output [B,S,S].
class HeatmapHeadImpl : public torch::nn::Module {
 public:
  explicit HeatmapHeadImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& feature_map);
  torch::nn::Conv2d& output_layer() { return out_; }

 private:
  torch::nn::Conv2d compress_{nullptr};
  torch::nn::ModuleList stages_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(HeatmapHead);

// Two compressing convolutions, flatten, two-layer MLP, sigmoid. Output [B,5].
class ScoreHeadImpl : public torch::nn::Module {
 public:
  explicit ScoreHeadImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& feature_map);
  torch::nn::Linear& output_layer() { return fc2_; }

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ScoreHead);

struct TriEncoding {
  torch::Tensor f_ir, f_vi, f_fused;  // each [B,N,D]
};

struct RewardOutput {
  torch::Tensor scores;   // [B,5] in (0,1)
  torch::Tensor heatmap;  // [B,S,S] in (0,1)
};

class RewardModelImpl : public torch::nn::Module {
 public:
  explicit RewardModelImpl(const EncoderConfig& cfg);

  // Inputs are [B,3,S,S]; single-channel infrared is replicated.
  TriEncoding encode_triplet(const torch::Tensor& visible, const torch::Tensor& infrared,
                             const torch::Tensor& fused);
  // Concat [ir | vi | fused] -> linear projection -> fusion encoder -> [B,D,H',W'].
  torch::Tensor fuse_features(const TriEncoding& enc);
  torch::Tensor predict_heatmap(const torch::Tensor& feature_map);
  torch::Tensor predict_scores(const torch::Tensor& feature_map);

  RewardOutput forward(const torch::Tensor& visible, const torch::Tensor& infrared,
                       const torch::Tensor& fused);

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  PatchEncoder& backbone() { return backbone_; }
  torch::nn::Linear& projection() { return projection_; }
  HeatmapHead& heatmap_head() { return heatmap_head_; }
  ScoreHead& score_head() { return score_head_; }

  // Everything except the backbone when the backbone is frozen.
  std::vector<torch::Tensor> trainable_parameters();
  void set_backbone_frozen(bool frozen);

 private:
  EncoderConfig cfg_;
  PatchEncoder backbone_{nullptr};
  torch::nn::Linear projection_{nullptr};
  TokenEncoder fusion_encoder_{nullptr};
  HeatmapHead heatmap_head_{nullptr};
  ScoreHead score_head_{nullptr};
};
TORCH_MODULE(RewardModel);

RewardModel make_reward_model(const EncoderConfig& cfg, std::uint64_t seed);

// Resizes to the model input size and stacks into [1,3,S,S].
torch::Tensor prepare_image(const Image& image, int size);

struct RewardTrainConfig {
  double lambda_score = 1.0;
  double lambda_heatmap = 1.0;
  int epochs = 30;
  double lr_max = 2e-5;
  double lr_min = 1e-5;
  double weight_decay = 2e-3;
  int batch_size = 4;
  std::uint64_t seed = 0;
  annotation::HeatmapStyle heatmap_style = annotation::HeatmapStyle::kBinary;
};

nlohmann::ordered_json to_json(const RewardTrainConfig& cfg);

struct LossParts {
  torch::Tensor total, score, heatmap;
};

// score: per-dimension MSE over the batch, summed over the five dimensions.
// heatmap: MSE over every pixel. total = lambda_score*score + lambda_heatmap*heatmap.
LossParts reward_loss(const RewardOutput& pred, const torch::Tensor& target_scores,
                      const torch::Tensor& target_heatmap, const RewardTrainConfig& cfg);

// eta_t = eta_min + (eta_max - eta_min) * (1 + cos(pi * t / T)) / 2 with
// T = total_steps - 1, so the last step lands on eta_min.
double cosine_lr(long step, long total_steps, double lr_max, double lr_min);

struct RewardSample {
  std::string triplet_id;
  torch::Tensor visible, infrared, fused;  // [3,S,S]
  torch::Tensor target_scores;             // [5] normalized
  torch::Tensor target_heatmap;            // [S,S]
};

RewardSample make_sample(const std::string& triplet_id, const Image& visible,
                         const Image& infrared, const Image& fused,
                         const annotation::AnnotationRecord& record, int size,
                         annotation::HeatmapStyle style);

// Loads training-split triplets and their DIR/<triplet_id>.json annotations.
// Throws listing every triplet that lacks an annotation.
std::vector<RewardSample> load_reward_samples(const data::Manifest& manifest,
                                              const std::filesystem::path& annotation_dir,
                                              int size, annotation::HeatmapStyle style,
                                              std::optional<data::Split> split = data::Split::kTrain);

struct RewardEpochStats {
  int epoch = 0;
  double total = 0.0;
  double score = 0.0;
  double heatmap = 0.0;
  double lr = 0.0;
};

// Epoch 0 is the evaluation before any update.
std::vector<RewardEpochStats> train_reward(RewardModel& model,
                                           const std::vector<RewardSample>& samples,
                                           const RewardTrainConfig& cfg);

LossParts evaluate_reward_loss(RewardModel& model, const std::vector<RewardSample>& samples,
                               const RewardTrainConfig& cfg);

std::string reward_history_csv(const std::vector<RewardEpochStats>& history);

void save_reward_model(RewardModel& model, const RewardTrainConfig& train_cfg,
                       const std::filesystem::path& path);
RewardModel load_reward_model(const std::filesystem::path& path);

// Copies backbone tensors from an external checkpoint (names prefixed
// "backbone.") into the model.
void load_backbone_weights(RewardModel& model, const std::filesystem::path& path);

struct RewardPrediction {
  std::array<double, annotation::kNumScores> scores{};  // normalized (0,1)
  Plane heatmap;                                        // model resolution
};

RewardPrediction predict(RewardModel& model, const Image& visible, const Image& infrared,
                         const Image& fused);

}  // namespace hfusion::reward
