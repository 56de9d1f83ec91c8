#pragma once

#include <torch/torch.h>

#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hfusion/fusion_policy.h"
#include "hfusion/grpo_math.h"
#include "hfusion/regions.h"
#include "hfusion/reward_model.h"

namespace hfusion::grpo {

enum class RegionWeights { kArea, kUniform };
enum class RewardMode { kOverall, kPenalized };

std::string to_string(RegionWeights w);
std::string to_string(RewardMode m);
RegionWeights region_weights_from_string(const std::string& s);
RewardMode reward_mode_from_string(const std::string& s);

struct GrpoConfig {
  double beta = 0.1;
  double eps_clip = 0.2;
  double eps_adv = 1e-8;
  double alpha = 1.0;
  RegionWeights region_weights = RegionWeights::kArea;
  double lr = 1e-4;
  double lr_min = 1e-6;
  double weight_decay = 0.01;
  int batch_size = 2;
  int epochs = 20;
  double kl_sigma = 0.1;
  // Optimizer steps per batch against the same F_old. The first step always
  // sees r_k = 1 exactly, where |F - F_old| has zero gradient.
  int inner_steps = 2;
  // 0 keeps the reference fixed for the whole run.
  int ref_refresh_epochs = 0;
  RewardMode reward_mode = RewardMode::kOverall;
  int regions = 4;
  std::string segmenter = "grid";
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const GrpoConfig& cfg);

// w_k = |M_k| / sum_j |M_j| (area) or 1/K (uniform).
std::vector<double> region_weights(const RegionSet& regions, RegionWeights mode);

// Rewards for every region of one triplet. Each region zero-fills all three
// images outside its mask at full frame before the reward model sees them.
// overall: s_k = predicted overall score. penalized: overall minus the mean
// predicted heatmap inside the mask.
std::vector<double> region_rewards(reward::RewardModel& model, const Image& visible,
                                   const Image& infrared, const Image& fused,
                                   const RegionSet& regions, RewardMode mode);

double region_reward(reward::RewardModel& model, const Image& visible, const Image& infrared,
                     const Image& fused, const Mask& mask, RewardMode mode);

// masks [K,H,W] (0/1) for a RegionSet, in the requested dtype.
torch::Tensor mask_tensor(const RegionSet& regions, torch::ScalarType dtype);

// Tensor form of r_k for one image: f_new, f_old [C,H,W], masks [K,H,W] -> [K].
// Differentiable in f_new; f_old is treated as a constant.
torch::Tensor region_ratios(const torch::Tensor& f_new, const torch::Tensor& f_old,
                            const torch::Tensor& masks, double alpha);

// mean((F_theta - F_ref)^2) / (2 sigma^2)
torch::Tensor gaussian_kl(const torch::Tensor& f_theta, const torch::Tensor& f_ref,
                          double sigma);

struct Objective {
  torch::Tensor objective;  // J = surrogate - beta * kl
  torch::Tensor surrogate;
  torch::Tensor kl;
};

// ratios, advantages, weights are [K]; advantages enter as constants.
Objective grpo_objective(const torch::Tensor& ratios, const torch::Tensor& advantages,
                         const torch::Tensor& weights, const torch::Tensor& f_theta,
                         const torch::Tensor& f_ref, const GrpoConfig& cfg);

struct GrpoEpochStats {
  int epoch = 0;
  double mean_reward = 0.0;  // whole-image overall score after the epoch
  double surrogate = 0.0;
  double kl = 0.0;
  double lr = 0.0;
};

// Mean predicted overall score of fuse(policy) over the pairs, whole image.
double mean_whole_image_reward(const policy::FusionPolicy& policy, reward::RewardModel& model,
                               const std::vector<policy::SourceImages>& pairs);

struct GrpoResult {
  std::vector<GrpoEpochStats> history;
  policy::FusionPolicy reference;
};

// Epoch 0 is the evaluation before any update (ratios all 1).
GrpoResult finetune_grpo(policy::FusionPolicy& policy, reward::RewardModel& model,
                         const std::vector<policy::SourceImages>& pairs, const GrpoConfig& cfg,
                         const Segmenter& segmenter,
                         const std::function<void(int, const policy::FusionPolicy&)>& on_epoch = {});

std::string grpo_history_csv(const std::vector<GrpoEpochStats>& history);

}  // namespace hfusion::grpo
