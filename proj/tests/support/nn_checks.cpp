#include "nn_checks.h"

#include <chrono>
#include <cmath>
#include <functional>

#include "hfusion/fusion_policy.h"
#include "hfusion/grpo.h"

namespace hfusion::testing {

reward::EncoderConfig toy_encoder() {
  reward::EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  return cfg;
}

namespace {

GradCheck finite_difference(const std::vector<std::pair<std::string, torch::Tensor>>& params,
                            const std::function<torch::Tensor()>& loss) {
  const auto start = std::chrono::steady_clock::now();
  for (auto& [name, p] : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  loss().backward();
  GradCheck out;
  torch::NoGradGuard guard;
  for (auto& [name, p] : params) {
    auto flat = p.view({-1});
    const auto analytic = p.grad().reshape({-1}).clone();
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i].fill_(orig + kFdStep);
      const double up = loss().item<double>();
      flat[i].fill_(orig - kFdStep);
      const double down = loss().item<double>();
      flat[i].fill_(orig);
      const double numeric = (up - down) / (2.0 * kFdStep);
      const double a = analytic[i].item<double>();
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kRelErrFloor});
      if (rel > out.max_rel_err) {
        out.max_rel_err = rel;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
      ++out.checked;
    }
  }
  out.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

GradCheck gradcheck_reward_loss(std::uint64_t seed) {
  const auto cfg = toy_encoder();
  auto model = reward::make_reward_model(cfg, seed);
  model->to(torch::kFloat64);
  torch::manual_seed(seed + 1);
  const int s = cfg.image_size;
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto vis = torch::rand({2, 3, s, s}, opts);
  const auto ir = torch::rand({2, 3, s, s}, opts);
  const auto fused = torch::rand({2, 3, s, s}, opts);
  const auto scores = torch::rand({2, 5}, opts);
  const auto heat = (torch::rand({2, s, s}, opts) > 0.7).to(torch::kFloat64);
  reward::RewardTrainConfig tc;

  std::vector<std::pair<std::string, torch::Tensor>> params;
  const auto trainable = model->trainable_parameters();
  for (const auto& item : model->named_parameters()) {
    for (const auto& t : trainable) {
      if (t.is_same(item.value())) params.emplace_back(item.key(), item.value());
    }
  }
  return finite_difference(params, [&] {
    return reward::reward_loss(model->forward(vis, ir, fused), scores, heat, tc).total;
  });
}

GradCheck gradcheck_grpo_objective(std::uint64_t seed) {
  policy::PolicyArch arch;
  arch.channels = {4, 8};
  auto pol = policy::make_policy(arch, seed);
  pol.net->to(torch::kFloat64);
  const auto ref = policy::clone_reference(pol);
  torch::manual_seed(seed + 7);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto vis = torch::rand({1, 3, 8, 8}, opts);
  const auto ir = torch::rand({1, 3, 8, 8}, opts);

  torch::Tensor f_old, f_ref;
  {
    torch::NoGradGuard guard;
    const auto sign = torch::where(torch::rand({1, 3, 8, 8}, opts) > 0.5, 1.0, -1.0);
    f_old = (pol.forward(vis, ir) + 0.05 * sign).detach();
    f_ref = (ref.forward(vis, ir) + 0.02 * torch::randn({1, 3, 8, 8}, opts)).detach();
  }
  grpo::GrpoConfig gc;
  gc.beta = 0.1;
  const Image blank(8, 8, 3);
  const auto regions = grpo::GridSegmenter().segment(blank, 4);
  const auto masks = grpo::mask_tensor(regions, torch::kFloat64);
  const auto w = grpo::region_weights(regions, grpo::RegionWeights::kArea);
  const auto weights = torch::tensor(w, opts);
  const auto adv = torch::tensor(std::vector<double>{1.2, -0.4, 0.3, -1.1}, opts);

  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (const auto& item : pol.net->named_parameters()) params.emplace_back(item.key(), item.value());
  return finite_difference(params, [&] {
    const auto f = pol.forward(vis, ir);
    const auto r = grpo::region_ratios(f[0], f_old[0], masks, gc.alpha);
    return grpo::grpo_objective(r, adv, weights, f[0], f_ref[0], gc).objective;
  });
}

}  // namespace hfusion::testing
