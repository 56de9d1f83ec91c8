#include "hfusion/grpo.h"

#include <cmath>
#include <sstream>

#include "hfusion/checkpoint.h"
#include "hfusion/errors.h"

namespace hfusion::grpo {

using json = nlohmann::ordered_json;

std::string to_string(RegionWeights w) { return w == RegionWeights::kArea ? "area" : "uniform"; }
std::string to_string(RewardMode m) { return m == RewardMode::kOverall ? "overall" : "penalized"; }

RegionWeights region_weights_from_string(const std::string& s) {
  if (s == "area") return RegionWeights::kArea;
  if (s == "uniform") return RegionWeights::kUniform;
  throw ValidationError("region_weights must be area or uniform, got " + s);
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "overall") return RewardMode::kOverall;
  if (s == "penalized") return RewardMode::kPenalized;
  throw ValidationError("reward_mode must be overall or penalized, got " + s);
}

void GrpoConfig::validate() const {
  if (!(beta >= 0.0)) throw RangeError("beta must be >= 0");
  if (!(eps_clip > 0.0 && eps_clip < 1.0)) throw RangeError("eps_clip must lie in (0,1)");
  if (!(eps_adv >= 0.0)) throw RangeError("eps_adv must be >= 0");
  if (!(alpha > 0.0)) throw RangeError("alpha must be > 0");
  if (!(kl_sigma > 0.0)) throw RangeError("kl_sigma must be > 0");
  if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw RangeError("need 0 <= lr_min <= lr, lr > 0");
  if (weight_decay < 0.0) throw RangeError("weight_decay must be >= 0");
  if (batch_size < 1) throw RangeError("batch_size must be >= 1");
  if (epochs < 0) throw RangeError("epochs must be >= 0");
  if (inner_steps < 1) throw RangeError("inner_steps must be >= 1");
  if (ref_refresh_epochs < 0) throw RangeError("ref_refresh_epochs must be >= 0");
  if (regions < 1) throw RangeError("regions must be >= 1");
}

json to_json(const GrpoConfig& cfg) {
  json j;
  j["beta"] = cfg.beta;
  j["eps_clip"] = cfg.eps_clip;
  j["eps_adv"] = cfg.eps_adv;
  j["alpha"] = cfg.alpha;
  j["region_weights"] = to_string(cfg.region_weights);
  j["lr"] = cfg.lr;
  j["lr_min"] = cfg.lr_min;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["kl_sigma"] = cfg.kl_sigma;
  j["inner_steps"] = cfg.inner_steps;
  j["ref_refresh_epochs"] = cfg.ref_refresh_epochs;
  j["reward_mode"] = to_string(cfg.reward_mode);
  j["regions"] = cfg.regions;
  j["segmenter"] = cfg.segmenter;
  j["seed"] = cfg.seed;
  return j;
}

std::vector<double> region_weights(const RegionSet& regions, RegionWeights mode) {
  const std::size_t k = regions.size();
  std::vector<double> w(k, k == 0 ? 0.0 : 1.0 / static_cast<double>(k));
  if (mode == RegionWeights::kUniform) return w;
  double total = 0.0;
  for (const auto& m : regions.masks) total += static_cast<double>(m.area());
  if (total <= 0.0) throw ValidationError("region set has no pixels");
  for (std::size_t i = 0; i < k; ++i) w[i] = static_cast<double>(regions.masks[i].area()) / total;
  return w;
}

std::vector<double> region_rewards(reward::RewardModel& model, const Image& visible,
                                   const Image& infrared, const Image& fused,
                                   const RegionSet& regions, RewardMode mode) {
  if (!visible.same_size(fused) || !infrared.same_size(fused)) {
    throw ShapeError("region reward needs equally sized images");
  }
  if (regions.size() == 0) return {};
  const int s = model->config().image_size;
  const auto dtype = model->parameters().front().scalar_type();
  std::vector<torch::Tensor> vis, ir, fu;
  for (const auto& m : regions.masks) {
    if (m.height != fused.height || m.width != fused.width) {
      throw ShapeError("mask size differs from the image");
    }
    if (m.area() == 0) throw ValidationError("empty region mask");
    vis.push_back(reward::prepare_image(apply_mask(visible, m), s));
    ir.push_back(reward::prepare_image(apply_mask(infrared, m), s));
    fu.push_back(reward::prepare_image(apply_mask(fused, m), s));
  }
  torch::NoGradGuard no_grad;
  const auto out = model->forward(torch::cat(vis).to(dtype), torch::cat(ir).to(dtype),
                                  torch::cat(fu).to(dtype));
  const auto overall =
      out.scores.index({torch::indexing::Slice(), static_cast<long>(annotation::kOverallIndex)})
          .to(torch::kFloat64)
          .contiguous();
  std::vector<double> rewards(regions.size());
  for (std::size_t k = 0; k < regions.size(); ++k) {
    rewards[k] = overall[static_cast<long>(k)].item<double>();
  }
  if (mode == RewardMode::kPenalized) {
    const auto heat = out.heatmap.to(torch::kFloat64);
    for (std::size_t k = 0; k < regions.size(); ++k) {
      // Area-resized mask acts as per-pixel weights at the reward resolution.
      Image mk(fused.height, fused.width, 1);
      const auto& m = regions.masks[k];
      for (std::size_t p = 0; p < m.data.size(); ++p) mk.data[p] = m.data[p] ? 1.0f : 0.0f;
      const Image small = resize(mk, s, s);
      const auto w = image_to_tensor(small)[0].to(torch::kFloat64);
      const double wsum = w.sum().item<double>();
      const double mean_heat = (heat[static_cast<long>(k)] * w).sum().item<double>() / wsum;
      rewards[k] -= mean_heat;
    }
  }
  return rewards;
}

double region_reward(reward::RewardModel& model, const Image& visible, const Image& infrared,
                     const Image& fused, const Mask& mask, RewardMode mode) {
  RegionSet one;
  one.masks.push_back(mask);
  return region_rewards(model, visible, infrared, fused, one, mode).front();
}

torch::Tensor mask_tensor(const RegionSet& regions, torch::ScalarType dtype) {
  if (regions.size() == 0) throw ValidationError("empty region set");
  const int h = regions.masks.front().height;
  const int w = regions.masks.front().width;
  auto t = torch::zeros({static_cast<long>(regions.size()), h, w}, torch::kUInt8);
  auto acc = t.accessor<std::uint8_t, 3>();
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const auto& m = regions.masks[k];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) acc[static_cast<long>(k)][y][x] = m.at(y, x) ? 1 : 0;
    }
  }
  return t.to(dtype);
}

torch::Tensor region_ratios(const torch::Tensor& f_new, const torch::Tensor& f_old,
                            const torch::Tensor& masks, double alpha) {
  if (f_new.sizes() != f_old.sizes() || f_new.dim() != 3 || masks.dim() != 3 ||
      masks.size(1) != f_new.size(1) || masks.size(2) != f_new.size(2)) {
    throw ShapeError("region_ratios expects [C,H,W] images and [K,H,W] masks");
  }
  const auto old = f_old.detach();
  const auto m = masks.unsqueeze(1);  // [K,1,H,W]
  const auto num = ((f_new - old).abs().unsqueeze(0) * m).sum({1, 2, 3});
  const auto den = (old.abs().unsqueeze(0) * m).sum({1, 2, 3});
  const auto guarded = den < kRatioDenominatorGuard;
  const auto safe_den = torch::where(guarded, torch::ones_like(den), den);
  return torch::where(guarded, torch::ones_like(num), 1.0 + alpha * num / safe_den);
}

torch::Tensor gaussian_kl(const torch::Tensor& f_theta, const torch::Tensor& f_ref,
                          double sigma) {
  return (f_theta - f_ref.detach()).pow(2).mean() / (2.0 * sigma * sigma);
}

Objective grpo_objective(const torch::Tensor& ratios, const torch::Tensor& advantages,
                         const torch::Tensor& weights, const torch::Tensor& f_theta,
                         const torch::Tensor& f_ref, const GrpoConfig& cfg) {
  if (ratios.dim() != 1 || ratios.sizes() != advantages.sizes() ||
      ratios.sizes() != weights.sizes()) {
    throw ShapeError("ratios, advantages and weights must have the same length");
  }
  const auto a = advantages.detach();
  const auto unclipped = ratios * a;
  const auto clipped = ratios.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip) * a;
  Objective o;
  o.surrogate = (weights.detach() * torch::minimum(unclipped, clipped)).sum();
  o.kl = gaussian_kl(f_theta, f_ref, cfg.kl_sigma);
  o.objective = o.surrogate - cfg.beta * o.kl;
  return o;
}

double mean_whole_image_reward(const policy::FusionPolicy& policy, reward::RewardModel& model,
                               const std::vector<policy::SourceImages>& pairs) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : pairs) {
    const Image fused = policy::fuse(policy, p.visible, p.infrared);
    total += reward::predict(model, p.visible, p.infrared, fused).scores[annotation::kOverallIndex];
  }
  return total / static_cast<double>(pairs.size());
}

namespace {

struct Group {
  RegionSet regions;
  std::vector<double> rewards;
  GroupAdvantage advantage;
  torch::Tensor masks, advantages, weights;
};

Group build_group(reward::RewardModel& model, const policy::SourceImages& pair,
                  const torch::Tensor& f_old, const GrpoConfig& cfg, const Segmenter& segmenter) {
  Group g;
  const Image fused = tensor_to_image(f_old);
  g.regions = segmenter.segment(fused, cfg.regions);
  g.rewards = region_rewards(model, pair.visible, pair.infrared, fused, g.regions, cfg.reward_mode);
  g.advantage = group_advantage(g.rewards, cfg.eps_adv);
  const auto dtype = f_old.scalar_type();
  g.masks = mask_tensor(g.regions, dtype);
  g.advantages = torch::tensor(g.advantage.advantages, torch::kFloat64).to(dtype);
  g.weights = torch::tensor(region_weights(g.regions, cfg.region_weights), torch::kFloat64).to(dtype);
  return g;
}

std::string diagnostics(const std::vector<Group>& groups, const std::vector<torch::Tensor>& ratios) {
  std::ostringstream out;
  out.precision(10);
  for (std::size_t b = 0; b < groups.size(); ++b) {
    const auto r = ratios[b].detach().to(torch::kFloat64).contiguous();
    for (std::size_t k = 0; k < groups[b].rewards.size(); ++k) {
      out << "\n  sample " << b << " region " << k << ": s=" << groups[b].rewards[k]
          << " A=" << groups[b].advantage.advantages[k]
          << " r=" << r[static_cast<long>(k)].item<double>();
    }
  }
  return out.str();
}

}  // namespace

GrpoResult finetune_grpo(policy::FusionPolicy& policy, reward::RewardModel& model,
                         const std::vector<policy::SourceImages>& pairs, const GrpoConfig& cfg,
                         const Segmenter& segmenter,
                         const std::function<void(int, const policy::FusionPolicy&)>& on_epoch) {
  cfg.validate();
  if (policy.role != policy::PolicyRole::kTrainable) {
    throw ValidationError("cannot fine-tune a reference policy");
  }
  if (pairs.empty()) throw ValidationError("no source pairs for fine-tuning");
  torch::manual_seed(cfg.seed);
  model->eval();
  for (auto& p : model->parameters()) p.set_requires_grad(false);

  GrpoResult result{{}, policy::clone_reference(policy)};
  const auto dtype = policy.net->parameters().front().scalar_type();
  torch::optim::AdamW optimizer(policy.net->parameters(),
                                torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
  const long batches =
      static_cast<long>((pairs.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));
  const long total_steps = std::max(1L, batches * cfg.epochs * cfg.inner_steps);
  long step = 0;
  double lr = reward::cosine_lr(0, total_steps, cfg.lr, cfg.lr_min);

  // Epoch 0: objective terms at theta = theta_old (ratios 1) without updates.
  {
    GrpoEpochStats s{0, mean_whole_image_reward(policy, model, pairs), 0.0, 0.0, lr};
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::size_t idx[] = {i};
      const auto b = policy::stack_pairs(pairs, idx);
      const auto v = b.visible.to(dtype);
      const auto ir = b.infrared.to(dtype);
      const auto f = policy.forward(v, ir)[0];
      const auto f_ref = result.reference.forward(v, ir)[0];
      const Group g = build_group(model, pairs[i], f, cfg, segmenter);
      const auto r = region_ratios(f, f, g.masks, cfg.alpha);
      const auto o = grpo_objective(r, g.advantages, g.weights, f, f_ref, cfg);
      s.surrogate += o.surrogate.item<double>();
      s.kl += o.kl.item<double>();
    }
    s.surrogate /= static_cast<double>(pairs.size());
    s.kl /= static_cast<double>(pairs.size());
    result.history.push_back(s);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.ref_refresh_epochs > 0 && epoch > 1 && (epoch - 1) % cfg.ref_refresh_epochs == 0) {
      result.reference = policy::clone_reference(policy);
    }
    const auto order = data::seeded_permutation(pairs.size(), cfg.seed * 1000003ULL + epoch);
    double surrogate_sum = 0.0;
    double kl_sum = 0.0;
    long updates = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const auto count = std::min<std::size_t>(cfg.batch_size, pairs.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      const auto b = policy::stack_pairs(pairs, idx);
      const auto v = b.visible.to(dtype);
      const auto ir = b.infrared.to(dtype);

      torch::Tensor f_old, f_ref;
      std::vector<Group> groups;
      {
        torch::NoGradGuard no_grad;
        f_old = policy.forward(v, ir).detach();
        f_ref = result.reference.forward(v, ir).detach();
        for (std::size_t j = 0; j < count; ++j) {
          groups.push_back(build_group(model, pairs[idx[j]], f_old[static_cast<long>(j)], cfg,
                                       segmenter));
        }
      }

      for (int inner = 0; inner < cfg.inner_steps; ++inner) {
        lr = reward::cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
        for (auto& group : optimizer.param_groups()) {
          static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
        }
        const auto f_theta = policy.forward(v, ir);
        std::vector<torch::Tensor> ratios;
        torch::Tensor objective, surrogate, kl;
        for (std::size_t j = 0; j < count; ++j) {
          const long jj = static_cast<long>(j);
          ratios.push_back(region_ratios(f_theta[jj], f_old[jj], groups[j].masks, cfg.alpha));
          const auto o = grpo_objective(ratios.back(), groups[j].advantages, groups[j].weights,
                                        f_theta[jj], f_ref[jj], cfg);
          objective = j == 0 ? o.objective : objective + o.objective;
          surrogate = j == 0 ? o.surrogate.detach() : surrogate + o.surrogate.detach();
          kl = j == 0 ? o.kl.detach() : kl + o.kl.detach();
        }
        const double n = static_cast<double>(count);
        objective = objective / n;
        const double j_value = objective.item<double>();
        if (!std::isfinite(j_value)) {
          throw NonFiniteLossError("non-finite GRPO objective at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step) +
                                   diagnostics(groups, ratios));
        }
        optimizer.zero_grad();
        (-objective).backward();
        optimizer.step();
        surrogate_sum += surrogate.item<double>() / n;
        kl_sum += kl.item<double>() / n;
        ++updates;
        ++step;
      }
    }
    GrpoEpochStats s;
    s.epoch = epoch;
    s.mean_reward = mean_whole_image_reward(policy, model, pairs);
    s.surrogate = updates ? surrogate_sum / static_cast<double>(updates) : 0.0;
    s.kl = updates ? kl_sum / static_cast<double>(updates) : 0.0;
    s.lr = lr;
    result.history.push_back(s);
    if (on_epoch) on_epoch(epoch, policy);
  }
  return result;
}

std::string grpo_history_csv(const std::vector<GrpoEpochStats>& history) {
  std::ostringstream out;
  out.precision(12);
  out << "epoch,mean_reward,surrogate,kl,lr\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << h.mean_reward << ',' << h.surrogate << ',' << h.kl << ',' << h.lr
        << '\n';
  }
  return out.str();
}

}  // namespace hfusion::grpo
