#include "hfusion/fusion_policy.h"

#include <cmath>
#include <set>
#include <sstream>

#include "hfusion/checkpoint.h"
#include "hfusion/errors.h"

namespace hfusion::policy {

namespace F = torch::nn::functional;
using json = nlohmann::ordered_json;

void PolicyArch::validate() const {
  if (channels.empty()) throw ValidationError("policy needs at least one stage");
  for (int c : channels) {
    if (c < 1) throw ValidationError("policy channel counts must be positive");
  }
}

json to_json(const PolicyArch& arch) {
  json j;
  j["channels"] = arch.channels;
  return j;
}

PolicyArch policy_arch_from_json(const json& j) {
  PolicyArch arch;
  arch.channels = j.at("channels").get<std::vector<int>>();
  arch.validate();
  return arch;
}

namespace {

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor as_rgb(const torch::Tensor& t) {
  return t.size(1) == 1 ? t.expand({t.size(0), 3, t.size(2), t.size(3)}) : t;
}

}  // namespace

FusionNetImpl::FusionNetImpl(const PolicyArch& arch) : arch_(arch) {
  arch_.validate();
  encoder_ = register_module("encoder", torch::nn::ModuleList());
  int in = 3;
  for (int s = 0; s < arch_.stages(); ++s) {
    const int c = arch_.channels[s];
    encoder_->push_back(torch::nn::Sequential(conv3(in, c, s == 0 ? 1 : 2), torch::nn::GELU(),
                                              conv3(c, c), torch::nn::GELU()));
    in = c;
  }
  const int deepest = arch_.channels.back();
  bottleneck_ = register_module(
      "bottleneck", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * deepest, deepest, 1)));
  decoder_ = register_module("decoder", torch::nn::ModuleList());
  for (int s = arch_.stages() - 2; s >= 0; --s) {
    const int c = arch_.channels[s];
    decoder_->push_back(torch::nn::Sequential(conv3(arch_.channels[s + 1] + 2 * c, c),
                                              torch::nn::GELU(), conv3(c, c), torch::nn::GELU()));
  }
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(arch_.channels[0], 3, 1)));
}

torch::Tensor FusionNetImpl::forward(const torch::Tensor& visible, const torch::Tensor& infrared) {
  if (visible.dim() != 4 || infrared.dim() != 4 || visible.size(0) != infrared.size(0) ||
      visible.size(2) != infrared.size(2) || visible.size(3) != infrared.size(3)) {
    throw ShapeError("visible and infrared batches must share [B,*,H,W]");
  }
  const auto h = visible.size(2);
  const auto w = visible.size(3);
  const int64_t multiple = int64_t{1} << (arch_.stages() - 1);
  const auto pad_h = (multiple - h % multiple) % multiple;
  const auto pad_w = (multiple - w % multiple) % multiple;
  auto pad = [&](const torch::Tensor& t) {
    if (pad_h == 0 && pad_w == 0) return t;
    return F::pad(t, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
  };
  auto vis = pad(as_rgb(visible));
  auto ir = pad(as_rgb(infrared));

  std::vector<torch::Tensor> vis_skips, ir_skips;
  for (const auto& stage : *encoder_) {
    auto* seq = stage->as<torch::nn::Sequential>();
    vis = seq->forward(vis);
    ir = seq->forward(ir);
    vis_skips.push_back(vis);
    ir_skips.push_back(ir);
  }
  auto x = F::gelu(bottleneck_(torch::cat({vis, ir}, 1)));
  int s = arch_.stages() - 2;
  for (const auto& stage : *decoder_) {
    const auto& skip = vis_skips[s];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = stage->as<torch::nn::Sequential>()->forward(torch::cat({x, skip, ir_skips[s]}, 1));
    --s;
  }
  using torch::indexing::Slice;
  auto out = torch::sigmoid(out_(x));
  return out.index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
}

torch::Tensor FusionPolicy::forward(const torch::Tensor& visible,
                                    const torch::Tensor& infrared) const {
  if (role == PolicyRole::kReference) {
    torch::NoGradGuard no_grad;
    return net.ptr()->forward(visible, infrared);
  }
  return net.ptr()->forward(visible, infrared);
}

FusionPolicy make_policy(const PolicyArch& arch, std::uint64_t seed) {
  torch::manual_seed(seed);
  return {arch, FusionNet(arch), PolicyRole::kTrainable};
}

Image fuse(const FusionPolicy& policy, const Image& visible, const Image& infrared) {
  if (!visible.same_size(infrared)) {
    throw ShapeError("visible and infrared images must share dimensions");
  }
  torch::NoGradGuard no_grad;
  const auto dtype = policy.net->parameters().front().scalar_type();
  auto v = image_to_tensor(to_rgb(visible)).unsqueeze(0).to(dtype);
  auto i = image_to_tensor(to_rgb(infrared)).unsqueeze(0).to(dtype);
  return tensor_to_image(policy.forward(v, i)[0]);
}

FusionPolicy clone_reference(const FusionPolicy& policy) {
  FusionPolicy copy{policy.arch, FusionNet(policy.arch), PolicyRole::kReference};
  const auto dtype = policy.net->parameters().front().scalar_type();
  copy.net->to(dtype);
  {
    torch::NoGradGuard no_grad;
    auto src = policy.net->named_parameters(true);
    for (auto& item : copy.net->named_parameters(true)) {
      item.value().copy_(src[item.key()]);
    }
    auto src_buffers = policy.net->named_buffers(true);
    for (auto& item : copy.net->named_buffers(true)) {
      item.value().copy_(src_buffers[item.key()]);
    }
  }
  for (auto& p : copy.net->parameters()) p.set_requires_grad(false);
  copy.net->eval();
  return copy;
}

PairBatch stack_pairs(const std::vector<SourceImages>& pairs, std::span<const std::size_t> idx) {
  std::vector<torch::Tensor> v, i;
  for (auto k : idx) {
    if (!pairs[k].visible.same_size(pairs[k].infrared)) {
      throw ShapeError("pair " + pairs[k].pair_id + " has mismatched sizes");
    }
    v.push_back(image_to_tensor(to_rgb(pairs[k].visible)));
    i.push_back(image_to_tensor(to_rgb(pairs[k].infrared)));
  }
  return {torch::stack(v), torch::stack(i)};
}

std::vector<SourceImages> load_source_pairs(const data::Manifest& manifest) {
  std::map<std::string, const data::ImageTriplet*> unique;
  for (const auto& t : manifest.triplets) unique.emplace(t.pair_id, &t);
  std::vector<SourceImages> out;
  for (const auto& [id, t] : unique) {
    out.push_back({id, load_image(t->visible_path), load_image(t->infrared_path)});
  }
  return out;
}

namespace {

torch::Tensor luma(const torch::Tensor& rgb) {
  using torch::indexing::Slice;
  return 0.299 * rgb.index({Slice(), Slice(0, 1)}) + 0.587 * rgb.index({Slice(), Slice(1, 2)}) +
         0.114 * rgb.index({Slice(), Slice(2, 3)});
}

// Per-channel |gx| + |gy| Sobel magnitude with replicated borders.
torch::Tensor sobel_magnitude(const torch::Tensor& x) {
  const auto c = x.size(1);
  auto opts = torch::TensorOptions().dtype(x.scalar_type());
  auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, opts).view({1, 1, 3, 3});
  auto ky = kx.transpose(2, 3).contiguous();
  kx = kx.expand({c, 1, 3, 3}).contiguous();
  ky = ky.expand({c, 1, 3, 3}).contiguous();
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  auto gx = F::conv2d(padded, kx, F::Conv2dFuncOptions().groups(c));
  auto gy = F::conv2d(padded, ky, F::Conv2dFuncOptions().groups(c));
  return gx.abs() + gy.abs();
}

}  // namespace

torch::Tensor pretrain_loss(const torch::Tensor& fused, const torch::Tensor& visible,
                            const torch::Tensor& infrared) {
  const auto vis_y = luma(as_rgb(visible));
  const auto ir_y = luma(as_rgb(infrared));
  const auto intensity_target = torch::maximum(vis_y, ir_y);
  const auto grad_target = torch::maximum(sobel_magnitude(vis_y), sobel_magnitude(ir_y));
  const auto intensity = (fused - intensity_target).abs().mean();
  const auto gradient = (sobel_magnitude(fused) - grad_target).abs().mean();
  return intensity + gradient;
}

double evaluate_pretrain_loss(const FusionPolicy& policy, const std::vector<SourceImages>& pairs) {
  torch::NoGradGuard no_grad;
  const auto dtype = policy.net->parameters().front().scalar_type();
  double total = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::size_t idx[] = {k};
    const auto b = stack_pairs(pairs, idx);
    const auto v = b.visible.to(dtype);
    const auto i = b.infrared.to(dtype);
    total += pretrain_loss(policy.forward(v, i), v, i).item<double>();
  }
  return pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
}

std::vector<PretrainEpoch> pretrain_supervised(FusionPolicy& policy,
                                               const std::vector<SourceImages>& pairs,
                                               const PretrainConfig& cfg) {
  if (policy.role != PolicyRole::kTrainable) {
    throw ValidationError("cannot train a reference policy");
  }
  if (pairs.empty()) throw ValidationError("no source pairs to pretrain on");
  if (cfg.batch_size < 1) throw RangeError("batch size must be positive");
  torch::manual_seed(cfg.seed);
  torch::optim::AdamW optimizer(policy.net->parameters(),
                                torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
  const auto dtype = policy.net->parameters().front().scalar_type();
  std::vector<PretrainEpoch> history{{0, evaluate_pretrain_loss(policy, pairs)}};
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = data::seeded_permutation(pairs.size(), cfg.seed * 1000003ULL + epoch);
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const auto count = std::min<std::size_t>(cfg.batch_size, pairs.size() - start);
      const auto b = stack_pairs(pairs, std::span(order.data() + start, count));
      const auto v = b.visible.to(dtype);
      const auto i = b.infrared.to(dtype);
      auto loss = pretrain_loss(policy.forward(v, i), v, i);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw NonFiniteLossError("non-finite pretraining loss at epoch " + std::to_string(epoch));
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
    history.push_back({epoch, evaluate_pretrain_loss(policy, pairs)});
  }
  return history;
}

std::string pretrain_history_csv(const std::vector<PretrainEpoch>& history) {
  std::ostringstream out;
  out.precision(12);
  out << "epoch,loss\n";
  for (const auto& h : history) out << h.epoch << ',' << h.loss << '\n';
  return out.str();
}

void save_policy(const FusionPolicy& policy, const std::filesystem::path& path,
                 const json& extra) {
  Checkpoint ckpt;
  ckpt.config["kind"] = "fusion_policy";
  ckpt.config["arch"] = to_json(policy.arch);
  if (!extra.is_null()) ckpt.config["train"] = extra;
  ckpt.tensors = module_state(*policy.net);
  write_checkpoint(ckpt, path);
}

FusionPolicy load_policy(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.config.value("kind", std::string{}) != "fusion_policy") {
    throw ValidationError(path.string() + " is not a fusion policy checkpoint");
  }
  FusionPolicy policy{policy_arch_from_json(ckpt.config.at("arch")), nullptr,
                      PolicyRole::kTrainable};
  policy.net = FusionNet(policy.arch);
  load_module_state(*policy.net, ckpt);
  return policy;
}

double parameter_drift(const FusionPolicy& a, const FusionPolicy& b) {
  torch::NoGradGuard no_grad;
  auto pb = b.net->named_parameters(true);
  double sum = 0.0;
  for (const auto& item : a.net->named_parameters(true)) {
    const auto d = (item.value().to(torch::kFloat64) - pb[item.key()].to(torch::kFloat64));
    sum += d.pow(2).sum().item<double>();
  }
  return std::sqrt(sum);
}

}  // namespace hfusion::policy
