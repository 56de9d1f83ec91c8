#include "hfusion/reward_model.h"

#include <cmath>
#include <cstring>
#include <numeric>
#include <span>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hfusion/checkpoint.h"
#include "hfusion/errors.h"

namespace hfusion::reward {

namespace F = torch::nn::functional;
using json = nlohmann::ordered_json;

void EncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw ValidationError("image_size must be a positive multiple of patch_size");
  }
  if ((patch_size & (patch_size - 1)) != 0) {
    throw ValidationError("patch_size must be a power of two");
  }
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
    throw ValidationError("embed_dim must be divisible by heads");
  }
  if (embed_dim < 4) throw ValidationError("embed_dim must be at least 4");
  if (depth < 1 || mlp_ratio < 1) throw ValidationError("depth and mlp_ratio must be >= 1");
}

json to_json(const EncoderConfig& cfg) {
  json j;
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["embed_dim"] = cfg.embed_dim;
  j["depth"] = cfg.depth;
  j["heads"] = cfg.heads;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["frozen"] = cfg.frozen;
  j["positional"] = cfg.positional;
  return j;
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.mlp_ratio = j.value("mlp_ratio", 4);
  cfg.frozen = j.value("frozen", true);
  cfg.positional = j.value("positional", true);
  cfg.validate();
  return cfg;
}

json to_json(const RewardTrainConfig& cfg) {
  json j;
  j["lambda_score"] = cfg.lambda_score;
  j["lambda_heatmap"] = cfg.lambda_heatmap;
  j["epochs"] = cfg.epochs;
  j["lr_max"] = cfg.lr_max;
  j["lr_min"] = cfg.lr_min;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["heatmap_style"] =
      cfg.heatmap_style == annotation::HeatmapStyle::kBinary ? "binary" : "gaussian";
  return j;
}

// ---------------------------------------------------------------------------

TransformerBlockImpl::TransformerBlockImpl(int dim, int heads, int mlp_ratio) : heads_(heads) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, mlp_ratio * dim));
  fc2_ = register_module("fc2", torch::nn::Linear(mlp_ratio * dim, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto t = x.size(1);
  const auto d = x.size(2);
  const auto head_dim = d / heads_;
  auto qkv = qkv_(norm1_(x)).reshape({b, t, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0];
  auto k = qkv[1];
  auto v = qkv[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) /
                                 std::sqrt(static_cast<double>(head_dim)),
                             -1);
  auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({b, t, d});
  auto h = x + proj_(mixed);
  return h + fc2_(F::gelu(fc1_(norm2_(h))));
}

TokenEncoderImpl::TokenEncoderImpl(int tokens, int dim, int depth, int heads, int mlp_ratio,
                                   bool positional) {
  cls_token_ = register_parameter("cls_token", torch::randn({1, 1, dim}) * 0.02);
  if (positional) {
    pos_embed_ = register_parameter("pos_embed", torch::randn({1, tokens + 1, dim}) * 0.02);
  } else {
    pos_embed_ = register_buffer("pos_embed", torch::zeros({1, tokens + 1, dim}));
  }
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < depth; ++i) blocks_->push_back(TransformerBlock(dim, heads, mlp_ratio));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor TokenEncoderImpl::forward(const torch::Tensor& tokens) {
  auto cls = cls_token_.expand({tokens.size(0), 1, tokens.size(2)});
  auto x = torch::cat({cls, tokens}, 1) + pos_embed_;
  for (const auto& block : *blocks_) x = block->as<TransformerBlock>()->forward(x);
  return norm_(x);
}

PatchEncoderImpl::PatchEncoderImpl(const EncoderConfig& cfg) {
  cfg.validate();
  patch_embed_ = register_module(
      "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, cfg.embed_dim, cfg.patch_size)
                                           .stride(cfg.patch_size)));
  encoder_ = register_module("encoder", TokenEncoder(cfg.tokens(), cfg.embed_dim, cfg.depth,
                                                     cfg.heads, cfg.mlp_ratio, cfg.positional));
}

torch::Tensor PatchEncoderImpl::forward(const torch::Tensor& images) {
  // [B,D,H',W'] -> [B,N,D], row-major patch order.
  auto tokens = patch_embed_(images).flatten(2).transpose(1, 2);
  return encoder_(tokens);
}

torch::Tensor PatchEncoderImpl::patch_tokens(const torch::Tensor& images) {
  using torch::indexing::Slice;
  return forward(images).index({Slice(), Slice(1, torch::indexing::None), Slice()});
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return F::gelu(x + conv2_(F::gelu(conv1_(x))));
}

HeatmapHeadImpl::HeatmapHeadImpl(const EncoderConfig& cfg) {
  int channels = std::max(cfg.embed_dim / 2, 8);
  compress_ = register_module(
      "compress",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.embed_dim, channels, 3).padding(1)));
  stages_ = register_module("stages", torch::nn::ModuleList());
  for (int scale = cfg.patch_size; scale > 1; scale /= 2) {
    const int next = std::max(channels / 2, 8);
    torch::nn::Sequential stage(
        torch::nn::Upsample(torch::nn::UpsampleOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kBilinear)
                                .align_corners(false)),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, next, 1)), ResidualBlock(next));
    stages_->push_back(stage);
    channels = next;
  }
  out_ = register_module("out",
                         torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 1, 3).padding(1)));
}

torch::Tensor HeatmapHeadImpl::forward(const torch::Tensor& feature_map) {
  auto x = F::gelu(compress_(feature_map));
  for (const auto& stage : *stages_) x = stage->as<torch::nn::Sequential>()->forward(x);
  return torch::sigmoid(out_(x)).squeeze(1);
}

ScoreHeadImpl::ScoreHeadImpl(const EncoderConfig& cfg) {
  const int c1 = std::max(cfg.embed_dim / 2, 2);
  const int c2 = std::max(cfg.embed_dim / 4, 1);
  const int reduced = (cfg.grid() + 1) / 2;
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.embed_dim, c1, 3).padding(1)));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(c1, c2, 3).stride(2).padding(1)));
  fc1_ = register_module("fc1", torch::nn::Linear(c2 * reduced * reduced, 64));
  fc2_ = register_module("fc2", torch::nn::Linear(64, annotation::kNumScores));
}

torch::Tensor ScoreHeadImpl::forward(const torch::Tensor& feature_map) {
  auto x = F::gelu(conv2_(F::gelu(conv1_(feature_map))));
  x = F::gelu(fc1_(x.flatten(1)));
  return torch::sigmoid(fc2_(x));
}

RewardModelImpl::RewardModelImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  backbone_ = register_module("backbone", PatchEncoder(cfg_));
  projection_ = register_module("projection", torch::nn::Linear(3 * cfg_.embed_dim, cfg_.embed_dim));
  fusion_encoder_ = register_module(
      "fusion_encoder", TokenEncoder(cfg_.tokens(), cfg_.embed_dim, cfg_.depth, cfg_.heads,
                                     cfg_.mlp_ratio, cfg_.positional));
  heatmap_head_ = register_module("heatmap_head", HeatmapHead(cfg_));
  score_head_ = register_module("score_head", ScoreHead(cfg_));
  set_backbone_frozen(cfg_.frozen);
}

void RewardModelImpl::set_backbone_frozen(bool frozen) {
  cfg_.frozen = frozen;
  for (auto& p : backbone_->parameters()) p.set_requires_grad(!frozen);
}

std::vector<torch::Tensor> RewardModelImpl::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& item : named_parameters(true)) {
    if (cfg_.frozen && item.key().rfind("backbone.", 0) == 0) continue;
    out.push_back(item.value());
  }
  return out;
}

TriEncoding RewardModelImpl::encode_triplet(const torch::Tensor& visible,
                                            const torch::Tensor& infrared,
                                            const torch::Tensor& fused) {
  auto as_rgb = [](const torch::Tensor& t) {
    return t.size(1) == 1 ? t.expand({t.size(0), 3, t.size(2), t.size(3)}) : t;
  };
  const auto vi = as_rgb(visible);
  const auto ir = as_rgb(infrared);
  const auto fu = as_rgb(fused);
  for (const auto* t : {&vi, &ir, &fu}) {
    if (t->dim() != 4 || t->size(1) != 3 || t->size(2) != cfg_.image_size ||
        t->size(3) != cfg_.image_size) {
      throw ShapeError("reward model expects [B,3," + std::to_string(cfg_.image_size) + "," +
                       std::to_string(cfg_.image_size) + "] inputs");
    }
  }
  if (vi.size(0) != ir.size(0) || vi.size(0) != fu.size(0)) {
    throw ShapeError("triplet batch sizes differ");
  }
  return {backbone_->patch_tokens(ir), backbone_->patch_tokens(vi),
          backbone_->patch_tokens(fu)};
}

torch::Tensor RewardModelImpl::fuse_features(const TriEncoding& enc) {
  using torch::indexing::Slice;
  auto concat = torch::cat({enc.f_ir, enc.f_vi, enc.f_fused}, 2);
  auto fused = fusion_encoder_(projection_(concat))
                   .index({Slice(), Slice(1, torch::indexing::None), Slice()});
  const auto b = fused.size(0);
  return fused.transpose(1, 2).reshape({b, cfg_.embed_dim, cfg_.grid(), cfg_.grid()});
}

torch::Tensor RewardModelImpl::predict_heatmap(const torch::Tensor& feature_map) {
  return heatmap_head_(feature_map);
}

torch::Tensor RewardModelImpl::predict_scores(const torch::Tensor& feature_map) {
  return score_head_(feature_map);
}

RewardOutput RewardModelImpl::forward(const torch::Tensor& visible, const torch::Tensor& infrared,
                                      const torch::Tensor& fused) {
  const auto map = fuse_features(encode_triplet(visible, infrared, fused));
  return {predict_scores(map), predict_heatmap(map)};
}

RewardModel make_reward_model(const EncoderConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return RewardModel(cfg);
}

torch::Tensor prepare_image(const Image& image, int size) {
  return image_to_tensor(resize(to_rgb(image), size, size)).unsqueeze(0);
}

// ---------------------------------------------------------------------------

LossParts reward_loss(const RewardOutput& pred, const torch::Tensor& target_scores,
                      const torch::Tensor& target_heatmap, const RewardTrainConfig& cfg) {
  if (pred.scores.sizes() != target_scores.sizes()) {
    throw ShapeError("score prediction and target shapes differ");
  }
  if (pred.heatmap.sizes() != target_heatmap.sizes()) {
    throw ShapeError("heatmap prediction and target shapes differ");
  }
  LossParts parts;
  parts.score = (pred.scores - target_scores).pow(2).mean(0).sum();
  parts.heatmap = (pred.heatmap - target_heatmap).pow(2).mean();
  parts.total = cfg.lambda_score * parts.score + cfg.lambda_heatmap * parts.heatmap;
  return parts;
}

double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (total_steps <= 1) return lr_max;
  const double t = static_cast<double>(std::clamp(step, 0L, total_steps - 1)) /
                   static_cast<double>(total_steps - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

RewardSample make_sample(const std::string& triplet_id, const Image& visible,
                         const Image& infrared, const Image& fused,
                         const annotation::AnnotationRecord& record, int size,
                         annotation::HeatmapStyle style) {
  if (!visible.same_size(infrared) || !visible.same_size(fused)) {
    throw ShapeError("triplet " + triplet_id + " has mismatched image sizes");
  }
  RewardSample s;
  s.triplet_id = triplet_id;
  s.visible = prepare_image(visible, size).squeeze(0);
  s.infrared = prepare_image(infrared, size).squeeze(0);
  s.fused = prepare_image(fused, size).squeeze(0);
  const auto norm = annotation::normalize_scores(record.scores);
  s.target_scores = torch::tensor(std::vector<float>(norm.begin(), norm.end()));
  const auto label =
      annotation::rasterize_heatmap(record.shapes, {fused.height, fused.width}, style);
  Image label_image(label.height, label.width, 1);
  for (std::size_t i = 0; i < label.size(); ++i) {
    label_image.data[i] = static_cast<float>(label.data[i]);
  }
  s.target_heatmap = image_to_tensor(resize(label_image, size, size)).squeeze(0);
  return s;
}

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Batch {
  torch::Tensor visible, infrared, fused, scores, heatmap;
};

Batch stack(const std::vector<RewardSample>& samples, std::span<const std::size_t> idx) {
  std::vector<torch::Tensor> v, i, f, s, h;
  for (auto k : idx) {
    v.push_back(samples[k].visible);
    i.push_back(samples[k].infrared);
    f.push_back(samples[k].fused);
    s.push_back(samples[k].target_scores);
    h.push_back(samples[k].target_heatmap);
  }
  return {torch::stack(v), torch::stack(i), torch::stack(f), torch::stack(s), torch::stack(h)};
}

}  // namespace

std::vector<RewardSample> load_reward_samples(const data::Manifest& manifest,
                                              const std::filesystem::path& annotation_dir,
                                              int size, annotation::HeatmapStyle style,
                                              std::optional<data::Split> split) {
  std::vector<const data::ImageTriplet*> chosen;
  std::vector<std::string> missing;
  for (const auto& t : manifest.triplets) {
    if (split && t.split != *split) continue;
    chosen.push_back(&t);
    if (!std::filesystem::exists(annotation_dir / (t.triplet_id + ".json"))) {
      missing.push_back(t.triplet_id);
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing annotations for triplets:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  if (chosen.empty()) throw ValidationError("manifest has no triplets in the requested split");
  std::vector<RewardSample> samples;
  for (const auto* t : chosen) {
    const Image fused = load_image(t->fused_path);
    const auto record = annotation::parse_annotation(
        read_text(annotation_dir / (t->triplet_id + ".json")), {fused.height, fused.width},
        t->triplet_id);
    samples.push_back(make_sample(t->triplet_id, load_image(t->visible_path),
                                  load_image(t->infrared_path), fused, record, size, style));
  }
  return samples;
}

LossParts evaluate_reward_loss(RewardModel& model, const std::vector<RewardSample>& samples,
                               const RewardTrainConfig& cfg) {
  torch::NoGradGuard no_grad;
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Batch b = stack(samples, all);
  const auto dtype = model->parameters().front().scalar_type();
  return reward_loss(model->forward(b.visible.to(dtype), b.infrared.to(dtype), b.fused.to(dtype)),
                     b.scores.to(dtype), b.heatmap.to(dtype), cfg);
}

std::vector<RewardEpochStats> train_reward(RewardModel& model,
                                           const std::vector<RewardSample>& samples,
                                           const RewardTrainConfig& cfg) {
  if (samples.empty()) throw ValidationError("no training samples");
  if (!(cfg.lambda_score > 0.0 && cfg.lambda_heatmap > 0.0)) {
    throw RangeError("lambda_score and lambda_heatmap must be positive");
  }
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw RangeError("invalid batch size or epochs");
  torch::manual_seed(cfg.seed);
  auto params = model->trainable_parameters();
  torch::optim::AdamW optimizer(
      params, torch::optim::AdamWOptions(cfg.lr_max).weight_decay(cfg.weight_decay));
  const long n = static_cast<long>(samples.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;

  std::vector<RewardEpochStats> history;
  auto record = [&](int epoch, double lr) {
    const LossParts p = evaluate_reward_loss(model, samples, cfg);
    history.push_back({epoch, p.total.item<double>(), p.score.item<double>(),
                       p.heatmap.item<double>(), lr});
  };
  record(0, cosine_lr(0, total_steps, cfg.lr_max, cfg.lr_min));

  long step = 0;
  double lr = cfg.lr_max;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = data::seeded_permutation(samples.size(), cfg.seed * 1000003ULL + epoch);
    for (long start = 0; start < n; start += cfg.batch_size) {
      const auto count = std::min<long>(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      const Batch b = stack(samples, idx);
      lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
      }
      const auto dtype = params.front().scalar_type();
      const LossParts loss =
          reward_loss(model->forward(b.visible.to(dtype), b.infrared.to(dtype), b.fused.to(dtype)),
                      b.scores.to(dtype), b.heatmap.to(dtype), cfg);
      const double value = loss.total.item<double>();
      if (!std::isfinite(value)) {
        std::string ids;
        for (auto k : idx) ids += " " + samples[k].triplet_id;
        throw NonFiniteLossError("non-finite reward loss at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) +
                                 " (score=" + std::to_string(loss.score.item<double>()) +
                                 ", heatmap=" + std::to_string(loss.heatmap.item<double>()) +
                                 ") batch:" + ids);
      }
      optimizer.zero_grad();
      loss.total.backward();
      optimizer.step();
      ++step;
    }
    record(epoch, lr);
  }
  return history;
}

std::string reward_history_csv(const std::vector<RewardEpochStats>& history) {
  std::ostringstream out;
  out.precision(12);
  out << "epoch,total_loss,score_loss,heatmap_loss,lr\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << h.total << ',' << h.score << ',' << h.heatmap << ',' << h.lr << '\n';
  }
  return out.str();
}

void save_reward_model(RewardModel& model, const RewardTrainConfig& train_cfg,
                       const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.config["kind"] = "reward_model";
  ckpt.config["encoder"] = to_json(model->config());
  ckpt.config["train"] = to_json(train_cfg);
  ckpt.tensors = module_state(*model);
  write_checkpoint(ckpt, path);
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.config.value("kind", std::string{}) != "reward_model") {
    throw ValidationError(path.string() + " is not a reward model checkpoint");
  }
  RewardModel model(encoder_config_from_json(ckpt.config.at("encoder")));
  load_module_state(*model, ckpt);
  model->eval();
  return model;
}

void load_backbone_weights(RewardModel& model, const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  load_module_state(*model->backbone(), ckpt, "backbone.");
}

RewardPrediction predict(RewardModel& model, const Image& visible, const Image& infrared,
                         const Image& fused) {
  torch::NoGradGuard no_grad;
  const int s = model->config().image_size;
  const auto dtype = model->parameters().front().scalar_type();
  const auto out = model->forward(prepare_image(visible, s).to(dtype),
                                  prepare_image(infrared, s).to(dtype),
                                  prepare_image(fused, s).to(dtype));
  RewardPrediction p;
  const auto scores = out.scores[0].to(torch::kFloat64).contiguous();
  for (std::size_t i = 0; i < annotation::kNumScores; ++i) {
    p.scores[i] = scores[static_cast<long>(i)].item<double>();
  }
  const auto heat = out.heatmap[0].to(torch::kFloat64).contiguous();
  p.heatmap = Plane(s, s);
  std::memcpy(p.heatmap.data.data(), heat.data_ptr<double>(), p.heatmap.size() * sizeof(double));
  return p;
}

}  // namespace hfusion::reward
