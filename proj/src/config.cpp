#include "hfusion/config.h"

#include <fstream>
#include <sstream>

#include "hfusion/errors.h"

namespace hfusion {

using json = nlohmann::ordered_json;

json default_config_document() {
  const data::ManifestOptions manifest;
  const reward::EncoderConfig enc;
  const reward::RewardTrainConfig rt;
  const policy::PolicyArch arch;
  const policy::PretrainConfig pre;
  const grpo::GrpoConfig g;
  const metrics::MetricOptions m;
  const ServiceOptions svc;

  json doc;
  doc["seed"] = 0;
  doc["data"] = {
      {"threshold", 0.85},
      {"embed_size", 8},
      {"splits", {manifest.fractions.train, manifest.fractions.val, manifest.fractions.test}},
      {"excluded_pairs", json::array()},
  };
  doc["reward"] = {
      {"encoder",
       {{"image_size", enc.image_size},
        {"patch_size", enc.patch_size},
        {"embed_dim", enc.embed_dim},
        {"depth", enc.depth},
        {"heads", enc.heads},
        {"mlp_ratio", enc.mlp_ratio},
        {"frozen", enc.frozen}}},
      {"backbone_weights", ""},
      {"lambda_score", rt.lambda_score},
      {"lambda_heatmap", rt.lambda_heatmap},
      {"epochs", rt.epochs},
      {"lr_max", rt.lr_max},
      {"lr_min", rt.lr_min},
      {"weight_decay", rt.weight_decay},
      {"batch_size", rt.batch_size},
      {"heatmap_style", "binary"},
  };
  doc["policy"] = {
      {"channels", arch.channels},
      {"pretrain",
       {{"epochs", pre.epochs},
        {"lr", pre.lr},
        {"weight_decay", pre.weight_decay},
        {"batch_size", pre.batch_size}}},
  };
  json gj = grpo::to_json(g);
  gj.erase("seed");
  doc["grpo"] = gj;
  doc["metrics"] = {{"peak", m.peak}, {"psnr_cap", m.psnr_cap}};
  doc["service"] = {{"host", svc.host}, {"port", svc.port}, {"store", svc.store}};
  return doc;
}

namespace {

void merge_into(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw SchemaError("config section " + prefix + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw SchemaError("unknown config key: " + path);
    json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else {
      const bool numeric_ok = slot.is_number() && value.is_number();
      if (!numeric_ok && slot.type() != value.type()) {
        throw SchemaError("config key " + path + " has the wrong type");
      }
      slot = value;
    }
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw SchemaError("empty config path");
  return parts;
}

template <typename T>
T get(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("config key ") + section + "." + key + " has the wrong type");
  }
}

}  // namespace

RunConfig::RunConfig() : doc_(default_config_document()) {}

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig cfg;
  cfg.merge(doc);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void RunConfig::merge(const json& doc) { merge_into(doc_, doc, ""); }

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw SchemaError("override must look like a.b=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  const auto parts = split_path(path);
  json patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge(patch);
}

const json& RunConfig::at(const std::string& path) const {
  const json* node = &doc_;
  for (const auto& part : split_path(path)) {
    if (!node->is_object() || !node->contains(part)) throw SchemaError("unknown config key: " + path);
    node = &(*node)[part];
  }
  return *node;
}

std::uint64_t RunConfig::seed() const { return doc_.at("seed").get<std::uint64_t>(); }

double RunConfig::dedup_threshold() const { return get<double>(doc_, "data", "threshold"); }

int RunConfig::embed_size() const { return get<int>(doc_, "data", "embed_size"); }

data::ManifestOptions RunConfig::manifest_options() const {
  data::ManifestOptions o;
  const auto splits = get<std::vector<double>>(doc_, "data", "splits");
  if (splits.size() != 3) throw SchemaError("data.splits needs three fractions");
  o.fractions = {splits[0], splits[1], splits[2]};
  o.seed = seed();
  for (const auto& p : get<std::vector<std::string>>(doc_, "data", "excluded_pairs")) {
    o.excluded_pairs.insert(p);
  }
  return o;
}

reward::EncoderConfig RunConfig::encoder() const {
  return reward::encoder_config_from_json(doc_.at("reward").at("encoder"));
}

reward::RewardTrainConfig RunConfig::reward_train() const {
  reward::RewardTrainConfig c;
  c.lambda_score = get<double>(doc_, "reward", "lambda_score");
  c.lambda_heatmap = get<double>(doc_, "reward", "lambda_heatmap");
  c.epochs = get<int>(doc_, "reward", "epochs");
  c.lr_max = get<double>(doc_, "reward", "lr_max");
  c.lr_min = get<double>(doc_, "reward", "lr_min");
  c.weight_decay = get<double>(doc_, "reward", "weight_decay");
  c.batch_size = get<int>(doc_, "reward", "batch_size");
  c.seed = seed();
  const auto style = get<std::string>(doc_, "reward", "heatmap_style");
  if (style == "binary") {
    c.heatmap_style = annotation::HeatmapStyle::kBinary;
  } else if (style == "gaussian") {
    c.heatmap_style = annotation::HeatmapStyle::kGaussian;
  } else {
    throw SchemaError("reward.heatmap_style must be binary or gaussian");
  }
  if (c.lambda_score < 0 || c.lambda_heatmap < 0) throw RangeError("reward lambdas must be >= 0");
  if (c.epochs < 0 || c.batch_size < 1) throw RangeError("reward epochs/batch_size out of range");
  if (!(c.lr_max > 0) || c.lr_min < 0 || c.lr_min > c.lr_max) {
    throw RangeError("reward needs 0 <= lr_min <= lr_max");
  }
  return c;
}

std::string RunConfig::backbone_weights() const {
  return get<std::string>(doc_, "reward", "backbone_weights");
}

policy::PolicyArch RunConfig::policy_arch() const {
  policy::PolicyArch a;
  a.channels = get<std::vector<int>>(doc_, "policy", "channels");
  a.validate();
  return a;
}

policy::PretrainConfig RunConfig::pretrain() const {
  const json& p = doc_.at("policy").at("pretrain");
  policy::PretrainConfig c;
  c.epochs = get<int>(doc_.at("policy"), "pretrain", "epochs");
  c.lr = p.at("lr").get<double>();
  c.weight_decay = p.at("weight_decay").get<double>();
  c.batch_size = p.at("batch_size").get<int>();
  c.seed = seed();
  if (c.epochs < 0 || c.batch_size < 1 || !(c.lr > 0)) {
    throw RangeError("policy.pretrain values out of range");
  }
  return c;
}

grpo::GrpoConfig RunConfig::grpo() const {
  const json& j = doc_.at("grpo");
  grpo::GrpoConfig c;
  c.beta = j.at("beta").get<double>();
  c.eps_clip = j.at("eps_clip").get<double>();
  c.eps_adv = j.at("eps_adv").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.region_weights = grpo::region_weights_from_string(j.at("region_weights").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.lr_min = j.at("lr_min").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.kl_sigma = j.at("kl_sigma").get<double>();
  c.inner_steps = j.at("inner_steps").get<int>();
  c.ref_refresh_epochs = j.at("ref_refresh_epochs").get<int>();
  c.reward_mode = grpo::reward_mode_from_string(j.at("reward_mode").get<std::string>());
  c.regions = j.at("regions").get<int>();
  c.segmenter = j.at("segmenter").get<std::string>();
  c.seed = seed();
  c.validate();
  return c;
}

metrics::MetricOptions RunConfig::metric_options() const {
  metrics::MetricOptions o;
  o.peak = get<double>(doc_, "metrics", "peak");
  o.psnr_cap = get<double>(doc_, "metrics", "psnr_cap");
  if (!(o.peak > 0) || !(o.psnr_cap > 0)) throw RangeError("metrics peak and psnr_cap must be > 0");
  return o;
}

ServiceOptions RunConfig::service() const {
  ServiceOptions o;
  o.host = get<std::string>(doc_, "service", "host");
  o.port = get<int>(doc_, "service", "port");
  o.store = get<std::string>(doc_, "service", "store");
  if (o.port < 0 || o.port > 65535) throw RangeError("service.port out of range");
  return o;
}

void RunConfig::validate() const {
  const double t = dedup_threshold();
  if (!(t > 0.0 && t <= 1.0)) throw RangeError("data.threshold must lie in (0,1]");
  if (embed_size() < 1) throw RangeError("data.embed_size must be >= 1");
  (void)manifest_options();
  (void)encoder();
  (void)reward_train();
  (void)policy_arch();
  (void)pretrain();
  (void)grpo();
  (void)metric_options();
  (void)service();
}

}  // namespace hfusion
