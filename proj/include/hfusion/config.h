#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hfusion/data_pipeline.h"
#include "hfusion/fusion_policy.h"
#include "hfusion/grpo.h"
#include "hfusion/metrics.h"
#include "hfusion/reward_model.h"

namespace hfusion {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store = "annotation_store";
};

// One JSON document with sections data, reward, policy, grpo, metrics and
// service plus a top-level seed. Every value has a default; user documents and
// --set overrides may only name keys that exist in the defaults.
class RunConfig {
 public:
  RunConfig();

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::ordered_json& doc);

  // Merges a partial document; unknown keys throw SchemaError naming the path.
  void merge(const nlohmann::ordered_json& doc);
  // "grpo.beta=0.5"; the value is parsed as JSON when possible, else taken as a string.
  void set(const std::string& assignment);
  [[nodiscard]] const nlohmann::ordered_json& at(const std::string& path) const;

  [[nodiscard]] const nlohmann::ordered_json& document() const { return doc_; }
  [[nodiscard]] std::uint64_t seed() const;

  [[nodiscard]] double dedup_threshold() const;
  [[nodiscard]] int embed_size() const;
  [[nodiscard]] data::ManifestOptions manifest_options() const;
  [[nodiscard]] reward::EncoderConfig encoder() const;
  [[nodiscard]] reward::RewardTrainConfig reward_train() const;
  [[nodiscard]] std::string backbone_weights() const;
  [[nodiscard]] policy::PolicyArch policy_arch() const;
  [[nodiscard]] policy::PretrainConfig pretrain() const;
  [[nodiscard]] grpo::GrpoConfig grpo() const;
  [[nodiscard]] metrics::MetricOptions metric_options() const;
  [[nodiscard]] ServiceOptions service() const;

  // Checks every typed view once so bad values fail before any work starts.
  void validate() const;

 private:
  nlohmann::ordered_json doc_;
};

nlohmann::ordered_json default_config_document();

}  // namespace hfusion
