#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "fixtures.h"

namespace hfusion::testing {

// Small-model config used for CLI runs in tests.
nlohmann::ordered_json desk_config(int grpo_epochs = 2);

struct TrainingRun {
  int exit_pretrain = -1;
  int exit_reward = -1;
  int exit_finetune = -1;
  std::map<std::string, std::string> history_digests;  // command -> digest
};

// pretrain-fusion, train-reward and finetune-grpo through run_cli, writing
// into `work`. The corpus manifest and annotations are reused as-is.
TrainingRun run_training_commands(const std::filesystem::path& work, const Corpus& corpus,
                                  const nlohmann::ordered_json& config);

}  // namespace hfusion::testing
