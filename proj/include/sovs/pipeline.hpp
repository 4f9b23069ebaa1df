#pragma once

#include <filesystem>

#include "sovs/config.hpp"
#include "sovs/evalkit.hpp"

namespace sovs {

// Filesystem layout under the configured output root.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path scenes;
  std::filesystem::path labels;
  std::filesystem::path labels_coarse;
  std::filesystem::path pseudo;
  std::filesystem::path train_dir;
  std::filesystem::path eval_dir;

  static RunPaths from(const ExperimentConfig& cfg);
};

// Each command refuses to overwrite its own existing outputs unless `force`.
// Configuration problems throw ConfigError (CLI exit 2); anything else throws
// std::runtime_error (exit 1).

void cmd_generate(const ExperimentConfig& cfg, bool force);

OfflineSummary cmd_pseudolabel(const ExperimentConfig& cfg, bool force);

struct TrainSummary {
  MetricHistory history;
  std::filesystem::path checkpoint;
};
TrainSummary cmd_train(const ExperimentConfig& cfg, bool force);

struct EvalSummary {
  IouReport report;
  std::vector<std::string> class_names;
};
EvalSummary cmd_eval(const ExperimentConfig& cfg, bool force);

SweepResult cmd_sweep(const ExperimentConfig& cfg, bool force);

// Loads the dataset + pseudo-label store referenced by cfg into memory.
TrainData load_train_data(const ExperimentConfig& cfg);

// Full generate->pseudolabel->train->eval pipeline in cfg's output root
// (used for sweep cells; assumes a fresh directory).
SweepCell run_cell(const ExperimentConfig& cfg);

}  // namespace sovs
