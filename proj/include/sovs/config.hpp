#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sovs/core.hpp"
#include "sovs/data_synth.hpp"
#include "sovs/ovs_teacher.hpp"
#include "sovs/trainer.hpp"

namespace sovs {

// ============================================================================
// Experiment configuration: flat `section.key = value` text. Every key has a
// default; unknown keys are rejected; the fully resolved key set can be
// serialized (sorted, canonical formatting, minus the output location) and
// hashed, and that snapshot is written next to every run's outputs.
// ============================================================================

class ExperimentConfig {
 public:
  static ExperimentConfig defaults();
  // defaults overridden by the file's keys
  static ExperimentConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);  // unknown key -> ConfigError
  const std::string& get(const std::string& key) const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  // comma-separated list; empty value -> empty list
  std::vector<std::string> get_list(const std::string& key, char sep = ',') const;

  std::string serialized() const;
  std::uint64_t hash() const;
  void save(const std::filesystem::path& path) const;

  // ---- typed views ---------------------------------------------------------
  SceneSpec scene_spec() const;
  TrainConfig train_config() const;
  // Prompt set honoring prompt.subset (targets_only | half | full) and the
  // prompt.concepts synonym table.
  PromptSet prompt_set() const;
  // Concept table parsed from prompt.concepts ("class:alt1;alt2|class2:alt").
  std::map<std::string, std::vector<std::string>> concept_table() const;
  std::unique_ptr<Embedder> make_embedder() const;
  // out.dir if set, else $SOVS_OUT_ROOT, else ./sovs_out
  std::filesystem::path out_root() const;

 private:
  std::map<std::string, std::string> values_;
};

// Mutates cfg for one sweep cell: axis in {tau_out, lambda_out, prompt_subset,
// teacher_source, n_unlabeled_out}.
void apply_sweep_setting(ExperimentConfig& cfg, const std::string& axis,
                         const std::string& setting);

}  // namespace sovs
