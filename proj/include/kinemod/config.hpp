#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kinemod/contrastive.hpp"
#include "kinemod/data_io.hpp"
#include "kinemod/distill.hpp"
#include "kinemod/eval.hpp"

namespace kinemod {

struct PathConfig {
  std::string dataset;        // manifest path; empty: synthetic data from [synthetic]
  std::string topology;       // empty: built-in 25-joint layout
  std::string checkpoint;     // pretrain output / teacher for distill / model for eval
  std::string student;        // distill output / eval --student input
  std::string out = "out";
};

struct DataConfig {
  SplitOptions split;
  std::size_t bodies = 1;
};

struct EvalConfig {
  ProbeConfig probe;
  bool fuse = true;
  std::size_t knn_k = 5;
};

// All hyperparameters of a run. Every field has a default; INI files and --set overrides address
// fields as section.key.
struct RunConfig {
  std::uint64_t seed = 7;
  int workers = 0;
  PathConfig paths;
  DataConfig data;
  SyntheticSpec synthetic;
  TrainConfig pretrain;
  DistillConfig distill;
  EvalConfig eval;

  // Copies the run seed into every sub-config.
  void propagate_seed();
  // Checks value ranges and sub-config invariants; throws ConfigError.
  void validate() const;
  // Canonical "section.key=value" listing, one per line, sorted by section order.
  std::string canonical() const;
  // FNV-1a of canonical(), as 16 hex digits.
  std::string hash() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;
};

RunConfig load_run_config(const std::filesystem::path& ini);
// Applies "section.key=value" strings in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);
// Writes canonical() as an INI file.
void save_run_config(const RunConfig& config, const std::filesystem::path& ini);

std::vector<ModalityKind> parse_modality_list(const std::string& text);
std::string format_modality_list(const std::vector<ModalityKind>& kinds);

}  // namespace kinemod
