// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "manager/mllm.hpp"
#include "manager/two_tower.hpp"

namespace manager {

enum class Task { TwoTowerItm, TwoTowerMlm, MllmCount };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

struct OptimConfig {
  double learning_rate = 2e-5;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  Task task = Task::TwoTowerItm;
  ModelConfig model;
  bool freeze_encoders = false;

  TowerMode manager_kind = TowerMode::AaumFused;
  bool sam_split = false;

  bool grid = true;
  bool manager = true;
  std::size_t manager_count = 3;
  std::size_t manager_interval = 2;
  ManageSegments manage_segments = ManageSegments::All;
  std::size_t max_grids = 4;
  std::size_t decoder_layers = 6;
  std::size_t max_seq_len = 128;

  NoiseSpec noise;
  OptimConfig optim;
  double mlm_mask_rate = 0.15;
  std::size_t eval_count = 16;

  /// Every key in serialization order.
  static const std::vector<std::string>& keys();
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// Flat `key = value` text, one line per key.
  std::string serialize() const;
  /// Applies `key = value` lines (with `#` comments) on top of the current values.
  void apply_text(std::string_view text);
  /// Applies MANAGER_<KEY> variables, '.' mapped to '_' and upper-cased.
  void apply_env();
  /// Applies process-style environment entries through `lookup` (null when unset).
  void apply_env(const std::function<const char*(const std::string&)>& lookup);

  static std::string env_name(std::string_view key);
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);

  std::uint64_t hash() const;
  void validate() const;

  TwoTowerOptions two_tower_options() const;
  MllmOptions mllm_options() const;
  bool is_two_tower() const { return task != Task::MllmCount; }
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace manager
