// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "manager/config.hpp"
#include "manager/diagnostics.hpp"
#include "manager/gradcheck.hpp"
#include "manager/params.hpp"
#include "manager/synthetic.hpp"

namespace manager {

const char* build_id();

/// Linear warmup over round(warmup_ratio * steps) steps, then linear decay
/// reaching 0 after the last step.
double scheduled_lr(const OptimConfig& optim, std::size_t step);

/// Adam with decoupled weight decay on matrices (rank >= 2).
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, const OptimConfig& config);
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  OptimConfig config_;
  std::size_t t_ = 0;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> loss_csv;
  /// Where tensors are dumped when the loss turns non-finite.
  std::optional<std::filesystem::path> failure_dump;
  std::function<void(const LossRecord&)> on_step;
};

/// A model for one task plus everything needed to train and inspect it.
class Experiment {
 public:
  explicit Experiment(const ExperimentConfig& config);
  ~Experiment();
  Experiment(Experiment&&) noexcept;
  Experiment& operator=(Experiment&&) noexcept;

  const ExperimentConfig& config() const { return config_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const TwoTowerModel* two_tower() const { return tower_.get(); }
  const MllmModel* mllm() const { return mllm_.get(); }

  /// Task loss of one pair.
  Tensor loss(const SyntheticPair& pair, const RunMode& mode = {}) const;
  /// Mean task loss over the fixed held-out set, noise-free.
  double eval_loss() const;
  /// Flattened task logits over the first `count` held-out pairs.
  std::vector<double> eval_logits(std::size_t count) const;

  TrainResult train(const TrainOptions& options = {});

  /// Averaged captured-activation metrics over `samples` held-out pairs.
  DiagnosticsReport diagnose(std::size_t samples) const;

  /// Finite-difference check of every parameter on one held-out pair.
  GradcheckReport gradcheck(const GradcheckOptions& options = {}) const;

  void save(const std::filesystem::path& path) const;
  static Experiment load(const std::filesystem::path& path);

 private:
  ExperimentConfig config_;
  std::unique_ptr<ParameterStore> store_;
  std::unique_ptr<TwoTowerModel> tower_;
  std::unique_ptr<MllmModel> mllm_;
  std::vector<SyntheticPair> eval_set_;
};

void write_loss_csv(const std::vector<LossRecord>& curve, const std::filesystem::path& path);

}  // namespace manager
