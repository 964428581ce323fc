// SPDX-License-Identifier: Apache-2.0
#include "manager/experiment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "manager/error.hpp"
#include "manager/ops.hpp"
#include "manager/serialize.hpp"

#ifndef MANAGER_BUILD_ID
#define MANAGER_BUILD_ID "unknown"
#endif

namespace manager {

const char* build_id() { return MANAGER_BUILD_ID; }

double scheduled_lr(const OptimConfig& optim, std::size_t step) {
  if (optim.steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::llround(optim.warmup_ratio * static_cast<double>(optim.steps)));
  if (step < warmup) return optim.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t decay = optim.steps - warmup;
  if (decay == 0 || step >= optim.steps) return 0.0;
  return optim.learning_rate * static_cast<double>(optim.steps - step) / static_cast<double>(decay);
}

AdamW::AdamW(std::vector<NamedTensor> params, const OptimConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    auto x = p.mutable_data();
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>();
    const double decay = p.rank() >= 2 ? config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * gj;
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * gj * gj;
      const double update = (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + config_.eps) + decay * x[j];
      x[j] -= lr * update;
    }
  }
}

Experiment::Experiment(const ExperimentConfig& config)
    : config_(config), store_(std::make_unique<ParameterStore>(config.seed)) {
  config_.validate();
  if (config_.is_two_tower()) {
    tower_ = std::make_unique<TwoTowerModel>(*store_, config_.two_tower_options());
  } else {
    mllm_ = std::make_unique<MllmModel>(*store_, config_.mllm_options());
  }
  eval_set_ = gen_synthetic_pairs(eval_seed(config_.seed), config_.eval_count, config_);
}

Experiment::~Experiment() = default;
Experiment::Experiment(Experiment&&) noexcept = default;
Experiment& Experiment::operator=(Experiment&&) noexcept = default;

namespace {

struct MllmTargets {
  std::vector<int> targets;
  std::vector<bool> mask;
};

MllmTargets answer_targets(std::size_t visual_len, const SyntheticPair& pair) {
  MllmTargets t;
  const std::size_t total = visual_len + pair.tokens.size();
  t.targets.assign(total, 0);
  t.mask.assign(total, false);
  const std::size_t q = visual_len + 1;
  t.targets[q] = CountVocab::answer_token(pair.answer);
  t.mask[q] = true;
  return t;
}

}  // namespace

Tensor Experiment::loss(const SyntheticPair& pair, const RunMode& mode) const {
  switch (config_.task) {
    case Task::TwoTowerItm: {
      auto out = tower_->forward(pair.image, pair.tokens, mode);
      const int label[] = {pair.label};
      return cross_entropy(tower_->itm_logits(out.final_state()), label);
    }
    case Task::TwoTowerMlm: {
      auto out = tower_->forward(pair.image, pair.tokens, mode);
      return cross_entropy(tower_->mlm_logits(out.final_state(), pair.masked_positions), pair.masked_targets);
    }
    case Task::MllmCount: {
      VisualTokens vis = mllm_->encode_visual(pair.image);
      auto out = mllm_->forward(vis, pair.tokens, mode);
      auto t = answer_targets(vis.length(), pair);
      return autoregressive_loss(out.logits, t.targets, t.mask);
    }
  }
  throw ContractError("unknown task");
}

double Experiment::eval_loss() const {
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& pair : eval_set_) total += loss(pair).item();
  return total / static_cast<double>(eval_set_.size());
}

std::vector<double> Experiment::eval_logits(std::size_t count) const {
  NoGradGuard guard;
  std::vector<double> out;
  for (std::size_t i = 0; i < std::min(count, eval_set_.size()); ++i) {
    const auto& pair = eval_set_[i];
    Tensor logits;
    if (tower_) {
      auto fwd = tower_->forward(pair.image, pair.tokens);
      logits = config_.task == Task::TwoTowerMlm ? tower_->mlm_logits(fwd.final_state(), pair.masked_positions)
                                                 : tower_->itm_logits(fwd.final_state());
    } else {
      logits = mllm_->forward(mllm_->encode_visual(pair.image), pair.tokens).logits;
    }
    auto v = logits.to_vector();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

namespace {

void dump_failure(const ParameterStore& store, const std::filesystem::path& path, std::size_t step, double loss) {
  TensorArchive a = snapshot(store, "non-finite loss " + format_double(loss) + " at step " + std::to_string(step));
  for (const auto& e : store.entries()) {
    if (e.tensor.has_grad()) {
      auto g = e.tensor.grad();
      a.tensors.push_back({e.name + ".grad", Tensor::from_vector(e.tensor.shape(), {g.begin(), g.end()})});
    }
  }
  write_archive(path, a);
}

}  // namespace

TrainResult Experiment::train(const TrainOptions& options) {
  const OptimConfig& optim = config_.optim;
  std::vector<NamedTensor> trainable;
  for (const auto& e : store_->entries()) {
    const bool encoder = e.name.rfind("visual.", 0) == 0 || e.name.rfind("textual.", 0) == 0;
    if (config_.freeze_encoders && encoder) continue;
    trainable.push_back(e);
  }
  AdamW opt(trainable, optim);
  Rng noise_rng(config_.seed, "train-noise");
  const RunMode mode{true, &config_.noise, &noise_rng};

  TrainResult result;
  result.initial_eval_loss = eval_loss();
  const double inv_batch = 1.0 / static_cast<double>(optim.batch_size);
  for (std::size_t step = 0; step < optim.steps; ++step) {
    store_->zero_grad();
    double total = 0.0;
    std::string failure;
    try {
      for (std::size_t b = 0; b < optim.batch_size; ++b) {
        const std::size_t index = step * optim.batch_size + b;
        SyntheticPair pair;
        switch (config_.task) {
          case Task::TwoTowerItm: pair = itm_pair(config_.seed, index, config_.model); break;
          case Task::TwoTowerMlm: pair = mlm_pair(config_.seed, index, config_.model, config_.mlm_mask_rate); break;
          case Task::MllmCount: pair = mllm_pair(config_.seed, index, config_.mllm_options()); break;
        }
        Tensor l = scale(loss(pair, mode), inv_batch);
        total += l.item();
        if (!std::isfinite(total)) break;
        l.backward();
      }
    } catch (const DomainError& e) {
      // Diverged parameters (e.g. an infinite temperature) fail before the loss does.
      total = std::nan("");
      failure = std::string(": ") + e.what();
    }
    if (!std::isfinite(total)) {
      if (options.failure_dump) dump_failure(*store_, *options.failure_dump, step, total);
      throw NumericError("loss became non-finite at step " + std::to_string(step) + failure);
    }
    const double lr = scheduled_lr(optim, step);
    opt.step(lr);
    LossRecord rec{step, total, lr};
    result.curve.push_back(rec);
    if (options.on_step) options.on_step(rec);
  }
  store_->zero_grad();
  result.final_eval_loss = eval_loss();
  if (options.loss_csv) write_loss_csv(result.curve, *options.loss_csv);
  if (options.checkpoint) save(*options.checkpoint);
  return result;
}

DiagnosticsReport Experiment::diagnose(std::size_t samples) const {
  if (samples == 0 || samples > eval_set_.size()) {
    throw ConfigError("diagnostics need between 1 and " + std::to_string(eval_set_.size()) + " samples");
  }
  NoGradGuard guard;
  const auto& m = config_.model;
  const PatchGrid grid{m.image_side / m.patch_size, m.image_side / m.patch_size, static_cast<double>(m.patch_size)};
  std::vector<DiagnosticsReport> reports;
  std::map<std::string, Tensor> first_weights;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto& pair = eval_set_[i];
    if (tower_) {
      reports.push_back(two_tower_report(tower_->forward(pair.image, pair.tokens, {}, true), grid));
    } else {
      VisualTokens vis = mllm_->encode_visual(pair.image);
      reports.push_back(mllm_report(mllm_->forward(vis, pair.tokens, {}, true), vis, grid));
    }
  }
  DiagnosticsReport r = average_reports(reports);
  std::ostringstream hash;
  hash << std::hex << config_.hash();
  r.metadata["config_hash"] = hash.str();
  r.metadata["build_id"] = build_id();
  r.metadata["seed"] = std::to_string(config_.seed);
  r.metadata["task"] = std::string(to_string(config_.task));
  r.metadata["samples"] = std::to_string(samples);
  if (tower_) {
    r.metadata["manager.kind"] = config_.get("manager.kind");
  } else {
    r.metadata["mllm.grid"] = config_.get("mllm.grid");
    r.metadata["mllm.manager"] = config_.get("mllm.manager");
    r.metadata["mllm.manage_segments"] = config_.get("mllm.manage_segments");
  }
  r.validate();
  return r;
}

GradcheckReport Experiment::gradcheck(const GradcheckOptions& options) const {
  const SyntheticPair& pair = eval_set_.front();
  std::function<Tensor()> f;
  if (tower_) {
    f = [&] {
      auto out = tower_->forward(pair.image, pair.tokens);
      const int label[] = {pair.label >= 0 ? pair.label : 1};
      const std::size_t pos[] = {1};
      const int target[] = {pair.tokens[1]};
      return add(cross_entropy(tower_->itm_logits(out.final_state()), label),
                 cross_entropy(tower_->mlm_logits(out.final_state(), pos), target));
    };
  } else {
    f = [&] { return loss(pair); };
  }
  return manager::gradcheck(f, store_->entries(), options);
}

void Experiment::save(const std::filesystem::path& path) const {
  write_archive(path, snapshot(*store_, config_.serialize()));
}

Experiment Experiment::load(const std::filesystem::path& path) {
  TensorArchive archive = read_archive(path);
  ExperimentConfig config;
  try {
    config = ExperimentConfig::parse(archive.metadata);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint carries an unreadable config: ") + e.what());
  }
  Experiment exp(config);
  load_into(exp.store(), archive);
  return exp;
}

void write_loss_csv(const std::vector<LossRecord>& curve, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,loss,lr\n";
  for (const auto& r : curve) f << r.step << "," << format_double(r.loss) << "," << format_double(r.lr) << "\n";
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace manager
