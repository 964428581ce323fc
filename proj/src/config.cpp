// SPDX-License-Identifier: Apache-2.0
#include "manager/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "manager/diagnostics.hpp"
#include "manager/error.hpp"
#include "manager/rng.hpp"

namespace manager {

std::string_view to_string(Task task) {
  switch (task) {
    case Task::TwoTowerItm: return "two-tower-itm";
    case Task::TwoTowerMlm: return "two-tower-mlm";
    case Task::MllmCount: return "mllm-count";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  for (auto t : {Task::TwoTowerItm, Task::TwoTowerMlm, Task::MllmCount}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("'" + std::string(key) + "' expects on/off, got '" + std::string(v) + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename M>
Field size_field(std::string key, M member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(member(c)); },
          [member, key](ExperimentConfig& c, std::string_view v) { member(c) = to_size(key, v); }};
}

template <typename M>
Field double_field(std::string key, M member) {
  return {key, [member](const ExperimentConfig& c) { return format_double(member(c)); },
          [member, key](ExperimentConfig& c, std::string_view v) { member(c) = to_double(key, v); }};
}

template <typename M>
Field bool_field(std::string key, M member) {
  return {key, [member](const ExperimentConfig& c) { return member(c) ? "on" : "off"; },
          [member, key](ExperimentConfig& c, std::string_view v) { member(c) = to_bool(key, v); }};
}

#define MEMBER(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, std::string_view v) { c.seed = to_u64("seed", v); }},
      {"task", [](const ExperimentConfig& c) { return std::string(to_string(c.task)); },
       [](ExperimentConfig& c, std::string_view v) { c.task = parse_task(v); }},
      size_field("model.hidden", MEMBER(model.hidden)),
      size_field("model.visual_layers", MEMBER(model.visual_layers)),
      size_field("model.textual_layers", MEMBER(model.textual_layers)),
      size_field("model.cross_layers", MEMBER(model.cross_layers)),
      size_field("model.managed_layers", MEMBER(model.managed_layers)),
      size_field("model.heads", MEMBER(model.heads)),
      size_field("model.patch_size", MEMBER(model.patch_size)),
      size_field("model.image_side", MEMBER(model.image_side)),
      size_field("model.channels", MEMBER(model.channels)),
      size_field("model.vocab_size", MEMBER(model.vocab_size)),
      size_field("model.max_text_len", MEMBER(model.max_text_len)),
      size_field("model.ffn_mult", MEMBER(model.ffn_mult)),
      bool_field("model.freeze_encoders", MEMBER(freeze_encoders)),
      {"manager.kind", [](const ExperimentConfig& c) { return std::string(to_string(c.manager_kind)); },
       [](ExperimentConfig& c, std::string_view v) { c.manager_kind = parse_tower_mode(v); }},
      bool_field("manager.sam_split", MEMBER(sam_split)),
      bool_field("mllm.grid", MEMBER(grid)),
      bool_field("mllm.manager", MEMBER(manager)),
      size_field("mllm.manager_count", MEMBER(manager_count)),
      size_field("mllm.manager_interval", MEMBER(manager_interval)),
      {"mllm.manage_segments", [](const ExperimentConfig& c) { return std::string(to_string(c.manage_segments)); },
       [](ExperimentConfig& c, std::string_view v) { c.manage_segments = parse_manage_segments(v); }},
      size_field("mllm.max_grids", MEMBER(max_grids)),
      size_field("mllm.decoder_layers", MEMBER(decoder_layers)),
      size_field("mllm.max_seq_len", MEMBER(max_seq_len)),
      bool_field("noise.aaum_gaussian", MEMBER(noise.aaum_gaussian)),
      bool_field("noise.mllm_jitter", MEMBER(noise.mllm_jitter)),
      double_field("noise.jitter_low", MEMBER(noise.jitter_low)),
      double_field("noise.jitter_high", MEMBER(noise.jitter_high)),
      double_field("optim.learning_rate", MEMBER(optim.learning_rate)),
      double_field("optim.warmup_ratio", MEMBER(optim.warmup_ratio)),
      double_field("optim.weight_decay", MEMBER(optim.weight_decay)),
      double_field("optim.beta1", MEMBER(optim.beta1)),
      double_field("optim.beta2", MEMBER(optim.beta2)),
      double_field("optim.eps", MEMBER(optim.eps)),
      size_field("optim.steps", MEMBER(optim.steps)),
      size_field("optim.batch_size", MEMBER(optim.batch_size)),
      double_field("data.mlm_mask_rate", MEMBER(mlm_mask_rate)),
      size_field("data.eval_count", MEMBER(eval_count)),
  };
  return table;
}

#undef MEMBER

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return out;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, trim(value)); }

std::string ExperimentConfig::get(std::string_view key) const { return field(key).get(*this); }

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void ExperimentConfig::apply_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      set(key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
}

std::string ExperimentConfig::env_name(std::string_view key) {
  std::string out = "MANAGER_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void ExperimentConfig::apply_env(const std::function<const char*(const std::string&)>& lookup) {
  for (const auto& f : fields()) {
    if (const char* v = lookup(env_name(f.key))) f.set(*this, trim(v));
  }
}

void ExperimentConfig::apply_env() {
  apply_env([](const std::string& name) { return std::getenv(name.c_str()); });
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c;
  c.apply_text(text);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(serialize()); }

void ExperimentConfig::validate() const {
  if (optim.batch_size == 0) throw ConfigError("batch size must be positive");
  if (optim.learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
  if (optim.warmup_ratio < 0.0 || optim.warmup_ratio > 1.0) throw ConfigError("warmup ratio must lie in [0, 1]");
  if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (optim.eps <= 0.0) throw ConfigError("optimizer eps must be positive");
  if (mlm_mask_rate <= 0.0 || mlm_mask_rate > 1.0) throw ConfigError("mask rate must lie in (0, 1]");
  if (eval_count == 0) throw ConfigError("eval_count must be positive");
  if (noise.jitter_low > noise.jitter_high || noise.jitter_low <= 0.0) throw ConfigError("bad jitter range");
  if (is_two_tower()) {
    model.validate();
  } else {
    mllm_options().validate();
  }
}

TwoTowerOptions ExperimentConfig::two_tower_options() const {
  TwoTowerOptions o;
  o.model = model;
  o.mode = manager_kind;
  o.sam_split = sam_split;
  return o;
}

MllmOptions ExperimentConfig::mllm_options() const {
  MllmOptions o;
  o.model = model;
  o.decoder_layers = decoder_layers;
  o.max_seq_len = max_seq_len;
  o.grid = grid;
  o.max_grids = max_grids;
  o.managers = manager;
  o.manager_count = manager_count;
  o.manager_interval = manager_interval;
  o.manage_segments = manage_segments;
  return o;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return a.serialize() == b.serialize(); }

}  // namespace manager
