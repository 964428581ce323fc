// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the C API.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "manager/manager.h"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct Failure {
  int code;
};

void check(mgr_status s, const char* what) {
  if (s == MGR_OK) return;
  std::cerr << "error: " << what << ": " << mgr_status_name(s) << ": " << mgr_last_error() << "\n";
  throw Failure{s == MGR_ERR_CONFIG ? kExitUsage : kExitFail};
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> manager_kind, grid, manager, manage_segments;
  std::optional<std::size_t> manager_count, manager_interval, steps;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one key, as key=value (repeatable)");
    app->add_option("--manager-kind", manager_kind,
                    "sam, saum, aaum, aaum-fused, xattn, concat, one-hot-bridge or last-layer");
    app->add_option("--grid", grid, "multi-grid input for the MLLM (on/off)");
    app->add_option("--manager", manager, "MLLM managers (on/off)");
    app->add_option("--manager-count", manager_count, "number of MLLM managers");
    app->add_option("--manager-interval", manager_interval, "decoder layers between MLLM managers");
    app->add_option("--manage-segments", manage_segments, "all, base-only or grids-only");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--steps", steps, "optimizer steps");
  }
};

std::string text_of(const mgr_config* c, const char* key) {
  std::size_t needed = 0;
  check(mgr_config_get(c, key, nullptr, 0, &needed), key);
  std::string s(needed, '\0');
  check(mgr_config_get(c, key, s.data(), s.size(), &needed), key);
  s.resize(needed - 1);
  return s;
}

// Defaults, then the file, then MANAGER_* variables, then flags.
mgr_config* build_config(const ConfigFlags& f) {
  mgr_config* c = nullptr;
  if (f.config_path.empty()) {
    check(mgr_config_create(&c), "creating config");
  } else {
    check(mgr_config_load(f.config_path.c_str(), &c), "loading config");
  }
  auto set = [&](const std::string& k, const std::string& v) {
    check(mgr_config_set(c, k.c_str(), v.c_str()), ("setting " + k).c_str());
  };
  check(mgr_config_apply_env(c), "applying environment");
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      throw Failure{kExitUsage};
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.manager_kind) set("manager.kind", *f.manager_kind);
  if (f.grid) set("mllm.grid", *f.grid);
  if (f.manager) set("mllm.manager", *f.manager);
  if (f.manager_count) set("mllm.manager_count", std::to_string(*f.manager_count));
  if (f.manager_interval) set("mllm.manager_interval", std::to_string(*f.manager_interval));
  if (f.manage_segments) set("mllm.manage_segments", *f.manage_segments);
  if (f.seed) set("seed", std::to_string(*f.seed));
  if (f.steps) set("optim.steps", std::to_string(*f.steps));
  return c;
}

struct ModelHandle {
  mgr_model* model = nullptr;
  ~ModelHandle() { mgr_model_destroy(model); }
};

struct ConfigHandle {
  mgr_config* config = nullptr;
  ~ConfigHandle() { mgr_config_destroy(config); }
};

void print_step(std::size_t step, double loss, double lr, void* user) {
  const auto every = *static_cast<const std::size_t*>(user);
  if (step % every == 0) std::printf("step %zu  loss %.6f  lr %.3g\n", step, loss, lr);
}

// `task` replaces the configured task unless that already belongs to the same family.
int train(const ConfigFlags& flags, const std::string& task, bool force_task, const std::string& out_dir) {
  ConfigHandle c{build_config(flags)};
  const std::string current = text_of(c.config, "task");
  const bool same_family = current.substr(0, 4) == task.substr(0, 4);
  if (force_task || !same_family) check(mgr_config_set(c.config, "task", task.c_str()), "setting task");
  std::filesystem::create_directories(out_dir);
  const std::string ckpt = (std::filesystem::path(out_dir) / "checkpoint.mgrt").string();
  const std::string csv = (std::filesystem::path(out_dir) / "loss.csv").string();
  const std::string dump = (std::filesystem::path(out_dir) / "nan_dump.mgrt").string();

  ModelHandle m;
  check(mgr_model_create(c.config, &m.model), "building model");
  std::size_t params = 0;
  check(mgr_model_param_count(m.model, &params), "counting parameters");
  const std::size_t steps = std::stoul(text_of(c.config, "optim.steps"));
  std::size_t every = std::max<std::size_t>(1, steps / 10);
  std::printf("task %s, %zu parameters, %zu steps, build %s\n", text_of(c.config, "task").c_str(), params, steps,
              mgr_build_id());

  mgr_train_options opts{ckpt.c_str(), csv.c_str(), dump.c_str(), print_step, &every};
  mgr_train_summary s{};
  check(mgr_train(m.model, &opts, &s), "training");
  std::printf("eval loss %.6f -> %.6f\n", s.initial_eval_loss, s.final_eval_loss);
  std::printf("wrote %s and %s\n", ckpt.c_str(), csv.c_str());
  if (!(s.final_eval_loss < s.initial_eval_loss)) {
    std::cerr << "eval loss did not decrease\n";
    return kExitFail;
  }
  return kExitPass;
}

int diagnose(const std::string& checkpoint, const std::string& out_dir, std::size_t samples) {
  ModelHandle m;
  check(mgr_model_load(checkpoint.c_str(), &m.model), "loading checkpoint");
  std::filesystem::create_directories(out_dir);
  check(mgr_diagnose(m.model, samples, out_dir.c_str()), "diagnostics");
  std::printf("wrote diagnostics for %zu samples to %s\n", samples, out_dir.c_str());
  return kExitPass;
}

int gradcheck(const ConfigFlags& flags, double step, double threshold) {
  ConfigHandle c{build_config(flags)};
  ModelHandle m;
  check(mgr_model_create(c.config, &m.model), "building model");
  mgr_gradcheck_summary s{};
  check(mgr_gradcheck(m.model, step, threshold, &s), "gradient check");
  std::printf("%zu entries checked, %zu above %g, max relative error %.3e (%s)\n", s.checked, s.failed, threshold,
              s.max_relative_error, s.worst_parameter);
  return s.failed == 0 ? kExitPass : kExitFail;
}

int oracle_suite(std::uint64_t seed) {
  std::size_t passed = 0, failed = 0, needed = 0;
  std::string log(1 << 16, '\0');
  check(mgr_oracle_suite(seed, &passed, &failed, log.data(), log.size(), &needed), "oracle suite");
  std::fputs(log.c_str(), stdout);
  std::printf("%zu passed, %zu failed\n", passed, failed);
  return failed == 0 ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train, inspect and verify manager-based vision-language models"};
  app.require_subcommand(1);

  ConfigFlags tt_flags, mllm_flags, gc_flags;
  std::string tt_out = "runs/two-tower", mllm_out = "runs/mllm";
  std::optional<std::string> tt_task;
  auto* tt = app.add_subcommand("train-two-tower", "train the two-tower model on synthetic pairs");
  tt_flags.attach(tt);
  tt->add_option("--task", tt_task, "itm or mlm")->check(CLI::IsMember({"itm", "mlm"}));
  tt->add_option("--out", tt_out, "directory for checkpoint.mgrt and loss.csv");

  auto* ml = app.add_subcommand("train-mllm", "train the MLLM on the tile-count task");
  mllm_flags.attach(ml);
  ml->add_option("--out", mllm_out, "directory for checkpoint.mgrt and loss.csv");

  std::string checkpoint, diag_out;
  std::size_t samples = 8;
  auto* dg = app.add_subcommand("diagnose", "write diagnostic CSVs of a trained checkpoint");
  dg->add_option("--checkpoint", checkpoint, "checkpoint written by a training run")->required();
  dg->add_option("--out", diag_out, "output directory")->required();
  dg->add_option("--samples", samples, "held-out pairs to average over");

  double step = 1e-4, threshold = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc_flags.attach(gc);
  gc->add_option("--step", step, "finite-difference step");
  gc->add_option("--threshold", threshold, "maximum relative error");

  std::uint64_t suite_seed = 1;
  auto* os = app.add_subcommand("oracle-suite", "run every brute-force equivalence property");
  os->add_option("--seed", suite_seed, "suite seed");

  if (argc < 2) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*tt) return train(tt_flags, tt_task == "mlm" ? "two-tower-mlm" : "two-tower-itm", tt_task.has_value(), tt_out);
    if (*ml) return train(mllm_flags, "mllm-count", false, mllm_out);
    if (*dg) return diagnose(checkpoint, diag_out, samples);
    if (*gc) return gradcheck(gc_flags, step, threshold);
    if (*os) return oracle_suite(suite_seed);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitUsage;
}
