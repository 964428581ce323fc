// SPDX-License-Identifier: Apache-2.0
#include "manager/manager.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "manager/error.hpp"
#include "manager/experiment.hpp"
#include "suite.hpp"

struct mgr_config {
  manager::ExperimentConfig config;
};

struct mgr_model {
  manager::Experiment experiment;
};

namespace {

thread_local std::string last_error;

mgr_status fail(mgr_status status, const char* message) {
  last_error = message;
  return status;
}

template <typename F>
mgr_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return MGR_OK;
  } catch (const manager::DimensionError& e) {
    return fail(MGR_ERR_DIMENSION, e.what());
  } catch (const manager::DomainError& e) {
    return fail(MGR_ERR_DOMAIN, e.what());
  } catch (const manager::IndexError& e) {
    return fail(MGR_ERR_INDEX, e.what());
  } catch (const manager::ContractError& e) {
    return fail(MGR_ERR_CONTRACT, e.what());
  } catch (const manager::ConfigError& e) {
    return fail(MGR_ERR_CONFIG, e.what());
  } catch (const manager::FormatError& e) {
    return fail(MGR_ERR_FORMAT, e.what());
  } catch (const manager::IoError& e) {
    return fail(MGR_ERR_IO, e.what());
  } catch (const manager::NumericError& e) {
    return fail(MGR_ERR_NUMERIC, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(MGR_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(MGR_ERR_UNKNOWN, e.what());
  } catch (...) {
    return fail(MGR_ERR_UNKNOWN, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw manager::ContractError(std::string(what) + " must not be null");
}

void copy_out(const std::string& text, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  if (buf == nullptr || cap == 0) return;
  const std::size_t n = std::min(cap - 1, text.size());
  std::memcpy(buf, text.data(), n);
  buf[n] = '\0';
}

}  // namespace

extern "C" {

const char* mgr_last_error(void) { return last_error.c_str(); }

const char* mgr_status_name(mgr_status status) {
  switch (status) {
    case MGR_OK: return "ok";
    case MGR_ERR_DIMENSION: return "dimension error";
    case MGR_ERR_DOMAIN: return "domain error";
    case MGR_ERR_INDEX: return "index error";
    case MGR_ERR_CONTRACT: return "contract error";
    case MGR_ERR_CONFIG: return "config error";
    case MGR_ERR_FORMAT: return "format error";
    case MGR_ERR_IO: return "io error";
    case MGR_ERR_NUMERIC: return "numeric error";
    case MGR_ERR_UNKNOWN: break;
  }
  return "unknown error";
}

const char* mgr_build_id(void) { return manager::build_id(); }

mgr_status mgr_config_create(mgr_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new mgr_config{};
  });
}

mgr_status mgr_config_load(const char* path, mgr_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new mgr_config{manager::ExperimentConfig::load(path)};
  });
}

mgr_status mgr_config_set(mgr_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    config->config.set(key, value);
  });
}

mgr_status mgr_config_get(const mgr_config* config, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    copy_out(config->config.get(key), buf, cap, needed);
  });
}

mgr_status mgr_config_apply_env(mgr_config* config) {
  return guarded([&] {
    require(config, "config");
    config->config.apply_env();
  });
}

mgr_status mgr_config_serialize(const mgr_config* config, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    copy_out(config->config.serialize(), buf, cap, needed);
  });
}

void mgr_config_destroy(mgr_config* config) { delete config; }

mgr_status mgr_model_create(const mgr_config* config, mgr_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new mgr_model{manager::Experiment(config->config)};
  });
}

mgr_status mgr_model_load(const char* path, mgr_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new mgr_model{manager::Experiment::load(path)};
  });
}

mgr_status mgr_model_save(const mgr_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    model->experiment.save(path);
  });
}

void mgr_model_destroy(mgr_model* model) { delete model; }

mgr_status mgr_model_config(const mgr_model* model, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(model, "model");
    copy_out(model->experiment.config().serialize(), buf, cap, needed);
  });
}

mgr_status mgr_model_param_count(const mgr_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->experiment.store().scalar_count();
  });
}

mgr_status mgr_model_eval_logits(const mgr_model* model, size_t pairs, double* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(model, "model");
    const auto logits = model->experiment.eval_logits(pairs);
    if (needed != nullptr) *needed = logits.size();
    if (buf != nullptr) std::memcpy(buf, logits.data(), std::min(cap, logits.size()) * sizeof(double));
  });
}

mgr_status mgr_model_eval_loss(const mgr_model* model, double* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->experiment.eval_loss();
  });
}

mgr_status mgr_train(mgr_model* model, const mgr_train_options* options, mgr_train_summary* summary) {
  return guarded([&] {
    require(model, "model");
    manager::TrainOptions opts;
    opts.failure_dump = "nan_dump.mgrt";
    if (options != nullptr) {
      if (options->checkpoint_path != nullptr) opts.checkpoint = options->checkpoint_path;
      if (options->curve_csv != nullptr) opts.loss_csv = options->curve_csv;
      if (options->dump_path != nullptr) opts.failure_dump = options->dump_path;
      if (options->on_step != nullptr) {
        opts.on_step = [cb = options->on_step, user = options->user](const manager::LossRecord& r) {
          cb(r.step, r.loss, r.lr, user);
        };
      }
    }
    const manager::TrainResult r = model->experiment.train(opts);
    if (summary != nullptr) {
      summary->steps = r.curve.size();
      summary->first_loss = r.curve.empty() ? 0.0 : r.curve.front().loss;
      summary->last_loss = r.curve.empty() ? 0.0 : r.curve.back().loss;
      summary->initial_eval_loss = r.initial_eval_loss;
      summary->final_eval_loss = r.final_eval_loss;
    }
  });
}

mgr_status mgr_diagnose(const mgr_model* model, size_t samples, const char* out_dir) {
  return guarded([&] {
    require(model, "model");
    require(out_dir, "out_dir");
    manager::export_report(model->experiment.diagnose(samples), out_dir);
  });
}

mgr_status mgr_gradcheck(const mgr_model* model, double step, double threshold, mgr_gradcheck_summary* summary) {
  return guarded([&] {
    require(model, "model");
    require(summary, "summary");
    manager::GradcheckOptions opts;
    opts.step = step;
    opts.threshold = threshold;
    const manager::GradcheckReport r = model->experiment.gradcheck(opts);
    *summary = {};
    std::string worst;
    for (const auto& p : r.parameters) {
      summary->checked += p.entries;
      if (p.max_relative_error >= summary->max_relative_error) {
        summary->max_relative_error = p.max_relative_error;
        worst = p.name;
      }
    }
    summary->failed = r.flagged();
    copy_out(worst, summary->worst_parameter, sizeof(summary->worst_parameter), nullptr);
  });
}

mgr_status mgr_oracle_suite(uint64_t seed, size_t* passed, size_t* failed, char* log, size_t cap, size_t* needed) {
  return guarded([&] {
    std::size_t ok = 0, bad = 0;
    std::string text;
    for (const auto& r : manager::suite::run_all(seed)) {
      (r.passed ? ok : bad) += 1;
      text += manager::suite::format_result(r) + "\n";
    }
    if (passed != nullptr) *passed = ok;
    if (failed != nullptr) *failed = bad;
    copy_out(text, log, cap, needed);
  });
}

}  // extern "C"
