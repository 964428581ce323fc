// SPDX-License-Identifier: Apache-2.0
// One PASS/FAIL line per acceptance criterion; exits 1 when any fails.
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "manager/diagnostics.hpp"
#include "manager/experiment.hpp"
#include "suite.hpp"

using namespace manager;

namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  std::cout << (ok ? "[PASS] AC" : "[FAIL] AC") << id << " " << what << std::endl;
  if (!ok) ++failures;
}

void note(const std::string& line) { std::cout << "       " << line << std::endl; }

ExperimentConfig load(const char* name) {
  return ExperimentConfig::load(fs::path(MANAGER_SOURCE_DIR) / "configs" / name);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

suite::PropertyResult find(const std::vector<suite::PropertyResult>& all, const std::string& name) {
  for (const auto& r : all) {
    if (r.name == name) return r;
  }
  suite::PropertyResult missing;
  missing.name = name;
  missing.passed = false;
  missing.detail = "not run";
  return missing;
}

bool property(const std::vector<suite::PropertyResult>& all, const std::string& name, std::size_t min_cases) {
  const auto r = find(all, name);
  note(suite::format_result(r));
  return r.passed && r.cases >= min_cases;
}

struct Run {
  std::string label;
  TrainResult result;
};

Run train(ExperimentConfig c, const std::string& label, Experiment** keep = nullptr) {
  static std::vector<std::unique_ptr<Experiment>> kept;
  auto e = std::make_unique<Experiment>(c);
  Run r{label, e->train()};
  note(label + ": eval loss " + fmt(r.result.initial_eval_loss) + " -> " + fmt(r.result.final_eval_loss));
  if (keep != nullptr) {
    *keep = e.get();
    kept.push_back(std::move(e));
  }
  return r;
}

bool decreased(const Run& r) { return r.result.final_eval_loss < r.result.initial_eval_loss; }

bool well_formed(const fs::path& dir, const DiagnosticsReport& r, std::size_t layers) {
  if (!fs::exists(dir / "manifest.json") || fs::file_size(dir / "manifest.json") == 0) return false;
  for (const char* name : {"attention_entropy", "inter_head_kl"}) {
    const fs::path p = dir / (std::string(name) + ".csv");
    if (!fs::exists(p)) return false;
    const MetricTable t = read_metric_csv(p);
    if (t.rows.size() != layers || t.columns != r.metrics.at(name).columns) return false;
    if (t.rows != r.metrics.at(name).rows) return false;
    for (const auto& row : t.rows)
      for (double v : row)
        if (!std::isfinite(v) || v < 0.0) return false;
  }
  return true;
}

}  // namespace

int main() {
  const std::uint64_t seed = 20240601;
  const auto props = suite::run_all(seed);

  report(1, property(props, "manager_equivalence", 50), "manager variants match the expansion oracle within 1e-10 over >= 50 configurations");

  {
    bool ok = true;
    for (const char* name : {"toy.cfg", "mllm.cfg"}) {
      const Experiment e(load(name));
      const GradcheckReport g = e.gradcheck({1e-4, 1e-3});
      note(std::string(name) + ": " + std::to_string(g.parameters.size()) + " parameters, max relative error " +
           fmt(g.max_relative_error()) + ", flagged " + std::to_string(g.flagged()));
      ok = ok && g.passed() && g.max_relative_error() < 1e-3;
    }
    report(2, ok, "finite-difference gradients of the toy tower and toy MLLM within 1e-3 at h=1e-4");
  }

  report(3, property(props, "one_hot_bridge", 20), "one-hot SAUM tower equals the bridge reference within 1e-6 on 20 inputs");
  report(4, property(props, "zero_init_grid", 50) && property(props, "zero_init_no_grid", 50),
         "zero-initialized managers leave MLLM logits bit-identical, grid on and off");
  report(5, property(props, "normalization", 1000), "softmax-produced weights sum to 1 within 1e-9 over 1000 forwards");

  {
    bool ok = property(props, "diagnostics", 1);
    std::vector<double> u(3 * 5 * 6, 1.0 / 6.0);
    const double e = attention_entropy(Tensor::from_vector({3, 5, 6}, u));
    const double kl = inter_head_kl(Tensor::from_vector({3, 5, 6}, u));
    std::vector<double> q(16, 0.25);
    const double dist = mean_attention_distance(Tensor::from_vector({1, 4, 4}, q), 2, 2, 1.0).mean;
    note("uniform entropy error " + fmt(std::abs(e - std::log(6.0))) + ", identical-head KL " + fmt(kl) +
         ", 2x2 distance error " + fmt(std::abs(dist - (2.0 + std::sqrt(2.0)) / 4.0)));
    ok = ok && std::abs(e - std::log(6.0)) <= 1e-12 && kl == 0.0 && std::abs(dist - (2.0 + std::sqrt(2.0)) / 4.0) <= 1e-10;
    report(6, ok, "diagnostic metrics match closed forms and brute-force oracles");
  }

  report(7, property(props, "multigrid", 30), "multi-grid reassembly, token counts and exact-division shapes over 30 combinations");
  report(8, property(props, "causality", 500) && property(props, "determinism", 500),
         "causal zero mass and eval-mode determinism on 500 fuzzed cases each");

  Experiment* grid_plain = nullptr;
  Experiment* grid_managed = nullptr;
  {
    bool ok = true;
    const ExperimentConfig itm = load("toy.cfg");
    ExperimentConfig off = itm;
    off.manager_kind = TowerMode::LastLayer;
    const Run itm_on = train(itm, "ITM manager on (" + std::string(to_string(itm.manager_kind)) + ")");
    const Run itm_off = train(off, "ITM manager off (last-layer)");
    ok = ok && decreased(itm_on) && decreased(itm_off);

    std::vector<Run> mllm;
    for (bool grid : {false, true}) {
      for (bool managed : {false, true}) {
        ExperimentConfig c = load("mllm.cfg");
        c.grid = grid;
        c.manager = managed;
        const std::string label = std::string("MLLM ") + (grid ? "+grid" : "-grid") + (managed ? " +manager" : " -manager");
        Experiment** keep = grid ? (managed ? &grid_managed : &grid_plain) : nullptr;
        mllm.push_back(train(c, label, keep));
        ok = ok && decreased(mllm.back());
      }
    }
    const auto order = [](const Run& on, const Run& off) {
      return on.result.final_eval_loss <= off.result.final_eval_loss ? "yes" : "no";
    };
    note(std::string("ordering (manager-on final loss <= manager-off, not gated): ITM ") + order(itm_on, itm_off) +
         ", MLLM -grid " + order(mllm[1], mllm[0]) + ", MLLM +grid " + order(mllm[3], mllm[2]));
    report(9, ok, "ITM (200 steps) and every MLLM grid/manager combination (300 steps) lower the held-out loss");
  }

  {
    bool ok = grid_plain != nullptr && grid_managed != nullptr;
    if (ok) {
      const std::size_t layers = grid_plain->config().decoder_layers;
      const fs::path root = fs::temp_directory_path() / "manager_acceptance";
      fs::remove_all(root);
      const DiagnosticsReport a = grid_plain->diagnose(16), b = grid_managed->diagnose(16);
      export_report(a, root / "grid");
      export_report(b, root / "grid_manager");
      ok = well_formed(root / "grid", a, layers) && well_formed(root / "grid_manager", b, layers);
      const MetricTable& ea = a.metrics.at("attention_entropy");
      const MetricTable& eb = b.metrics.at("attention_entropy");
      std::size_t higher = 0;
      std::string per_layer;
      for (std::size_t l = 0; l < ea.rows.size(); ++l) {
        higher += eb.rows[l][0] > ea.rows[l][0] ? 1 : 0;
        per_layer += " L" + std::to_string(l + 1) + " " + fmt(ea.rows[l][0]) + "->" + fmt(eb.rows[l][0]);
      }
      note("attention entropy grid -> grid+manager (not gated):" + per_layer);
      note("manager raises entropy in " + std::to_string(higher) + " of " + std::to_string(ea.rows.size()) + " layers");
      fs::remove_all(root);
    }
    report(10, ok, "diagnostic CSVs of the trained grid and grid+manager MLLMs are produced and well-formed");
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
