// SPDX-License-Identifier: Apache-2.0
// Brute-force equivalence and invariant properties of the core library,
// checked against the plain-loop references in oracle.hpp.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "manager/mllm.hpp"
#include "manager/two_tower.hpp"

namespace manager::suite {

struct PropertyResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;  // first failing case
};

ModelConfig tiny_two_tower_config();
MllmOptions tiny_mllm_options();

/// Every manager variant against its oracle over `configs` configurations
/// cycling through N in {1,2,3,6}, L in {1,2,5}, D in {4,8}.
PropertyResult manager_equivalence(std::uint64_t seed, std::size_t configs, double tolerance);
/// Transformer block, attention weights and co-attention layer against the oracle.
PropertyResult block_equivalence(std::uint64_t seed, std::size_t cases, double tolerance);
/// One-hot SAUM tower against the bridge reference stack.
PropertyResult one_hot_bridge(std::uint64_t seed, std::size_t cases, double tolerance);
/// Managed MLLM at initialization against the unmanaged baseline, bit-exact.
PropertyResult zero_init(std::uint64_t seed, std::size_t cases, bool grid);
/// Row sums of every softmax-produced weight over fuzzed forwards.
PropertyResult normalization(std::uint64_t seed, std::size_t forwards, double tolerance);
/// Closed-form cases and random inputs against the metric oracles.
PropertyResult diagnostics(std::uint64_t seed, std::size_t cases);
/// Tile reassembly, token counts and exact-division grid shapes.
PropertyResult multigrid(std::uint64_t seed, std::size_t combos);
/// Zero mass above the causal diagonal and prefix-invariant logits.
PropertyResult causality(std::uint64_t seed, std::size_t cases);
/// Eval-mode forwards repeat bit-exactly; seeded training noise repeats too.
PropertyResult determinism(std::uint64_t seed, std::size_t cases);

/// All of the above at their default sizes.
std::vector<PropertyResult> run_all(std::uint64_t seed);

std::string format_result(const PropertyResult& r);

}  // namespace manager::suite
