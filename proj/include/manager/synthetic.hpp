// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "manager/config.hpp"

namespace manager {

/// Token layout of the synthetic two-tower vocabulary.
struct CaptionVocab {
  std::size_t cells_per_side = 0;
  std::size_t max_blobs = 0;

  explicit CaptionVocab(const ModelConfig& config);
  int count_token(std::size_t k) const;  // k in [1, max_blobs]
  int cell_token(std::size_t cell) const;
};

/// Token layout of the MLLM counting task.
struct CountVocab {
  static constexpr int kQuestion = TokenIds::kFirstFree;
  static int answer_token(std::size_t count) { return kQuestion + 1 + static_cast<int>(count); }
};

struct SyntheticPair {
  Tensor image;
  std::vector<int> tokens;
  int label = -1;                             // ITM: 1 matched, 0 mismatched
  std::vector<std::size_t> masked_positions;  // MLM
  std::vector<int> masked_targets;
  std::size_t answer = 0;                     // MLLM: number of marked tiles
  std::vector<std::size_t> cells;             // blob cells or marked tiles
};

/// Image with k blobs on a cell grid and a caption naming k and the cells.
/// Negatives carry the caption of a different layout with another count.
SyntheticPair itm_pair(std::uint64_t seed, std::size_t index, const ModelConfig& config);
/// Matched caption with ~mask_rate of its content tokens replaced by kMask.
SyntheticPair mlm_pair(std::uint64_t seed, std::size_t index, const ModelConfig& config, double mask_rate);
/// Image of up to max_grids tiles, some marked; text asks for the count.
SyntheticPair mllm_pair(std::uint64_t seed, std::size_t index, const MllmOptions& options);

std::vector<SyntheticPair> gen_synthetic_pairs(std::uint64_t seed, std::size_t count, const ExperimentConfig& config);

/// Seed of the held-out evaluation stream for a run seed.
std::uint64_t eval_seed(std::uint64_t seed);

}  // namespace manager
