// SPDX-License-Identifier: Apache-2.0
#include "manager/synthetic.hpp"

#include <algorithm>
#include <numeric>

#include "manager/error.hpp"
#include "manager/rng.hpp"

namespace manager {

CaptionVocab::CaptionVocab(const ModelConfig& config) {
  cells_per_side = config.image_side / config.patch_size;
  const std::size_t cells = cells_per_side * cells_per_side;
  max_blobs = std::min<std::size_t>(4, cells);
  const std::size_t needed = static_cast<std::size_t>(TokenIds::kFirstFree) + max_blobs + cells;
  if (needed > config.vocab_size) {
    throw ConfigError("synthetic captions need a vocabulary of " + std::to_string(needed) + " tokens");
  }
  if (max_blobs + 3 > config.max_text_len) throw ConfigError("max_text_len too short for synthetic captions");
}

int CaptionVocab::count_token(std::size_t k) const { return TokenIds::kFirstFree + static_cast<int>(k) - 1; }

int CaptionVocab::cell_token(std::size_t cell) const {
  return TokenIds::kFirstFree + static_cast<int>(max_blobs + cell);
}

std::uint64_t eval_seed(std::uint64_t seed) { return mix64(seed ^ fnv1a64("held-out")); }

namespace {

Rng pair_rng(std::uint64_t seed, std::size_t index, std::string_view stream) {
  return Rng(seed ^ mix64(static_cast<std::uint64_t>(index) + 1), stream);
}

std::vector<std::size_t> pick_cells(Rng& rng, std::size_t cells, std::size_t k) {
  std::vector<std::size_t> all(cells);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng.engine());
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<int> caption(const CaptionVocab& v, const std::vector<std::size_t>& cells) {
  std::vector<int> t{TokenIds::kBos, v.count_token(cells.size())};
  for (std::size_t c : cells) t.push_back(v.cell_token(c));
  t.push_back(TokenIds::kEos);
  return t;
}

Tensor blob_image(Rng& rng, const ModelConfig& config, const std::vector<std::size_t>& cells) {
  const std::size_t side = config.image_side, ch = config.channels, p = config.patch_size;
  const std::size_t cps = side / p;
  std::vector<double> px(side * side * ch);
  for (double& x : px) x = rng.uniform(0.0, 0.1);
  const std::size_t margin = p >= 4 ? p / 4 : 0;
  for (std::size_t cell : cells) {
    const std::size_t cy = (cell / cps) * p, cx = (cell % cps) * p;
    for (std::size_t y = cy + margin; y < cy + p - margin; ++y)
      for (std::size_t x = cx + margin; x < cx + p - margin; ++x)
        for (std::size_t k = 0; k < ch; ++k) px[(y * side + x) * ch + k] = 1.0;
  }
  return Tensor::from_vector({side, side, ch}, std::move(px));
}

}  // namespace

SyntheticPair itm_pair(std::uint64_t seed, std::size_t index, const ModelConfig& config) {
  const CaptionVocab v(config);
  const std::size_t cells = v.cells_per_side * v.cells_per_side;
  Rng rng = pair_rng(seed, index, "itm");
  SyntheticPair out;
  const auto k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(v.max_blobs)));
  out.cells = pick_cells(rng, cells, k);
  out.image = blob_image(rng, config, out.cells);
  out.label = rng.bernoulli(0.5) ? 1 : 0;
  if (out.label == 1) {
    out.tokens = caption(v, out.cells);
  } else {
    std::size_t k2 = k;
    if (v.max_blobs >= 2) {
      while (k2 == k) k2 = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(v.max_blobs)));
    }
    std::vector<std::size_t> other = pick_cells(rng, cells, k2);
    while (other == out.cells && cells > 1) other = pick_cells(rng, cells, k2);
    out.tokens = caption(v, other);
  }
  return out;
}

SyntheticPair mlm_pair(std::uint64_t seed, std::size_t index, const ModelConfig& config, double mask_rate) {
  const CaptionVocab v(config);
  const std::size_t cells = v.cells_per_side * v.cells_per_side;
  Rng rng = pair_rng(seed, index, "mlm");
  SyntheticPair out;
  const auto k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(v.max_blobs)));
  out.cells = pick_cells(rng, cells, k);
  out.image = blob_image(rng, config, out.cells);
  out.label = 1;
  out.tokens = caption(v, out.cells);
  const std::size_t content = out.tokens.size() - 2;
  for (std::size_t i = 1; i <= content; ++i) {
    if (rng.bernoulli(mask_rate)) out.masked_positions.push_back(i);
  }
  if (out.masked_positions.empty()) {
    out.masked_positions.push_back(static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(content))));
  }
  for (std::size_t pos : out.masked_positions) {
    out.masked_targets.push_back(out.tokens[pos]);
    out.tokens[pos] = TokenIds::kMask;
  }
  return out;
}

SyntheticPair mllm_pair(std::uint64_t seed, std::size_t index, const MllmOptions& options) {
  const std::size_t t = options.model.image_side, ch = options.model.channels;
  Rng rng = pair_rng(seed, index, "mllm");
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::size_t r = 1; r <= 2; ++r)
    for (std::size_t c = 1; c <= 2; ++c)
      if (r * c <= options.max_grids) shapes.emplace_back(r, c);
  const auto [rows, cols] = shapes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(shapes.size()) - 1))];
  const std::size_t h = rows * t, w = cols * t;
  std::vector<double> px(h * w * ch);
  for (double& x : px) x = rng.uniform(0.0, 0.1);
  SyntheticPair out;
  const std::size_t margin = t / 4;
  for (std::size_t tile = 0; tile < rows * cols; ++tile) {
    if (!rng.bernoulli(0.5)) continue;
    out.cells.push_back(tile);
    const std::size_t ty = (tile / cols) * t, tx = (tile % cols) * t;
    for (std::size_t y = ty + margin; y < ty + t - margin; ++y)
      for (std::size_t x = tx + margin; x < tx + t - margin; ++x)
        for (std::size_t k = 0; k < ch; ++k) px[(y * w + x) * ch + k] = 1.0;
  }
  out.image = Tensor::from_vector({h, w, ch}, std::move(px));
  out.answer = out.cells.size();
  out.tokens = {TokenIds::kBos, CountVocab::kQuestion, CountVocab::answer_token(out.answer), TokenIds::kEos};
  if (static_cast<std::size_t>(CountVocab::answer_token(4)) >= options.model.vocab_size) {
    throw ConfigError("vocabulary too small for the counting task");
  }
  return out;
}

std::vector<SyntheticPair> gen_synthetic_pairs(std::uint64_t seed, std::size_t count, const ExperimentConfig& config) {
  if (count == 0) throw ContractError("count must be at least 1");
  std::vector<SyntheticPair> out;
  out.reserve(count);
  const MllmOptions mo = config.mllm_options();
  for (std::size_t i = 0; i < count; ++i) {
    switch (config.task) {
      case Task::TwoTowerItm: out.push_back(itm_pair(seed, i, config.model)); break;
      case Task::TwoTowerMlm: out.push_back(mlm_pair(seed, i, config.model, config.mlm_mask_rate)); break;
      case Task::MllmCount: out.push_back(mllm_pair(seed, i, mo)); break;
    }
  }
  return out;
}

}  // namespace manager
