// SPDX-License-Identifier: Apache-2.0
#include "manager/mllm.hpp"

#include "manager/error.hpp"
#include "manager/ops.hpp"

namespace manager {

std::string_view to_string(ManageSegments segments) {
  switch (segments) {
    case ManageSegments::All: return "all";
    case ManageSegments::BaseOnly: return "base-only";
    case ManageSegments::GridsOnly: return "grids-only";
  }
  return "unknown";
}

ManageSegments parse_manage_segments(std::string_view name) {
  for (auto s : {ManageSegments::All, ManageSegments::BaseOnly, ManageSegments::GridsOnly}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown segment selection '" + std::string(name) + "'");
}

void MllmOptions::validate() const {
  model.validate();
  if (model.visual_layers < 2) throw ConfigError("the MLLM visual encoder drops its last layer and needs depth >= 2");
  if (decoder_layers == 0) throw ConfigError("the decoder needs at least one layer");
  if (max_grids == 0) throw ConfigError("max_grids must be positive");
  if (managers) {
    if (manager_count == 0 || manager_interval == 0) throw ConfigError("manager count and interval must be positive");
    const std::size_t last = 1 + (manager_count - 1) * manager_interval;
    if (last > decoder_layers) {
      throw ConfigError(std::to_string(manager_count) + " managers every " + std::to_string(manager_interval) +
                        " layers do not fit a " + std::to_string(decoder_layers) + "-layer decoder");
    }
  }
  const std::size_t p = model.patches_per_image();
  const std::size_t visual = grid ? p * (1 + max_grids) + max_grids : p;
  if (visual + 2 > max_seq_len) throw ConfigError("max_seq_len cannot hold the largest visual sequence");
}

std::vector<std::size_t> MllmOptions::manager_layers() const {
  std::vector<std::size_t> out;
  if (!managers) return out;
  for (std::size_t i = 0; i < manager_count; ++i) out.push_back(1 + i * manager_interval);
  return out;
}

namespace {

ModelConfig checked(const MllmOptions& o) {
  o.validate();
  return o.model;
}

}  // namespace

MllmModel::MllmModel(ParameterStore& store, const MllmOptions& options)
    : options_(options), encoder_(store, "visual", checked(options), options.encoder_depth()) {
  const ModelConfig& c = options_.model;
  const std::size_t d = c.hidden;
  proj_up_ = Linear::create(store, "projector.fc1", d, d);
  proj_down_ = Linear::create(store, "projector.fc2", d, d);
  token_embedding_ = store.add("decoder.token_embed", {c.vocab_size, d}, Init::normal());
  position_ = store.add("decoder.position", {options_.max_seq_len, d}, Init::normal());
  for (std::size_t l = 1; l <= options_.decoder_layers; ++l) {
    blocks_.push_back(TransformerBlock::create(store, "decoder.layer" + std::to_string(l), d, c.heads,
                                               d * c.ffn_mult));
  }
  final_ln_ = LayerNormParams::create(store, "decoder.ln_final", d);
  head_ = Linear::create(store, "decoder.head", d, c.vocab_size);
  manager_layers_ = options_.manager_layers();
  for (std::size_t l : manager_layers_) {
    ManagerOptions mo;
    mo.kind = ManagerKind::MllmSaum;
    mo.experts = options_.managed_depth();
    mo.hidden = d;
    mo.layer = l;
    managers_.push_back(ManagerParams::create(store, "manager.layer" + std::to_string(l) + ".v", mo));
  }
}

const ManagerParams* MllmModel::manager(std::size_t layer) const {
  for (std::size_t i = 0; i < manager_layers_.size(); ++i) {
    if (manager_layers_[i] == layer) return &managers_[i];
  }
  return nullptr;
}

Tensor MllmModel::project(const Tensor& features) const {
  return proj_down_.forward(gelu(proj_up_.forward(features)));
}

bool MllmModel::segment_managed(const Segment& s) const {
  switch (options_.manage_segments) {
    case ManageSegments::All: return true;
    case ManageSegments::BaseOnly: return s.is_base;
    case ManageSegments::GridsOnly: return !s.is_base;
  }
  return false;
}

VisualTokens MllmModel::encode_visual(const Tensor& image) const {
  const std::size_t tile = options_.model.image_side;
  const std::size_t p = encoder_.num_patches();
  const std::size_t k = options_.managed_depth();
  VisualTokens out;
  out.layout = multi_grid_layout(image, tile, options_.grid ? options_.max_grids : 1);

  std::vector<Tensor> pieces;
  std::size_t cursor = 0;
  auto add_segment = [&](const Tensor& img, bool is_base) {
    LayerBank bank = encoder_.encode(img);
    Segment seg;
    seg.is_base = is_base;
    seg.begin = cursor;
    seg.count = p;
    for (std::size_t i = bank.depth() - k + 1; i <= bank.depth(); ++i) seg.bank.push_back(slice_rows(bank.layer(i), 1, p));
    pieces.push_back(project(slice_rows(bank.layers.back(), 1, p)));
    cursor += p;
    out.segments.push_back(std::move(seg));
  };

  add_segment(out.layout.base, true);
  if (options_.grid) {
    const Tensor marker = slice_rows(token_embedding_, static_cast<std::size_t>(out.layout.row_end_marker), 1);
    for (std::size_t r = 0; r < out.layout.rows; ++r) {
      for (std::size_t c = 0; c < out.layout.cols; ++c) add_segment(out.layout.tiles[r * out.layout.cols + c], false);
      pieces.push_back(marker);
      out.marker_positions.push_back(cursor);
      ++cursor;
    }
  }
  out.tokens = concat_rows(pieces);
  return out;
}

MllmOutput MllmModel::forward(const VisualTokens& visual, std::span<const int> text, const RunMode& mode,
                              bool capture_attention) const {
  const std::size_t tv = visual.length();
  const std::size_t total = tv + text.size();
  if (text.empty()) throw ContractError("the MLLM needs at least one text token");
  if (total > options_.max_seq_len) {
    throw ContractError("sequence of " + std::to_string(total) + " tokens exceeds max length " +
                        std::to_string(options_.max_seq_len));
  }
  const std::size_t d = options_.model.hidden;
  const Tensor parts[] = {visual.tokens, embedding(token_embedding_, text)};
  Tensor x = add(concat_rows(parts), slice_rows(position_, 0, total));

  std::vector<const Segment*> managed;
  for (const auto& s : visual.segments) {
    if (segment_managed(s)) managed.push_back(&s);
  }

  MllmOutput out;
  out.visual_length = tv;
  out.hidden.push_back(x);
  for (std::size_t l = 1; l <= blocks_.size(); ++l) {
    const ManagerParams* mp = manager(l);
    if (mp != nullptr && !managed.empty()) {
      std::vector<Tensor> layers;
      for (std::size_t i = 0; i < mp->experts; ++i) {
        std::vector<Tensor> rows;
        for (const Segment* s : managed) rows.push_back(s->bank[i]);
        layers.push_back(concat_rows(rows));
      }
      ManagerOutput mo = mllm_saum_forward(stack(layers), *mp, mode);
      std::vector<Tensor> delta;
      std::size_t cursor = 0, offset = 0;
      for (const Segment* s : managed) {
        if (s->begin > cursor) delta.push_back(Tensor::zeros({s->begin - cursor, d}));
        delta.push_back(slice_rows(mo.output, offset, s->count));
        offset += s->count;
        cursor = s->begin + s->count;
      }
      if (total > cursor) delta.push_back(Tensor::zeros({total - cursor, d}));
      x = add(x, concat_rows(delta));
      out.managers.push_back({l, std::move(mo)});
    }
    auto res = blocks_[l - 1].forward(x, /*causal=*/true, capture_attention);
    x = res.hidden;
    out.hidden.push_back(x);
    if (capture_attention) out.attention.push_back(res.attention);
  }
  out.logits = head_.forward(final_ln_.forward(x));
  return out;
}

Tensor autoregressive_loss(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  if (logits.rank() != 2 || targets.size() != logits.dim(0) || mask.size() != logits.dim(0)) {
    throw DimensionError("logits " + shape_to_string(logits.shape()) + " need one target and mask entry per row");
  }
  std::vector<Tensor> rows;
  std::vector<int> picked;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    rows.push_back(slice_rows(logits, i, 1));
    picked.push_back(targets[i]);
  }
  if (rows.empty()) throw ContractError("answer mask selects no positions");
  return cross_entropy(concat_rows(rows), picked);
}

}  // namespace manager
