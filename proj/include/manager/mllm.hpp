// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "manager/encoders.hpp"
#include "manager/managers.hpp"
#include "manager/multigrid.hpp"

namespace manager {

enum class ManageSegments { All, BaseOnly, GridsOnly };

std::string_view to_string(ManageSegments segments);
ManageSegments parse_manage_segments(std::string_view name);

struct MllmOptions {
  /// Visual encoder and width settings; `image_side` is the tile side and
  /// `visual_layers` the depth before the last layer is dropped.
  ModelConfig model;
  std::size_t decoder_layers = 6;
  std::size_t max_seq_len = 128;
  bool grid = true;
  std::size_t max_grids = 4;
  bool managers = true;
  std::size_t manager_count = 3;
  std::size_t manager_interval = 2;
  ManageSegments manage_segments = ManageSegments::All;

  void validate() const;
  /// Decoder layers (1-based) that receive a manager: 1, 1+s, 1+2s, ...
  std::vector<std::size_t> manager_layers() const;
  /// Depth of the visual encoder actually built.
  std::size_t encoder_depth() const { return model.visual_layers - 1; }
  /// Number of top visual layers aggregated by each manager.
  std::size_t managed_depth() const { return (encoder_depth() + 1) / 2; }
};

struct Segment {
  bool is_base = true;
  std::size_t begin = 0;  // first position in the visual token sequence
  std::size_t count = 0;
  /// Top managed_depth() layers of this segment's patch rows, each [P x D].
  std::vector<Tensor> bank;
};

struct VisualTokens {
  Tensor tokens;  // [T_v x D] in decoder space, markers included
  std::vector<Segment> segments;
  std::vector<std::size_t> marker_positions;
  GridLayout layout;
  std::size_t length() const { return tokens.dim(0); }
};

struct MllmManagerRecord {
  std::size_t layer = 0;
  ManagerOutput output;
};

struct MllmOutput {
  Tensor logits;               // [T x vocab], T = visual + text
  std::vector<Tensor> hidden;  // hidden[0] is the decoder input, hidden[l] layer l's output
  std::vector<Tensor> attention;  // per layer [H x T x T] when captured
  std::vector<MllmManagerRecord> managers;
  std::size_t visual_length = 0;
};

class MllmModel {
 public:
  MllmModel(ParameterStore& store, const MllmOptions& options);

  /// Encodes the base image and, with the grid on, every tile independently.
  VisualTokens encode_visual(const Tensor& image) const;

  /// Runs the causal decoder over [visual tokens ; embedded text].
  MllmOutput forward(const VisualTokens& visual, std::span<const int> text, const RunMode& mode = {},
                     bool capture_attention = false) const;

  const MllmOptions& options() const { return options_; }
  const VisualEncoder& visual_encoder() const { return encoder_; }
  /// Manager feeding decoder layer `layer`, or null.
  const ManagerParams* manager(std::size_t layer) const;
  Tensor project(const Tensor& features) const;

 private:
  bool segment_managed(const Segment& s) const;

  MllmOptions options_;
  VisualEncoder encoder_;
  Linear proj_up_, proj_down_;
  Tensor token_embedding_;
  Tensor position_;
  std::vector<TransformerBlock> blocks_;
  LayerNormParams final_ln_;
  Linear head_;
  std::vector<std::size_t> manager_layers_;
  std::vector<ManagerParams> managers_;
};

/// Mean cross-entropy of `logits` rows against `targets` over positions where
/// `mask` is set.
Tensor autoregressive_loss(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask);

}  // namespace manager
