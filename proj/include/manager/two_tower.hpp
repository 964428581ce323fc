// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "manager/encoders.hpp"
#include "manager/managers.hpp"

namespace manager {

/// How the input of each cross-modal layer is produced.
enum class TowerMode {
  Sam,           // SAM everywhere
  Saum,          // SAUM everywhere
  Aaum,          // SAUM first, then AAUM routed on the previous own-modality state
  AaumFused,     // SAUM first, then AAUM routed on the fused query
  CrossAttn,     // SAUM first, then the cross-attention manager
  ConcatAttn,    // SAUM first, then the concat-attention manager
  OneHotBridge,  // SAUM with saturated one-hot weights: layer l takes expert l
  LastLayer,     // no managers; layer 1 consumes the projected last unimodal layer
};

std::string_view to_string(TowerMode mode);
/// Accepts the command-line names: sam, saum, aaum, aaum-fused, xattn,
/// concat, one-hot-bridge, last-layer.
TowerMode parse_tower_mode(std::string_view name);

/// Logit used for saturated one-hot aggregation weights.
inline constexpr double kOneHotLogit = 1000.0;

struct TwoTowerOptions {
  ModelConfig model;
  TowerMode mode = TowerMode::AaumFused;
  bool sam_split = false;
  /// Optional per-layer override of the manager kind for layers >= 2
  /// (index l - 1). Entries for layer 1 are ignored.
  std::vector<std::optional<ManagerKind>> layer_kinds;
};

struct CrossModalState {
  Tensor visual;   // [L_v x D]
  Tensor textual;  // [L_t x D]
  std::size_t layer = 0;
};

/// One modality's half of a co-attention layer.
struct CoAttentionHalf {
  LayerNormParams ln_msa;
  AttentionParams msa;
  LayerNormParams ln_mca;
  LayerNormParams ln_mca_context;
  AttentionParams mca;
  LayerNormParams ln_ffn;
  FeedForward ffn;

  static CoAttentionHalf create(ParameterStore& store, const std::string& prefix, const ModelConfig& config);
};

struct CoAttentionCapture {
  Tensor visual_self, visual_cross, textual_self, textual_cross;  // [H x Lq x Lk]
};

struct CrossModalLayer {
  CoAttentionHalf visual;
  CoAttentionHalf textual;

  static CrossModalLayer create(ParameterStore& store, std::size_t index, const ModelConfig& config);
  /// Pre-norm MSA, then MCA against the other stream's post-MSA state, then FFN.
  std::pair<Tensor, Tensor> forward(const Tensor& v, const Tensor& t, CoAttentionCapture* capture = nullptr) const;
};

struct ManagerRecord {
  std::size_t layer = 0;
  Modality modality = Modality::Visual;
  ManagerKind kind = ManagerKind::Saum;
  ManagerOutput output;
};

struct TwoTowerOutput {
  LayerBank visual_bank;
  LayerBank textual_bank;
  /// states[0] is the projected last unimodal layer; states[l] is layer l's output.
  std::vector<CrossModalState> states;
  std::vector<ManagerRecord> managers;
  std::vector<CoAttentionCapture> attention;  // filled when captured

  const CrossModalState& final_state() const { return states.back(); }
};

class TwoTowerModel {
 public:
  TwoTowerModel(ParameterStore& store, const TwoTowerOptions& options);

  TwoTowerOutput forward(const Tensor& image, std::span<const int> tokens, const RunMode& mode = {},
                         bool capture_attention = false) const;

  /// concat(tanh(P_v c_v[0]), tanh(P_t c_t[0])) -> linear -> [1 x 2].
  Tensor itm_logits(const CrossModalState& state) const;
  /// [|positions| x vocab]; undefined when `positions` is empty.
  Tensor mlm_logits(const CrossModalState& state, std::span<const std::size_t> positions) const;

  const TwoTowerOptions& options() const { return options_; }
  const VisualEncoder& visual_encoder() const { return visual_; }
  const TextualEncoder& textual_encoder() const { return textual_; }
  const CrossModalLayer& cross_layer(std::size_t layer) const;
  /// Manager of 1-based cross-modal layer `layer`; null in last-layer mode.
  const ManagerParams* manager(std::size_t layer, Modality modality) const;
  const TypeLayerEmbeddings& embeddings(Modality modality) const;
  const Tensor& input_projection(Modality modality) const;
  ManagerKind layer_kind(std::size_t layer) const;

 private:
  struct LayerManagers {
    ManagerKind kind = ManagerKind::Saum;
    ManagerParams visual, textual;
  };

  TwoTowerOptions options_;
  VisualEncoder visual_;
  TextualEncoder textual_;
  Tensor proj_v_, proj_t_;
  TypeLayerEmbeddings emb_v_, emb_t_;
  std::vector<LayerManagers> managers_;
  std::vector<CrossModalLayer> layers_;
  Linear pool_v_, pool_t_, itm_;
  Linear mlm_dense_;
  LayerNormParams mlm_ln_;
  Linear mlm_decoder_;
};

/// Minimal stack that feeds exactly one chosen unimodal layer into each
/// cross-modal layer: input_l = LN(U_k + type + layer_k) + W_C * LN(C_{l-1}).
/// Reads the parameters of `model` but shares none of its manager code.
class BridgeReference {
 public:
  /// `experts[l - 1]` is the 1-based top-N index fed into layer l.
  BridgeReference(const TwoTowerModel& model, std::vector<std::size_t> experts);

  CrossModalState forward(const Tensor& image, std::span<const int> tokens) const;

 private:
  const TwoTowerModel& model_;
  std::vector<std::size_t> experts_;
};

/// Expert selected at layer l by the one-hot bridge mode: min(l, N).
std::size_t one_hot_expert(std::size_t layer, std::size_t experts);

}  // namespace manager
