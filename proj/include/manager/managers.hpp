// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "manager/encoders.hpp"
#include "manager/rng.hpp"

namespace manager {

enum class ManagerKind { Sam, Saum, Aaum, CrossAttn, ConcatAttn, MllmSaum };

std::string_view to_string(ManagerKind kind);

/// Exploration noise of the managers. Only ever applied in training mode.
struct NoiseSpec {
  /// Gaussian noise on AAUM/cross-attention router logits, sigma = 1/N.
  bool aaum_gaussian = true;
  /// Multiplicative jitter on the MLLM manager output, eps ~ U(low, high).
  bool mllm_jitter = true;
  double jitter_low = 0.98;
  double jitter_high = 1.02;
};

/// Forward-pass mode shared by everything that may inject noise.
struct RunMode {
  bool training = false;
  const NoiseSpec* noise = nullptr;
  Rng* rng = nullptr;

  bool gaussian_on() const;
  bool jitter_on() const;
  Rng& random() const;
};

struct ManagerOptions {
  ManagerKind kind = ManagerKind::Saum;
  std::size_t experts = 1;  // N (K for the MLLM variant)
  std::size_t hidden = 1;
  std::size_t layer = 1;    // cross-modal layer index, 1-based
  /// SAUM in the first layer has no previous cross-modal input.
  bool has_cross = true;
  /// SAM: learn unimodal and cross-modal weights with separate softmaxes.
  bool split = false;
  /// AAUM: route on the cross-modal fused query instead of the own modality.
  bool fused_query = false;
};

/// Learnable state of one manager. Fields not used by `kind` stay undefined.
struct ManagerParams {
  ManagerKind kind = ManagerKind::Saum;
  std::size_t experts = 0;
  std::size_t hidden = 0;
  std::size_t layer = 1;
  bool split = false;
  bool fused_query = false;

  Tensor w;        // SAM: [(N+l-1) x D], or [N x D] when split; SAUM / MLLM: [N x D]
  Tensor w_cross;  // SAM split: [(l-1) x D]
  Tensor w_c;      // [1 x D], cross-modal weight
  Tensor w_m;      // AAUM router projection [D x N]
  Tensor log_tau_uni;    // temperature = exp(log_tau)
  Tensor log_tau_cross;  // SAM split only
  LayerNormParams ln_uni;
  LayerNormParams ln_cross;
  LayerNormParams ln_query;
  Tensor query_proj;  // [D x D]: fused query or cross-attention manager
  Tensor key_proj;    // [D x D]
  Linear concat_proj; // 2D -> D

  static ManagerParams create(ParameterStore& store, const std::string& prefix, const ManagerOptions& options);

  Tensor tau_uni() const;
  Tensor tau_cross() const;
};

/// Modality-type ([2 x D]) and layer-index ([N x D]) embeddings added to the
/// managed unimodal layers.
struct TypeLayerEmbeddings {
  Tensor type;
  Tensor layer;

  static TypeLayerEmbeddings create(ParameterStore& store, const std::string& prefix, std::size_t experts,
                                    std::size_t hidden);
};

/// out[i] = in[i] + type[modality] + layer[i], broadcast over the sequence.
Tensor add_type_layer_embeddings(const Tensor& bank_slice, Modality modality, const TypeLayerEmbeddings& emb);

struct ManagerOutput {
  Tensor output;    // [L x D]
  Tensor unimodal;  // aggregated unimodal part
  Tensor cross;     // aggregated cross-modal part, undefined when absent
  /// Detached aggregation weights, rows = experts, columns = tokens. Static
  /// per-feature weights are averaged over the feature axis.
  Tensor weights;
  /// Row ranges [begin, begin + count) of `weights` that are softmax groups.
  std::vector<std::pair<std::size_t, std::size_t>> normalized_groups;
};

/// Static aggregation over all unimodal experts and every previous
/// cross-modal layer output (`cross_history` holds C_1 .. C_{l-1}).
ManagerOutput sam_forward(const Tensor& uni, std::span<const Tensor> cross_history, const ManagerParams& params);

/// Static aggregation of the unimodal experts plus W_C * LN(previous layer).
/// `cross_prev` is null for a first-layer manager.
ManagerOutput saum_forward(const Tensor& uni, const Tensor* cross_prev, const ManagerParams& params);

/// Single-head cross-attention of the own previous-layer output over the
/// other modality's, with the raw other-modality states as values.
Tensor fused_query(const Tensor& own_prev, const Tensor& other_prev, const ManagerParams& params);

/// Per-token router weights softmax(LN(query) W_M + eps) over the experts.
ManagerOutput aaum_forward(const Tensor& uni, const Tensor& cross_prev, const Tensor& query,
                           const ManagerParams& params, const RunMode& mode);

/// Router weights from attending the previous layer over each expert's first token.
ManagerOutput cross_attention_manager(const Tensor& uni, const Tensor& cross_prev, const ManagerParams& params,
                                      const RunMode& mode);

/// Per-expert, per-token, per-feature weights projected from concat(C, V_i).
ManagerOutput concat_attention_manager(const Tensor& uni, const Tensor& cross_prev, const ManagerParams& params,
                                       const RunMode& mode);

/// Plain weighted sum sum_i W_i * uni_i (no LN, no softmax, no W_C), scaled by
/// the jitter eps in training mode.
ManagerOutput mllm_saum_forward(const Tensor& uni, const ManagerParams& params, const RunMode& mode);

}  // namespace manager
