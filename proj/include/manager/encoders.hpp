// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "manager/params.hpp"
#include "manager/tensor.hpp"

namespace manager {

/// Reserved token ids shared by every synthetic vocabulary.
struct TokenIds {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;  // start sentinel
  static constexpr int kEos = 2;  // end sentinel
  static constexpr int kMask = 3;
  static constexpr int kRowEnd = 4;  // multi-grid row terminator
  static constexpr int kFirstFree = 5;
};

/// Sizes of a toy two-tower stack. Defaults are the desk-scale analogue of a
/// 12/12/6-layer model managing its top 6 unimodal layers.
struct ModelConfig {
  std::size_t hidden = 32;
  std::size_t visual_layers = 6;
  std::size_t textual_layers = 6;
  std::size_t cross_layers = 3;
  std::size_t managed_layers = 3;  // N
  std::size_t heads = 4;
  std::size_t patch_size = 4;
  std::size_t image_side = 16;
  std::size_t channels = 1;
  std::size_t vocab_size = 32;
  std::size_t max_text_len = 16;
  std::size_t ffn_mult = 4;

  /// Throws ConfigError when the sizes are inconsistent.
  void validate() const;
  std::size_t patches_per_image() const;
  std::size_t head_dim() const { return hidden / heads; }
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when bias-free

  static Linear create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                       bool with_bias = true, Init weight_init = Init::normal());
  Tensor forward(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(ParameterStore& store, const std::string& prefix, std::size_t dim);
  Tensor forward(const Tensor& x) const;
};

struct AttentionParams {
  Linear query, key, value, output;
  std::size_t heads = 1;

  static AttentionParams create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                std::size_t heads);
};

struct AttentionResult {
  Tensor output;   // [Lq x D]
  Tensor weights;  // [H x Lq x Lk], detached; undefined unless requested
};

/// Scaled dot-product attention of `queries` [Lq x D] over `context` [Lk x D].
AttentionResult multi_head_attention(const Tensor& queries, const Tensor& context, const AttentionParams& params,
                                     bool causal, bool return_weights);
AttentionResult multi_head_self_attention(const Tensor& x, const AttentionParams& params, bool causal,
                                          bool return_weights);

struct FeedForward {
  Linear up, down;

  static FeedForward create(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t inner);
  Tensor forward(const Tensor& x) const;
};

/// Pre-norm block: x + MSA(LN(x)), then + FFN(LN(.)).
struct TransformerBlock {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_ffn;
  FeedForward ffn;

  struct Output {
    Tensor hidden;
    Tensor attention;  // [H x L x L] when captured
  };

  static TransformerBlock create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                 std::size_t heads, std::size_t ffn_inner);
  Output forward(const Tensor& x, bool causal, bool capture) const;
};

/// Cuts a [side x side x channels] image into raster-ordered patches, each
/// flattened in (row, column, channel) order.
Tensor patchify(const Tensor& image, std::size_t patch_size);

enum class Modality { Visual = 0, Textual = 1 };

/// Output of every layer of one unimodal encoder.
struct LayerBank {
  Modality modality = Modality::Visual;
  Tensor input;                  // layer-0 representation
  std::vector<Tensor> layers;    // layers[i - 1] is the output of layer i
  std::vector<Tensor> attention; // per-layer self-attention weights when captured

  std::size_t depth() const { return layers.size(); }
  std::size_t seq_len() const;
  /// 1-based access matching layer numbering.
  const Tensor& layer(std::size_t index) const;
  /// Top `n` layers stacked bottom-up into [n x L x D].
  Tensor top(std::size_t n) const;
};

class VisualEncoder {
 public:
  VisualEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& config, std::size_t depth);

  /// `image` is [side x side x channels]; a class token is prepended.
  LayerBank encode(const Tensor& image, bool capture_attention = false) const;
  std::size_t depth() const { return blocks_.size(); }
  std::size_t seq_len() const { return num_patches_ + 1; }
  std::size_t num_patches() const { return num_patches_; }

 private:
  ModelConfig config_;
  std::size_t num_patches_;
  Linear patch_proj_;
  Tensor class_token_;
  Tensor position_;
  std::vector<TransformerBlock> blocks_;
};

class TextualEncoder {
 public:
  TextualEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& config, std::size_t depth);

  /// Tokens must start with kBos and end with kEos.
  LayerBank encode(std::span<const int> tokens, bool capture_attention = false) const;
  std::size_t depth() const { return blocks_.size(); }

 private:
  ModelConfig config_;
  Tensor token_embedding_;
  Tensor position_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace manager
