// SPDX-License-Identifier: Apache-2.0
#include "manager/encoders.hpp"

#include <cmath>

#include "manager/error.hpp"
#include "manager/ops.hpp"

namespace manager {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (hidden == 0 || heads == 0) fail("hidden size and head count must be positive");
  if (hidden % heads != 0) fail("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) + " heads");
  if (patch_size == 0 || image_side % patch_size != 0) fail("image side must be a multiple of the patch size");
  if (channels == 0) fail("channels must be positive");
  if (visual_layers == 0 || textual_layers == 0) fail("unimodal encoders need at least one layer");
  if (managed_layers == 0) fail("at least one unimodal layer must be managed");
  if (managed_layers > visual_layers || managed_layers > textual_layers) {
    fail("managed layers N=" + std::to_string(managed_layers) + " exceeds an encoder depth");
  }
  if (vocab_size <= static_cast<std::size_t>(TokenIds::kFirstFree)) fail("vocabulary too small for reserved tokens");
  if (max_text_len < 2) fail("max text length must fit both sentinels");
  if (ffn_mult == 0) fail("ffn multiplier must be positive");
}

std::size_t ModelConfig::patches_per_image() const {
  const std::size_t per_side = image_side / patch_size;
  return per_side * per_side;
}

Linear Linear::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      bool with_bias, Init weight_init) {
  Linear l;
  l.weight = store.add(prefix + ".weight", {in, out}, weight_init);
  if (with_bias) l.bias = store.add(prefix + ".bias", {out}, Init::zeros());
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

LayerNormParams LayerNormParams::create(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  return {store.add(prefix + ".gain", {dim}, Init::ones()), store.add(prefix + ".bias", {dim}, Init::zeros())};
}

Tensor LayerNormParams::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                        std::size_t heads) {
  AttentionParams p;
  p.query = Linear::create(store, prefix + ".query", dim, dim);
  p.key = Linear::create(store, prefix + ".key", dim, dim);
  p.value = Linear::create(store, prefix + ".value", dim, dim);
  p.output = Linear::create(store, prefix + ".output", dim, dim);
  p.heads = heads;
  return p;
}

AttentionResult multi_head_attention(const Tensor& queries, const Tensor& context, const AttentionParams& params,
                                     bool causal, bool return_weights) {
  const std::size_t d = queries.dim(1);
  if (context.rank() != 2 || context.dim(1) != d) {
    throw DimensionError("attention context " + shape_to_string(context.shape()) + " does not match queries " +
                         shape_to_string(queries.shape()));
  }
  if (params.heads == 0 || d % params.heads != 0) throw DimensionError("hidden size not divisible by head count");
  const std::size_t dh = d / params.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = params.query.forward(queries);
  Tensor k = params.key.forward(context);
  Tensor v = params.value.forward(context);

  AttentionResult result;
  std::vector<double> weights;
  Tensor merged;
  for (std::size_t h = 0; h < params.heads; ++h) {
    Tensor qh = slice_last(q, h * dh, dh);
    Tensor kh = slice_last(k, h * dh, dh);
    Tensor vh = slice_last(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor probs = causal ? causal_softmax(scores) : softmax_last(scores);
    if (return_weights) {
      auto pv = probs.data();
      weights.insert(weights.end(), pv.begin(), pv.end());
    }
    Tensor oh = matmul(probs, vh);
    merged = h == 0 ? oh : concat_last(merged, oh);
  }
  result.output = params.output.forward(merged);
  if (return_weights) {
    result.weights = Tensor::from_vector({params.heads, queries.dim(0), context.dim(0)}, std::move(weights));
  }
  return result;
}

AttentionResult multi_head_self_attention(const Tensor& x, const AttentionParams& params, bool causal,
                                          bool return_weights) {
  return multi_head_attention(x, x, params, causal, return_weights);
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                std::size_t inner) {
  return {Linear::create(store, prefix + ".up", dim, inner), Linear::create(store, prefix + ".down", inner, dim)};
}

Tensor FeedForward::forward(const Tensor& x) const { return down.forward(gelu(up.forward(x))); }

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                          std::size_t heads, std::size_t ffn_inner) {
  TransformerBlock b;
  b.ln_attn = LayerNormParams::create(store, prefix + ".ln_attn", dim);
  b.attn = AttentionParams::create(store, prefix + ".msa", dim, heads);
  b.ln_ffn = LayerNormParams::create(store, prefix + ".ln_ffn", dim);
  b.ffn = FeedForward::create(store, prefix + ".ffn", dim, ffn_inner);
  return b;
}

TransformerBlock::Output TransformerBlock::forward(const Tensor& x, bool causal, bool capture) const {
  auto att = multi_head_self_attention(ln_attn.forward(x), attn, causal, capture);
  Tensor h = add(x, att.output);
  h = add(h, ffn.forward(ln_ffn.forward(h)));
  return {h, att.weights};
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3) throw DimensionError("image must be [H x W x C], got " + shape_to_string(image.shape()));
  const std::size_t hgt = image.dim(0), wid = image.dim(1), ch = image.dim(2);
  if (patch_size == 0 || hgt % patch_size != 0 || wid % patch_size != 0) {
    throw DimensionError("image " + shape_to_string(image.shape()) + " is not divisible into " +
                         std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t pr = hgt / patch_size, pc = wid / patch_size;
  const std::size_t flat = patch_size * patch_size * ch;
  const auto px = image.data();
  std::vector<double> out(pr * pc * flat);
  std::size_t o = 0;
  for (std::size_t r = 0; r < pr; ++r)
    for (std::size_t c = 0; c < pc; ++c)
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t k = 0; k < ch; ++k)
            out[o++] = px[((r * patch_size + y) * wid + (c * patch_size + x)) * ch + k];
  return Tensor::from_vector({pr * pc, flat}, std::move(out));
}

std::size_t LayerBank::seq_len() const {
  if (layers.empty()) throw ContractError("empty layer bank");
  return layers.front().dim(0);
}

const Tensor& LayerBank::layer(std::size_t index) const {
  if (index == 0 || index > layers.size()) {
    throw IndexError("layer " + std::to_string(index) + " outside 1.." + std::to_string(layers.size()));
  }
  return layers[index - 1];
}

Tensor LayerBank::top(std::size_t n) const {
  if (n == 0 || n > layers.size()) {
    throw ConfigError("cannot take top " + std::to_string(n) + " of " + std::to_string(layers.size()) + " layers");
  }
  return stack(std::span<const Tensor>(layers).subspan(layers.size() - n));
}

namespace {

LayerBank run_blocks(Modality modality, Tensor x, const std::vector<TransformerBlock>& blocks, bool capture) {
  LayerBank bank;
  bank.modality = modality;
  bank.input = x;
  for (const auto& block : blocks) {
    auto out = block.forward(x, /*causal=*/false, capture);
    x = out.hidden;
    bank.layers.push_back(x);
    if (capture) bank.attention.push_back(out.attention);
  }
  return bank;
}

}  // namespace

VisualEncoder::VisualEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& config,
                             std::size_t depth)
    : config_(config), num_patches_(config.patches_per_image()) {
  const std::size_t d = config.hidden;
  patch_proj_ = Linear::create(store, prefix + ".patch_embed", config.patch_size * config.patch_size * config.channels, d);
  class_token_ = store.add(prefix + ".class_token", {1, d}, Init::normal());
  position_ = store.add(prefix + ".position", {num_patches_ + 1, d}, Init::normal());
  for (std::size_t i = 1; i <= depth; ++i) {
    blocks_.push_back(TransformerBlock::create(store, prefix + ".layer" + std::to_string(i), d, config.heads,
                                               d * config.ffn_mult));
  }
}

LayerBank VisualEncoder::encode(const Tensor& image, bool capture_attention) const {
  const Shape expected{config_.image_side, config_.image_side, config_.channels};
  if (image.shape() != expected) {
    throw DimensionError("visual encoder expects image " + shape_to_string(expected) + ", got " +
                         shape_to_string(image.shape()));
  }
  Tensor patches = patch_proj_.forward(patchify(image, config_.patch_size));
  const Tensor parts[] = {class_token_, patches};
  Tensor x = add(concat_rows(parts), position_);
  return run_blocks(Modality::Visual, x, blocks_, capture_attention);
}

TextualEncoder::TextualEncoder(ParameterStore& store, const std::string& prefix, const ModelConfig& config,
                               std::size_t depth)
    : config_(config) {
  const std::size_t d = config.hidden;
  token_embedding_ = store.add(prefix + ".token_embed", {config.vocab_size, d}, Init::normal());
  position_ = store.add(prefix + ".position", {config.max_text_len, d}, Init::normal());
  for (std::size_t i = 1; i <= depth; ++i) {
    blocks_.push_back(TransformerBlock::create(store, prefix + ".layer" + std::to_string(i), d, config.heads,
                                               d * config.ffn_mult));
  }
}

LayerBank TextualEncoder::encode(std::span<const int> tokens, bool capture_attention) const {
  if (tokens.size() < 2 || tokens.size() > config_.max_text_len) {
    throw ContractError("text length " + std::to_string(tokens.size()) + " outside [2, " +
                        std::to_string(config_.max_text_len) + "]");
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw IndexError("token " + std::to_string(t) + " outside vocabulary of " + std::to_string(config_.vocab_size));
    }
  }
  if (tokens.front() != TokenIds::kBos || tokens.back() != TokenIds::kEos) {
    throw ContractError("text must start with the start sentinel and end with the end sentinel");
  }
  Tensor x = add(embedding(token_embedding_, tokens), slice_rows(position_, 0, tokens.size()));
  return run_blocks(Modality::Textual, x, blocks_, capture_attention);
}

}  // namespace manager
