// SPDX-License-Identifier: Apache-2.0
#include "manager/two_tower.hpp"

#include <algorithm>

#include "manager/error.hpp"
#include "manager/ops.hpp"

namespace manager {

std::string_view to_string(TowerMode mode) {
  switch (mode) {
    case TowerMode::Sam: return "sam";
    case TowerMode::Saum: return "saum";
    case TowerMode::Aaum: return "aaum";
    case TowerMode::AaumFused: return "aaum-fused";
    case TowerMode::CrossAttn: return "xattn";
    case TowerMode::ConcatAttn: return "concat";
    case TowerMode::OneHotBridge: return "one-hot-bridge";
    case TowerMode::LastLayer: return "last-layer";
  }
  return "unknown";
}

TowerMode parse_tower_mode(std::string_view name) {
  for (auto m : {TowerMode::Sam, TowerMode::Saum, TowerMode::Aaum, TowerMode::AaumFused, TowerMode::CrossAttn,
                 TowerMode::ConcatAttn, TowerMode::OneHotBridge, TowerMode::LastLayer}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown manager kind '" + std::string(name) + "'");
}

std::size_t one_hot_expert(std::size_t layer, std::size_t experts) { return std::min(layer, experts); }

CoAttentionHalf CoAttentionHalf::create(ParameterStore& store, const std::string& prefix, const ModelConfig& c) {
  CoAttentionHalf h;
  h.ln_msa = LayerNormParams::create(store, prefix + ".ln_msa", c.hidden);
  h.msa = AttentionParams::create(store, prefix + ".msa", c.hidden, c.heads);
  h.ln_mca = LayerNormParams::create(store, prefix + ".ln_mca", c.hidden);
  h.ln_mca_context = LayerNormParams::create(store, prefix + ".ln_mca_context", c.hidden);
  h.mca = AttentionParams::create(store, prefix + ".mca", c.hidden, c.heads);
  h.ln_ffn = LayerNormParams::create(store, prefix + ".ln_ffn", c.hidden);
  h.ffn = FeedForward::create(store, prefix + ".ffn", c.hidden, c.hidden * c.ffn_mult);
  return h;
}

CrossModalLayer CrossModalLayer::create(ParameterStore& store, std::size_t index, const ModelConfig& config) {
  const std::string prefix = "crossmodal.layer" + std::to_string(index);
  return {CoAttentionHalf::create(store, prefix + ".v", config), CoAttentionHalf::create(store, prefix + ".t", config)};
}

std::pair<Tensor, Tensor> CrossModalLayer::forward(const Tensor& v, const Tensor& t, CoAttentionCapture* capture) const {
  const bool want = capture != nullptr;
  auto sv = multi_head_self_attention(visual.ln_msa.forward(v), visual.msa, false, want);
  auto st = multi_head_self_attention(textual.ln_msa.forward(t), textual.msa, false, want);
  Tensor v1 = add(v, sv.output);
  Tensor t1 = add(t, st.output);
  auto cv = multi_head_attention(visual.ln_mca.forward(v1), visual.ln_mca_context.forward(t1), visual.mca, false, want);
  auto ct = multi_head_attention(textual.ln_mca.forward(t1), textual.ln_mca_context.forward(v1), textual.mca, false, want);
  Tensor v2 = add(v1, cv.output);
  Tensor t2 = add(t1, ct.output);
  Tensor v3 = add(v2, visual.ffn.forward(visual.ln_ffn.forward(v2)));
  Tensor t3 = add(t2, textual.ffn.forward(textual.ln_ffn.forward(t2)));
  if (want) *capture = {sv.weights, cv.weights, st.weights, ct.weights};
  return {v3, t3};
}

namespace {

ManagerKind default_kind(TowerMode mode, std::size_t layer) {
  switch (mode) {
    case TowerMode::Sam: return ManagerKind::Sam;
    case TowerMode::Saum:
    case TowerMode::OneHotBridge: return ManagerKind::Saum;
    default: break;
  }
  if (layer == 1) return ManagerKind::Saum;
  switch (mode) {
    case TowerMode::CrossAttn: return ManagerKind::CrossAttn;
    case TowerMode::ConcatAttn: return ManagerKind::ConcatAttn;
    default: return ManagerKind::Aaum;
  }
}

void set_one_hot(Tensor& w, std::size_t expert) {
  auto data = w.mutable_data();
  const std::size_t d = w.dim(1);
  for (std::size_t i = 0; i < w.dim(0); ++i)
    for (std::size_t k = 0; k < d; ++k) data[i * d + k] = (i + 1 == expert) ? kOneHotLogit : -kOneHotLogit;
}

}  // namespace

TwoTowerModel::TwoTowerModel(ParameterStore& store, const TwoTowerOptions& options)
    : options_((options.model.validate(), options)),
      visual_(store, "visual", options.model, options.model.visual_layers),
      textual_(store, "textual", options.model, options.model.textual_layers) {
  const ModelConfig& c = options_.model;
  if (c.cross_layers == 0) throw ConfigError("the cross-modal encoder needs at least one layer");
  const std::size_t d = c.hidden, n = c.managed_layers;
  proj_v_ = store.add("crossmodal.input_v", {d, d}, Init::normal());
  proj_t_ = store.add("crossmodal.input_t", {d, d}, Init::normal());

  if (options_.mode != TowerMode::LastLayer) {
    emb_v_ = TypeLayerEmbeddings::create(store, "manager.v", n, d);
    emb_t_ = TypeLayerEmbeddings::create(store, "manager.t", n, d);
    for (std::size_t l = 1; l <= c.cross_layers; ++l) {
      ManagerKind kind = default_kind(options_.mode, l);
      if (l >= 2 && l - 1 < options_.layer_kinds.size() && options_.layer_kinds[l - 1]) {
        kind = *options_.layer_kinds[l - 1];
      }
      if (kind == ManagerKind::MllmSaum) throw ConfigError("the MLLM manager cannot drive a co-attention layer");
      if (l == 1 && kind != ManagerKind::Sam && kind != ManagerKind::Saum) {
        throw ConfigError("the first cross-modal layer needs a static manager");
      }
      ManagerOptions mo;
      mo.kind = kind;
      mo.experts = n;
      mo.hidden = d;
      mo.layer = l;
      mo.has_cross = l > 1;
      mo.split = options_.sam_split;
      mo.fused_query = kind == ManagerKind::Aaum && options_.mode == TowerMode::AaumFused;
      LayerManagers lm;
      lm.kind = kind;
      const std::string prefix = "manager.layer" + std::to_string(l);
      lm.visual = ManagerParams::create(store, prefix + ".v", mo);
      lm.textual = ManagerParams::create(store, prefix + ".t", mo);
      if (options_.mode == TowerMode::OneHotBridge) {
        set_one_hot(lm.visual.w, one_hot_expert(l, n));
        set_one_hot(lm.textual.w, one_hot_expert(l, n));
      }
      managers_.push_back(std::move(lm));
    }
  }
  for (std::size_t l = 1; l <= c.cross_layers; ++l) layers_.push_back(CrossModalLayer::create(store, l, c));

  pool_v_ = Linear::create(store, "itm.pool_v", d, d);
  pool_t_ = Linear::create(store, "itm.pool_t", d, d);
  itm_ = Linear::create(store, "itm.classifier", 2 * d, 2);
  mlm_dense_ = Linear::create(store, "mlm.dense", d, d);
  mlm_ln_ = LayerNormParams::create(store, "mlm.ln", d);
  mlm_decoder_ = Linear::create(store, "mlm.decoder", d, c.vocab_size);
}

const CrossModalLayer& TwoTowerModel::cross_layer(std::size_t layer) const {
  if (layer == 0 || layer > layers_.size()) throw IndexError("no cross-modal layer " + std::to_string(layer));
  return layers_[layer - 1];
}

const ManagerParams* TwoTowerModel::manager(std::size_t layer, Modality modality) const {
  if (managers_.empty()) return nullptr;
  if (layer == 0 || layer > managers_.size()) throw IndexError("no manager at layer " + std::to_string(layer));
  const auto& lm = managers_[layer - 1];
  return modality == Modality::Visual ? &lm.visual : &lm.textual;
}

ManagerKind TwoTowerModel::layer_kind(std::size_t layer) const {
  if (managers_.empty()) throw ContractError("last-layer mode has no managers");
  if (layer == 0 || layer > managers_.size()) throw IndexError("no manager at layer " + std::to_string(layer));
  return managers_[layer - 1].kind;
}

const TypeLayerEmbeddings& TwoTowerModel::embeddings(Modality modality) const {
  if (managers_.empty()) throw ContractError("last-layer mode has no manager embeddings");
  return modality == Modality::Visual ? emb_v_ : emb_t_;
}

const Tensor& TwoTowerModel::input_projection(Modality modality) const {
  return modality == Modality::Visual ? proj_v_ : proj_t_;
}

TwoTowerOutput TwoTowerModel::forward(const Tensor& image, std::span<const int> tokens, const RunMode& mode,
                                      bool capture_attention) const {
  TwoTowerOutput out;
  out.visual_bank = visual_.encode(image, capture_attention);
  out.textual_bank = textual_.encode(tokens, capture_attention);
  out.states.push_back({matmul(out.visual_bank.layers.back(), proj_v_),
                        matmul(out.textual_bank.layers.back(), proj_t_), 0});

  const std::size_t n = options_.model.managed_layers;
  Tensor uni_v, uni_t;
  if (!managers_.empty()) {
    uni_v = add_type_layer_embeddings(out.visual_bank.top(n), Modality::Visual, emb_v_);
    uni_t = add_type_layer_embeddings(out.textual_bank.top(n), Modality::Textual, emb_t_);
  }

  for (std::size_t l = 1; l <= layers_.size(); ++l) {
    const CrossModalState& prev = out.states.back();
    Tensor in_v = prev.visual, in_t = prev.textual;
    if (!managers_.empty()) {
      const LayerManagers& lm = managers_[l - 1];
      auto run = [&](const Tensor& uni, const Tensor& own, const Tensor& other, const ManagerParams& p,
                     Modality m) {
        ManagerOutput mo;
        switch (lm.kind) {
          case ManagerKind::Sam: {
            std::vector<Tensor> history;
            for (std::size_t j = 1; j < l; ++j) history.push_back(m == Modality::Visual ? out.states[j].visual
                                                                                        : out.states[j].textual);
            mo = sam_forward(uni, history, p);
            break;
          }
          case ManagerKind::Saum: mo = saum_forward(uni, l == 1 ? nullptr : &own, p); break;
          case ManagerKind::Aaum:
            mo = aaum_forward(uni, own, p.fused_query ? fused_query(own, other, p) : own, p, mode);
            break;
          case ManagerKind::CrossAttn: mo = cross_attention_manager(uni, own, p, mode); break;
          case ManagerKind::ConcatAttn: mo = concat_attention_manager(uni, own, p, mode); break;
          case ManagerKind::MllmSaum: throw ContractError("unsupported manager in a co-attention stack");
        }
        Tensor result = mo.output;
        out.managers.push_back({l, m, lm.kind, std::move(mo)});
        return result;
      };
      in_v = run(uni_v, prev.visual, prev.textual, lm.visual, Modality::Visual);
      in_t = run(uni_t, prev.textual, prev.visual, lm.textual, Modality::Textual);
    }
    CoAttentionCapture cap;
    auto [v, t] = layers_[l - 1].forward(in_v, in_t, capture_attention ? &cap : nullptr);
    if (capture_attention) out.attention.push_back(cap);
    out.states.push_back({v, t, l});
  }
  return out;
}

Tensor TwoTowerModel::itm_logits(const CrossModalState& state) const {
  Tensor pv = tanh(pool_v_.forward(slice_rows(state.visual, 0, 1)));
  Tensor pt = tanh(pool_t_.forward(slice_rows(state.textual, 0, 1)));
  return itm_.forward(concat_last(pv, pt));
}

Tensor TwoTowerModel::mlm_logits(const CrossModalState& state, std::span<const std::size_t> positions) const {
  if (positions.empty()) return {};
  std::vector<Tensor> rows;
  rows.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= state.textual.dim(0)) {
      throw IndexError("masked position " + std::to_string(p) + " outside text of length " +
                       std::to_string(state.textual.dim(0)));
    }
    rows.push_back(slice_rows(state.textual, p, 1));
  }
  Tensor h = mlm_ln_.forward(gelu(mlm_dense_.forward(concat_rows(rows))));
  return mlm_decoder_.forward(h);
}

BridgeReference::BridgeReference(const TwoTowerModel& model, std::vector<std::size_t> experts)
    : model_(model), experts_(std::move(experts)) {
  const auto& c = model.options().model;
  if (experts_.size() != c.cross_layers) throw ConfigError("bridge reference needs one expert per cross-modal layer");
  for (std::size_t e : experts_) {
    if (e == 0 || e > c.managed_layers) throw ConfigError("bridge expert index outside the managed layers");
  }
  if (model.options().mode == TowerMode::LastLayer) throw ConfigError("bridge reference needs manager parameters");
}

CrossModalState BridgeReference::forward(const Tensor& image, std::span<const int> tokens) const {
  const auto& c = model_.options().model;
  const std::size_t n = c.managed_layers;
  LayerBank bv = model_.visual_encoder().encode(image);
  LayerBank bt = model_.textual_encoder().encode(tokens);

  auto feed = [&](const LayerBank& bank, Modality m, std::size_t layer, const Tensor* prev) {
    const std::size_t k = experts_[layer - 1];
    const TypeLayerEmbeddings& emb = model_.embeddings(m);
    const ManagerParams& p = *model_.manager(layer, m);
    const Tensor& u = bank.layer(bank.depth() - n + k);
    Tensor x = add(add(u, select(emb.type, static_cast<std::size_t>(m))), select(emb.layer, k - 1));
    Tensor y = layer_norm(x, p.ln_uni.gain, p.ln_uni.bias);
    if (prev != nullptr) y = add(y, mul(p.w_c, layer_norm(*prev, p.ln_cross.gain, p.ln_cross.bias)));
    return y;
  };

  CrossModalState state;
  for (std::size_t l = 1; l <= c.cross_layers; ++l) {
    Tensor in_v = feed(bv, Modality::Visual, l, l == 1 ? nullptr : &state.visual);
    Tensor in_t = feed(bt, Modality::Textual, l, l == 1 ? nullptr : &state.textual);
    auto [v, t] = model_.cross_layer(l).forward(in_v, in_t);
    state = {v, t, l};
  }
  return state;
}

}  // namespace manager
