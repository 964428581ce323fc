// SPDX-License-Identifier: Apache-2.0
#include "manager/managers.hpp"

#include <cmath>

#include "manager/error.hpp"
#include "manager/ops.hpp"

namespace manager {

std::string_view to_string(ManagerKind kind) {
  switch (kind) {
    case ManagerKind::Sam: return "sam";
    case ManagerKind::Saum: return "saum";
    case ManagerKind::Aaum: return "aaum";
    case ManagerKind::CrossAttn: return "xattn";
    case ManagerKind::ConcatAttn: return "concat";
    case ManagerKind::MllmSaum: return "mllm-saum";
  }
  return "unknown";
}

bool RunMode::gaussian_on() const { return training && noise != nullptr && noise->aaum_gaussian; }
bool RunMode::jitter_on() const { return training && noise != nullptr && noise->mllm_jitter; }

Rng& RunMode::random() const {
  if (rng == nullptr) throw ContractError("training-mode noise requested without a random stream");
  return *rng;
}

ManagerParams ManagerParams::create(ParameterStore& store, const std::string& prefix, const ManagerOptions& o) {
  if (o.experts == 0 || o.hidden == 0) throw ConfigError("manager needs at least one expert and a positive width");
  if (o.layer == 0) throw ConfigError("manager layer index is 1-based");
  ManagerParams p;
  p.kind = o.kind;
  p.experts = o.experts;
  p.hidden = o.hidden;
  p.layer = o.layer;
  p.split = o.split;
  p.fused_query = o.fused_query;
  const std::size_t n = o.experts, d = o.hidden;
  auto tau = [&](const std::string& name) { return store.add(prefix + "." + name, {1}, Init::zeros()); };

  if (o.kind == ManagerKind::MllmSaum) {
    p.w = store.add(prefix + ".w", {n, d}, Init::zeros());
    return p;
  }

  p.ln_uni = LayerNormParams::create(store, prefix + ".ln_uni", d);
  p.log_tau_uni = tau("log_tau_uni");

  if (o.kind == ManagerKind::Sam) {
    const std::size_t prev = o.layer - 1;
    if (o.split) {
      p.w = store.add(prefix + ".w", {n, d}, Init::constant(1.0 / static_cast<double>(n)));
      if (prev > 0) {
        p.w_cross = store.add(prefix + ".w_cross", {prev, d}, Init::constant(1.0 / static_cast<double>(prev)));
        p.log_tau_cross = tau("log_tau_cross");
      }
    } else {
      p.w = store.add(prefix + ".w", {n + prev, d}, Init::constant(1.0 / static_cast<double>(n + prev)));
    }
    if (prev > 0) p.ln_cross = LayerNormParams::create(store, prefix + ".ln_cross", d);
    return p;
  }

  const bool cross = o.kind != ManagerKind::Saum || o.has_cross;
  if (cross) {
    p.w_c = store.add(prefix + ".w_c", {1, d}, Init::ones());
    p.ln_cross = LayerNormParams::create(store, prefix + ".ln_cross", d);
  }
  switch (o.kind) {
    case ManagerKind::Saum:
      p.w = store.add(prefix + ".w", {n, d}, Init::constant(1.0 / static_cast<double>(n)));
      break;
    case ManagerKind::Aaum:
      p.ln_query = LayerNormParams::create(store, prefix + ".ln_query", d);
      p.w_m = store.add(prefix + ".w_m", {d, n}, Init::normal());
      if (o.fused_query) {
        p.query_proj = store.add(prefix + ".fused.query", {d, d}, Init::normal());
        p.key_proj = store.add(prefix + ".fused.key", {d, d}, Init::normal());
      }
      break;
    case ManagerKind::CrossAttn:
      p.ln_query = LayerNormParams::create(store, prefix + ".ln_query", d);
      p.query_proj = store.add(prefix + ".query", {d, d}, Init::normal());
      p.key_proj = store.add(prefix + ".key", {d, d}, Init::normal());
      break;
    case ManagerKind::ConcatAttn:
      p.concat_proj = Linear::create(store, prefix + ".concat", 2 * d, d);
      break;
    default:
      break;
  }
  return p;
}

Tensor ManagerParams::tau_uni() const { return exp(log_tau_uni); }
Tensor ManagerParams::tau_cross() const { return exp(log_tau_cross); }

TypeLayerEmbeddings TypeLayerEmbeddings::create(ParameterStore& store, const std::string& prefix,
                                                std::size_t experts, std::size_t hidden) {
  return {store.add(prefix + ".type_emb", {2, hidden}, Init::normal()),
          store.add(prefix + ".layer_emb", {experts, hidden}, Init::normal())};
}

Tensor add_type_layer_embeddings(const Tensor& bank_slice, Modality modality, const TypeLayerEmbeddings& emb) {
  if (bank_slice.rank() != 3 || emb.layer.dim(0) != bank_slice.dim(0)) {
    throw DimensionError("embedding table " + shape_to_string(emb.layer.shape()) + " does not match layer stack " +
                         shape_to_string(bank_slice.shape()));
  }
  const std::size_t n = bank_slice.dim(0), d = bank_slice.dim(2);
  Tensor type = select(emb.type, static_cast<std::size_t>(modality));
  Tensor layer = reshape(emb.layer, {n, 1, d});
  return add(add(bank_slice, type), layer);
}

namespace {

void check_stack(const Tensor& uni, std::size_t experts, std::size_t hidden) {
  if (uni.rank() != 3 || uni.dim(0) != experts || uni.dim(2) != hidden) {
    throw DimensionError("manager expects a [" + std::to_string(experts) + " x L x " + std::to_string(hidden) +
                         "] stack, got " + shape_to_string(uni.shape()));
  }
}

void check_state(const Tensor& state, const Tensor& uni, const char* what) {
  if (state.rank() != 2 || state.dim(0) != uni.dim(1) || state.dim(1) != uni.dim(2)) {
    throw DimensionError(std::string(what) + " " + shape_to_string(state.shape()) + " does not match stack " +
                         shape_to_string(uni.shape()));
  }
}

// Static [E x D] weights summarized per expert and repeated over `tokens` columns.
Tensor static_export(const Tensor& weights, std::size_t tokens) {
  const std::size_t e = weights.dim(0), d = weights.dim(1);
  const auto w = weights.data();
  std::vector<double> out(e * tokens);
  for (std::size_t i = 0; i < e; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += w[i * d + k];
    for (std::size_t t = 0; t < tokens; ++t) out[i * tokens + t] = acc / static_cast<double>(d);
  }
  return Tensor::from_vector({e, tokens}, std::move(out));
}

// [N x L x D] weights reduced over D.
Tensor dense_export(const Tensor& weights) {
  const std::size_t n = weights.dim(0), l = weights.dim(1), d = weights.dim(2);
  const auto w = weights.data();
  std::vector<double> out(n * l, 0.0);
  for (std::size_t i = 0; i < n * l; ++i) {
    for (std::size_t k = 0; k < d; ++k) out[i] += w[i * d + k];
    out[i] /= static_cast<double>(d);
  }
  return Tensor::from_vector({n, l}, std::move(out));
}

Tensor weighted_sum(const Tensor& weights, const Tensor& stack_) { return sum_axis(mul(weights, stack_), 0); }

Tensor router_noise(const RunMode& mode, std::size_t rows, std::size_t experts) {
  Rng& rng = mode.random();
  const double sigma = 1.0 / static_cast<double>(experts);
  std::vector<double> eps(rows * experts);
  for (double& e : eps) e = rng.normal(0.0, sigma);
  return Tensor::from_vector({rows, experts}, std::move(eps));
}

// Router logits [L x N] -> weights [N x L x 1] normalized over the experts.
Tensor route(Tensor logits, const ManagerParams& params, const RunMode& mode) {
  if (mode.gaussian_on()) logits = add(logits, router_noise(mode, logits.dim(0), logits.dim(1)));
  Tensor probs = softmax_with_temperature(logits, params.tau_uni(), 1);
  return reshape(transpose(probs), {logits.dim(1), logits.dim(0), 1});
}

ManagerOutput finish_routed(const Tensor& ln_uni, const Tensor& routes, const Tensor& cross_prev,
                            const ManagerParams& params) {
  ManagerOutput out;
  out.unimodal = weighted_sum(routes, ln_uni);
  out.cross = mul(params.w_c, params.ln_cross.forward(cross_prev));
  out.output = add(out.unimodal, out.cross);
  out.weights = reshape(routes.detach(), {routes.dim(0), routes.dim(1)});
  out.normalized_groups = {{0, params.experts}};
  return out;
}

}  // namespace

ManagerOutput sam_forward(const Tensor& uni, std::span<const Tensor> cross_history, const ManagerParams& params) {
  if (params.kind != ManagerKind::Sam) throw ContractError("sam_forward needs SAM parameters");
  check_stack(uni, params.experts, params.hidden);
  const std::size_t n = params.experts, d = params.hidden, prev = params.layer - 1;
  if (cross_history.size() != prev) {
    throw ContractError("SAM at layer " + std::to_string(params.layer) + " needs " + std::to_string(prev) +
                        " previous cross-modal outputs, got " + std::to_string(cross_history.size()));
  }
  for (const auto& c : cross_history) check_state(c, uni, "cross-modal history entry");
  const std::size_t l = uni.dim(1);

  ManagerOutput out;
  Tensor ln_uni = params.ln_uni.forward(uni);
  Tensor w_uni, w_cross;
  if (params.split) {
    w_uni = softmax_with_temperature(params.w, params.tau_uni(), 0);
    if (prev > 0) w_cross = softmax_with_temperature(params.w_cross, params.tau_cross(), 0);
  } else {
    Tensor w = softmax_with_temperature(params.w, params.tau_uni(), 0);
    w_uni = slice_rows(w, 0, n);
    if (prev > 0) w_cross = slice_rows(w, n, prev);
  }
  out.unimodal = weighted_sum(reshape(w_uni, {n, 1, d}), ln_uni);
  out.output = out.unimodal;
  Tensor exported = w_uni.detach();
  if (prev > 0) {
    Tensor history = params.ln_cross.forward(stack(cross_history));
    out.cross = weighted_sum(reshape(w_cross, {prev, 1, d}), history);
    out.output = add(out.unimodal, out.cross);
    const Tensor parts[] = {exported, w_cross.detach()};
    exported = concat_rows(parts);
  }
  out.weights = static_export(exported, l);
  if (params.split) {
    out.normalized_groups = {{0, n}};
    if (prev > 0) out.normalized_groups.emplace_back(n, prev);
  } else {
    out.normalized_groups = {{0, n + prev}};
  }
  return out;
}

ManagerOutput saum_forward(const Tensor& uni, const Tensor* cross_prev, const ManagerParams& params) {
  if (params.kind != ManagerKind::Saum) throw ContractError("saum_forward needs SAUM parameters");
  check_stack(uni, params.experts, params.hidden);
  if (cross_prev != nullptr && !params.w_c.defined()) {
    throw ContractError("first-layer SAUM takes no cross-modal input");
  }
  if (cross_prev == nullptr && params.w_c.defined()) {
    throw ContractError("SAUM after the first layer needs the previous cross-modal output");
  }
  const std::size_t n = params.experts, d = params.hidden;
  ManagerOutput out;
  Tensor w = softmax_with_temperature(params.w, params.tau_uni(), 0);
  out.unimodal = weighted_sum(reshape(w, {n, 1, d}), params.ln_uni.forward(uni));
  out.output = out.unimodal;
  if (cross_prev != nullptr) {
    check_state(*cross_prev, uni, "previous cross-modal output");
    out.cross = mul(params.w_c, params.ln_cross.forward(*cross_prev));
    out.output = add(out.unimodal, out.cross);
  }
  out.weights = static_export(w.detach(), uni.dim(1));
  out.normalized_groups = {{0, n}};
  return out;
}

Tensor fused_query(const Tensor& own_prev, const Tensor& other_prev, const ManagerParams& params) {
  if (params.layer < 2) throw ContractError("the fused query needs a previous cross-modal layer");
  if (!params.fused_query || !params.query_proj.defined()) {
    throw ContractError("manager has no fused-query projections");
  }
  if (own_prev.rank() != 2 || other_prev.rank() != 2 || own_prev.dim(1) != params.hidden ||
      other_prev.dim(1) != params.hidden) {
    throw DimensionError("fused query inputs " + shape_to_string(own_prev.shape()) + " and " +
                         shape_to_string(other_prev.shape()) + " must both be [L x " +
                         std::to_string(params.hidden) + "]");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.hidden));
  Tensor q = matmul(own_prev, params.query_proj);
  Tensor k = matmul(other_prev, params.key_proj);
  Tensor probs = softmax_last(scale(matmul(q, transpose(k)), inv_sqrt));
  return matmul(probs, other_prev);
}

ManagerOutput aaum_forward(const Tensor& uni, const Tensor& cross_prev, const Tensor& query,
                           const ManagerParams& params, const RunMode& mode) {
  if (params.kind != ManagerKind::Aaum) throw ContractError("aaum_forward needs AAUM parameters");
  check_stack(uni, params.experts, params.hidden);
  check_state(cross_prev, uni, "previous cross-modal output");
  check_state(query, uni, "router query");
  Tensor logits = matmul(params.ln_query.forward(query), params.w_m);
  return finish_routed(params.ln_uni.forward(uni), route(logits, params, mode), cross_prev, params);
}

ManagerOutput cross_attention_manager(const Tensor& uni, const Tensor& cross_prev, const ManagerParams& params,
                                      const RunMode& mode) {
  if (params.kind != ManagerKind::CrossAttn) throw ContractError("cross_attention_manager needs its own parameters");
  check_stack(uni, params.experts, params.hidden);
  check_state(cross_prev, uni, "previous cross-modal output");
  const std::size_t n = params.experts;
  Tensor ln_uni = params.ln_uni.forward(uni);
  std::vector<Tensor> firsts;
  firsts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) firsts.push_back(slice_rows(select(ln_uni, i), 0, 1));
  Tensor keys = matmul(concat_rows(firsts), params.key_proj);
  Tensor queries = matmul(params.ln_query.forward(cross_prev), params.query_proj);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.hidden));
  Tensor logits = scale(matmul(queries, transpose(keys)), inv_sqrt);
  return finish_routed(ln_uni, route(logits, params, mode), cross_prev, params);
}

ManagerOutput concat_attention_manager(const Tensor& uni, const Tensor& cross_prev, const ManagerParams& params,
                                       const RunMode& mode) {
  if (params.kind != ManagerKind::ConcatAttn) throw ContractError("concat_attention_manager needs its own parameters");
  check_stack(uni, params.experts, params.hidden);
  check_state(cross_prev, uni, "previous cross-modal output");
  const std::size_t n = params.experts, l = uni.dim(1), d = params.hidden;
  std::vector<Tensor> copies(n, cross_prev);
  Tensor joined = concat_last(stack(copies), uni);
  Tensor logits = reshape(params.concat_proj.forward(reshape(joined, {n * l, 2 * d})), {n, l, d});
  if (mode.gaussian_on()) {
    Rng& rng = mode.random();
    std::vector<double> eps(n * l * d);
    for (double& e : eps) e = rng.normal(0.0, 1.0 / static_cast<double>(n));
    logits = add(logits, Tensor::from_vector({n, l, d}, std::move(eps)));
  }
  Tensor w = softmax_with_temperature(logits, params.tau_uni(), 0);

  ManagerOutput out;
  out.unimodal = weighted_sum(w, params.ln_uni.forward(uni));
  out.cross = mul(params.w_c, params.ln_cross.forward(cross_prev));
  out.output = add(out.unimodal, out.cross);
  out.weights = dense_export(w.detach());
  out.normalized_groups = {{0, n}};
  return out;
}

ManagerOutput mllm_saum_forward(const Tensor& uni, const ManagerParams& params, const RunMode& mode) {
  if (params.kind != ManagerKind::MllmSaum) throw ContractError("mllm_saum_forward needs MLLM manager parameters");
  check_stack(uni, params.experts, params.hidden);
  const std::size_t k = params.experts, d = params.hidden;
  ManagerOutput out;
  out.unimodal = weighted_sum(reshape(params.w, {k, 1, d}), uni);
  out.output = out.unimodal;
  if (mode.jitter_on()) {
    out.output = scale(out.unimodal, mode.random().uniform(mode.noise->jitter_low, mode.noise->jitter_high));
  }
  out.weights = static_export(params.w.detach(), uni.dim(1));
  return out;
}

}  // namespace manager
