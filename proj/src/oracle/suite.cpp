// SPDX-License-Identifier: Apache-2.0
#include "suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "manager/diagnostics.hpp"
#include "manager/ops.hpp"
#include "manager/rng.hpp"
#include "oracle.hpp"

namespace manager::suite {

ModelConfig tiny_two_tower_config() {
  ModelConfig c;
  c.hidden = 8;
  c.visual_layers = 3;
  c.textual_layers = 3;
  c.cross_layers = 3;
  c.managed_layers = 2;
  c.heads = 2;
  c.patch_size = 4;
  c.image_side = 8;
  c.channels = 1;
  c.vocab_size = 24;
  c.max_text_len = 8;
  c.ffn_mult = 2;
  return c;
}

MllmOptions tiny_mllm_options() {
  MllmOptions o;
  o.model = tiny_two_tower_config();
  o.model.visual_layers = 5;
  o.model.vocab_size = 16;
  o.decoder_layers = 4;
  o.max_seq_len = 64;
  o.grid = true;
  o.max_grids = 4;
  o.managers = true;
  o.manager_count = 2;
  o.manager_interval = 2;
  return o;
}

namespace {

// Conversions into the oracle's plain containers.

oracle::Vec to_vec(const Tensor& t) { return t.to_vector(); }

oracle::Mat to_mat(const Tensor& t) {
  if (t.rank() == 1) return oracle::Mat(1, t.dim(0), t.to_vector());
  return oracle::Mat(t.dim(0), t.dim(1), t.to_vector());
}

oracle::Stack to_stack(const Tensor& t) {
  oracle::Stack s;
  for (std::size_t i = 0; i < t.dim(0); ++i) s.push_back(to_mat(select(t, i)));
  return s;
}

std::vector<oracle::Mat> to_heads(const Tensor& w) { return to_stack(w); }

oracle::Ln to_ln(const LayerNormParams& p) {
  if (!p.gain.defined()) return {};
  return {to_vec(p.gain), to_vec(p.bias)};
}

oracle::Lin to_lin(const Linear& l) { return {to_mat(l.weight), l.bias.defined() ? to_vec(l.bias) : oracle::Vec{}}; }

oracle::Attn to_attn(const AttentionParams& a) {
  return {to_lin(a.query), to_lin(a.key), to_lin(a.value), to_lin(a.output), a.heads};
}

oracle::Block to_block(const TransformerBlock& b) {
  return {to_ln(b.ln_attn), to_attn(b.attn), to_ln(b.ln_ffn), to_lin(b.ffn.up), to_lin(b.ffn.down)};
}

oracle::CoHalf to_cohalf(const CoAttentionHalf& h) {
  return {to_ln(h.ln_msa), to_attn(h.msa), to_ln(h.ln_mca), to_ln(h.ln_mca_context),
          to_attn(h.mca),  to_ln(h.ln_ffn), to_lin(h.ffn.up), to_lin(h.ffn.down)};
}

double tau_of(const Tensor& log_tau) { return std::exp(log_tau.item()); }

double max_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (!(d <= m)) m = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
  }
  return m;
}

double max_diff(const Tensor& a, const oracle::Mat& b) { return max_diff(a.data(), b.v); }
double max_diff(const Tensor& a, const Tensor& b) { return max_diff(a.data(), b.data()); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  const auto x = a.data(), y = b.data();
  return a.shape() == b.shape() && std::equal(x.begin(), x.end(), y.begin());
}

Tensor random_tensor(Rng& rng, Shape shape, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

Tensor random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t ch) {
  std::vector<double> v(h * w * ch);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from_vector({h, w, ch}, std::move(v));
}

std::vector<int> random_tokens(Rng& rng, std::size_t max_len, std::size_t vocab) {
  const auto len = static_cast<std::size_t>(rng.uniform_int(3, static_cast<int>(max_len)));
  std::vector<int> t{TokenIds::kBos};
  while (t.size() + 1 < len) t.push_back(rng.uniform_int(TokenIds::kFirstFree, static_cast<int>(vocab) - 1));
  t.push_back(TokenIds::kEos);
  return t;
}

void perturb(ParameterStore& store, Rng& rng, double sd) {
  for (const auto& e : store.entries()) {
    Tensor t = e.tensor;
    for (double& x : t.mutable_data()) x += rng.normal(0.0, sd);
  }
}

// Row-stochastic random attention [H x Lq x Lk].
Tensor random_attention(Rng& rng, std::size_t heads, std::size_t lq, std::size_t lk) {
  std::vector<double> v;
  for (std::size_t i = 0; i < heads * lq; ++i) {
    oracle::Vec logits(lk);
    for (double& x : logits) x = rng.normal(0.0, 2.0);
    const oracle::Vec p = oracle::softmax(logits);
    v.insert(v.end(), p.begin(), p.end());
  }
  return Tensor::from_vector({heads, lq, lk}, std::move(v));
}

class Tally {
 public:
  Tally(std::string name, double tolerance) {
    r_.name = std::move(name);
    r_.tolerance = tolerance;
  }

  void check(double error, const std::string& what) { check(error, r_.tolerance, what); }

  void check(double error, double tolerance, const std::string& what) {
    ++r_.cases;
    r_.max_error = std::max(r_.max_error, std::isnan(error) ? std::numeric_limits<double>::infinity() : error);
    if (!(error <= tolerance)) fail(what + ": error " + format_double(error));
  }

  void expect(bool ok, const std::string& what) {
    ++r_.cases;
    if (!ok) fail(what);
  }

  void fail(const std::string& what) {
    if (r_.passed) r_.detail = what;
    r_.passed = false;
  }

  template <typename F>
  void guard(const std::string& what, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      fail(what + ": " + e.what());
    }
  }

  PropertyResult result() const { return r_; }

 private:
  PropertyResult r_;
};

std::string tag(std::size_t c, std::size_t n, std::size_t l, std::size_t d) {
  return "config " + std::to_string(c) + " (N=" + std::to_string(n) + " L=" + std::to_string(l) +
         " D=" + std::to_string(d) + ")";
}

}  // namespace

PropertyResult manager_equivalence(std::uint64_t seed, std::size_t configs, double tolerance) {
  Tally tally("manager_equivalence", tolerance);
  const std::size_t ns[] = {1, 2, 3, 6}, ls[] = {1, 2, 5}, ds[] = {4, 8};
  NoGradGuard no_grad;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t n = ns[c % 4], l = ls[(c / 4) % 3], d = ds[(c / 12) % 2];
    const std::size_t sam_layer = 1 + c % 3;
    const std::string where = tag(c, n, l, d);
    tally.guard(where, [&] {
      Rng rng(seed + c, "manager-equivalence");
      ParameterStore store(mix64(seed) + c);
      auto opts = [&](ManagerKind kind, std::size_t layer) {
        ManagerOptions o;
        o.kind = kind;
        o.experts = n;
        o.hidden = d;
        o.layer = layer;
        return o;
      };
      const ManagerParams sam = ManagerParams::create(store, "sam", opts(ManagerKind::Sam, sam_layer));
      ManagerOptions split_o = opts(ManagerKind::Sam, sam_layer);
      split_o.split = true;
      const ManagerParams sam_split = ManagerParams::create(store, "sam_split", split_o);
      ManagerOptions first_o = opts(ManagerKind::Saum, 1);
      first_o.has_cross = false;
      const ManagerParams saum_first = ManagerParams::create(store, "saum1", first_o);
      const ManagerParams saum = ManagerParams::create(store, "saum", opts(ManagerKind::Saum, 2));
      const ManagerParams aaum = ManagerParams::create(store, "aaum", opts(ManagerKind::Aaum, 2));
      ManagerOptions fused_o = opts(ManagerKind::Aaum, 2);
      fused_o.fused_query = true;
      const ManagerParams fused = ManagerParams::create(store, "fused", fused_o);
      const ManagerParams xattn = ManagerParams::create(store, "xattn", opts(ManagerKind::CrossAttn, 2));
      const ManagerParams concat = ManagerParams::create(store, "concat", opts(ManagerKind::ConcatAttn, 2));
      const ManagerParams mllm = ManagerParams::create(store, "mllm", opts(ManagerKind::MllmSaum, 1));
      perturb(store, rng, 0.5);

      const Tensor uni = random_tensor(rng, {n, l, d});
      const Tensor cross = random_tensor(rng, {l, d});
      const Tensor other = random_tensor(rng, {1 + c % 4, d});
      std::vector<Tensor> history;
      oracle::Stack history_o;
      for (std::size_t j = 1; j < sam_layer; ++j) {
        history.push_back(random_tensor(rng, {l, d}));
        history_o.push_back(to_mat(history.back()));
      }
      const oracle::Stack u = to_stack(uni);
      const oracle::Mat x = to_mat(cross);

      tally.check(max_diff(sam_forward(uni, history, sam).output,
                           oracle::sam(u, history_o, to_mat(sam.w), tau_of(sam.log_tau_uni), to_ln(sam.ln_uni),
                                       to_ln(sam.ln_cross))),
                  where + " sam");
      tally.check(max_diff(sam_forward(uni, history, sam_split).output,
                           oracle::sam_split(u, history_o, to_mat(sam_split.w), tau_of(sam_split.log_tau_uni),
                                             sam_layer > 1 ? to_mat(sam_split.w_cross) : oracle::Mat(),
                                             sam_layer > 1 ? tau_of(sam_split.log_tau_cross) : 1.0,
                                             to_ln(sam_split.ln_uni), to_ln(sam_split.ln_cross))),
                  where + " sam split");
      tally.check(max_diff(saum_forward(uni, nullptr, saum_first).output,
                           oracle::saum(u, nullptr, to_mat(saum_first.w), tau_of(saum_first.log_tau_uni), {},
                                        to_ln(saum_first.ln_uni), {})),
                  where + " saum first layer");
      tally.check(max_diff(saum_forward(uni, &cross, saum).output,
                           oracle::saum(u, &x, to_mat(saum.w), tau_of(saum.log_tau_uni), to_vec(saum.w_c),
                                        to_ln(saum.ln_uni), to_ln(saum.ln_cross))),
                  where + " saum");

      oracle::Mat routes;
      const ManagerOutput plain = aaum_forward(uni, cross, cross, aaum, {});
      tally.check(max_diff(plain.output, oracle::aaum(u, x, x, to_ln(aaum.ln_query), to_mat(aaum.w_m),
                                                      tau_of(aaum.log_tau_uni), to_vec(aaum.w_c),
                                                      to_ln(aaum.ln_uni), to_ln(aaum.ln_cross), nullptr, &routes)),
                  where + " aaum");
      tally.check(max_diff(plain.weights, routes), where + " aaum routes");

      const NoiseSpec noise;
      Rng draw(seed ^ c, "router-noise");
      Rng replay = draw;
      oracle::Mat eps(l, n);
      for (double& e : eps.v) e = replay.normal(0.0, 1.0 / static_cast<double>(n));
      tally.check(max_diff(aaum_forward(uni, cross, cross, aaum, RunMode{true, &noise, &draw}).output,
                           oracle::aaum(u, x, x, to_ln(aaum.ln_query), to_mat(aaum.w_m), tau_of(aaum.log_tau_uni),
                                        to_vec(aaum.w_c), to_ln(aaum.ln_uni), to_ln(aaum.ln_cross), &eps)),
                  where + " aaum with router noise");

      const Tensor q = fused_query(cross, other, fused);
      const oracle::Mat q_o =
          oracle::fused_query(x, to_mat(other), to_mat(fused.query_proj), to_mat(fused.key_proj));
      tally.check(max_diff(q, q_o), where + " fused query");
      tally.check(max_diff(aaum_forward(uni, cross, q, fused, {}).output,
                           oracle::aaum(u, x, q_o, to_ln(fused.ln_query), to_mat(fused.w_m),
                                        tau_of(fused.log_tau_uni), to_vec(fused.w_c), to_ln(fused.ln_uni),
                                        to_ln(fused.ln_cross))),
                  where + " aaum fused");

      tally.check(max_diff(cross_attention_manager(uni, cross, xattn, {}).output,
                           oracle::cross_attention_manager(u, x, to_ln(xattn.ln_query), to_mat(xattn.query_proj),
                                                           to_mat(xattn.key_proj), tau_of(xattn.log_tau_uni),
                                                           to_vec(xattn.w_c), to_ln(xattn.ln_uni),
                                                           to_ln(xattn.ln_cross))),
                  where + " cross-attention manager");
      tally.check(max_diff(concat_attention_manager(uni, cross, concat, {}).output,
                           oracle::concat_attention_manager(u, x, to_lin(concat.concat_proj),
                                                            tau_of(concat.log_tau_uni), to_vec(concat.w_c),
                                                            to_ln(concat.ln_uni), to_ln(concat.ln_cross))),
                  where + " concat-attention manager");

      tally.check(max_diff(mllm_saum_forward(uni, mllm, {}).output, oracle::mllm_saum(u, to_mat(mllm.w))),
                  where + " mllm saum");
      Rng jitter(seed ^ (c + 1), "jitter");
      Rng jitter_replay = jitter;
      const double e = jitter_replay.uniform(noise.jitter_low, noise.jitter_high);
      tally.check(max_diff(mllm_saum_forward(uni, mllm, RunMode{true, &noise, &jitter}).output,
                           oracle::mllm_saum(u, to_mat(mllm.w), e)),
                  where + " mllm saum with jitter");
    });
  }
  return tally.result();
}

PropertyResult block_equivalence(std::uint64_t seed, std::size_t cases, double tolerance) {
  Tally tally("block_equivalence", tolerance);
  NoGradGuard no_grad;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::string where = "case " + std::to_string(c);
    tally.guard(where, [&] {
      Rng rng(seed + c, "block-equivalence");
      ModelConfig cfg;
      cfg.hidden = c % 2 == 0 ? 4 : 8;
      cfg.heads = 1 + c % 2;
      cfg.ffn_mult = 2;
      ParameterStore store(seed + c);
      const TransformerBlock block = TransformerBlock::create(store, "block", cfg.hidden, cfg.heads, 2 * cfg.hidden);
      const CrossModalLayer layer = CrossModalLayer::create(store, 1, cfg);
      perturb(store, rng, 0.3);

      const std::size_t len = 1 + c % 5;
      const Tensor x = random_tensor(rng, {len, cfg.hidden});
      for (bool causal : {false, true}) {
        const auto out = block.forward(x, causal, false);
        tally.check(max_diff(out.hidden, oracle::block_forward(to_mat(x), to_block(block), causal)),
                    where + (causal ? " causal block" : " block"));
      }
      const Tensor ctx = random_tensor(rng, {2 + c % 3, cfg.hidden});
      std::vector<oracle::Mat> w_o;
      const auto att = multi_head_attention(x, ctx, block.attn, false, true);
      const oracle::Mat att_o = oracle::attention(to_mat(x), to_mat(ctx), to_attn(block.attn), false, &w_o);
      tally.check(max_diff(att.output, att_o), where + " attention output");
      oracle::Vec flat;
      for (const auto& m : w_o) flat.insert(flat.end(), m.v.begin(), m.v.end());
      tally.check(max_diff(att.weights.data(), flat), where + " attention weights");

      const auto [v, t] = layer.forward(x, ctx);
      const auto [v_o, t_o] = oracle::co_attention(to_mat(x), to_mat(ctx), to_cohalf(layer.visual),
                                                   to_cohalf(layer.textual));
      tally.check(max_diff(v, v_o), where + " co-attention visual");
      tally.check(max_diff(t, t_o), where + " co-attention textual");
    });
  }
  return tally.result();
}

PropertyResult one_hot_bridge(std::uint64_t seed, std::size_t cases, double tolerance) {
  Tally tally("one_hot_bridge", tolerance);
  NoGradGuard no_grad;
  tally.guard("setup", [&] {
    TwoTowerOptions opts;
    opts.model = tiny_two_tower_config();
    opts.mode = TowerMode::OneHotBridge;
    ParameterStore store(seed);
    const TwoTowerModel model(store, opts);
    std::vector<std::size_t> experts;
    for (std::size_t l = 1; l <= opts.model.cross_layers; ++l) {
      experts.push_back(one_hot_expert(l, opts.model.managed_layers));
    }
    const BridgeReference reference(model, experts);
    Rng rng(seed, "one-hot-bridge");
    for (std::size_t i = 0; i < cases; ++i) {
      const Tensor image = random_image(rng, opts.model.image_side, opts.model.image_side, opts.model.channels);
      const auto tokens = random_tokens(rng, opts.model.max_text_len, opts.model.vocab_size);
      const CrossModalState got = model.forward(image, tokens).final_state();
      const CrossModalState want = reference.forward(image, tokens);
      tally.check(std::max(max_diff(got.visual, want.visual), max_diff(got.textual, want.textual)),
                  "input " + std::to_string(i));
    }
  });
  return tally.result();
}

PropertyResult zero_init(std::uint64_t seed, std::size_t cases, bool grid) {
  Tally tally(std::string("zero_init_") + (grid ? "grid" : "no_grid"), 0.0);
  NoGradGuard no_grad;
  tally.guard("setup", [&] {
    MllmOptions managed = tiny_mllm_options();
    managed.grid = grid;
    MllmOptions baseline = managed;
    baseline.managers = false;
    ParameterStore s1(seed), s2(seed);
    const MllmModel a(s1, managed), b(s2, baseline);
    Rng rng(seed, grid ? "zero-init-grid" : "zero-init");
    for (std::size_t i = 0; i < cases; ++i) {
      const auto h = static_cast<std::size_t>(rng.uniform_int(4, 20));
      const auto w = static_cast<std::size_t>(rng.uniform_int(4, 20));
      const Tensor image = random_image(rng, h, w, managed.model.channels);
      const auto text = random_tokens(rng, 6, managed.model.vocab_size);
      const Tensor la = a.forward(a.encode_visual(image), text).logits;
      const Tensor lb = b.forward(b.encode_visual(image), text).logits;
      tally.check(bit_equal(la, lb) ? 0.0 : std::max(max_diff(la, lb), std::numeric_limits<double>::min()),
                  "input " + std::to_string(i) + " (" + std::to_string(h) + "x" + std::to_string(w) + ")");
    }
  });
  return tally.result();
}

namespace {

// Largest deviation from 1 of the last-axis sums.
double row_sum_error(const Tensor& w) {
  const std::size_t k = w.shape().back();
  const auto v = w.data();
  double m = 0.0;
  for (std::size_t r = 0; r * k < v.size(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += v[r * k + j];
    m = std::max(m, std::abs(s - 1.0));
  }
  return m;
}

double group_sum_error(const ManagerOutput& mo) {
  double m = 0.0;
  if (!mo.weights.defined()) return m;
  const std::size_t cols = mo.weights.dim(1);
  const auto v = mo.weights.data();
  for (const auto& [begin, count] : mo.normalized_groups) {
    for (std::size_t t = 0; t < cols; ++t) {
      double s = 0.0;
      for (std::size_t i = begin; i < begin + count; ++i) s += v[i * cols + t];
      m = std::max(m, std::abs(s - 1.0));
    }
  }
  return m;
}

}  // namespace

PropertyResult normalization(std::uint64_t seed, std::size_t forwards, double tolerance) {
  Tally tally("normalization", tolerance);
  NoGradGuard no_grad;
  tally.guard("setup", [&] {
    struct TowerCase {
      std::unique_ptr<ParameterStore> store;
      std::unique_ptr<TwoTowerModel> model;
    };
    const std::pair<TowerMode, bool> modes[] = {
        {TowerMode::Sam, false},   {TowerMode::Sam, true},       {TowerMode::Saum, false},
        {TowerMode::Aaum, false},  {TowerMode::AaumFused, false}, {TowerMode::CrossAttn, false},
        {TowerMode::ConcatAttn, false}};
    Rng init(seed, "normalization-init");
    std::vector<TowerCase> towers;
    for (const auto& [mode, split] : modes) {
      TwoTowerOptions o;
      o.model = tiny_two_tower_config();
      o.mode = mode;
      o.sam_split = split;
      TowerCase tc{std::make_unique<ParameterStore>(seed + towers.size()), nullptr};
      tc.model = std::make_unique<TwoTowerModel>(*tc.store, o);
      perturb(*tc.store, init, 0.3);
      towers.push_back(std::move(tc));
    }
    const MllmOptions mo = tiny_mllm_options();
    ParameterStore mllm_store(seed);
    const MllmModel mllm(mllm_store, mo);
    perturb(mllm_store, init, 0.3);

    const NoiseSpec noise;
    Rng rng(seed, "normalization");
    const std::size_t kinds = towers.size() + 2;
    const ModelConfig& tc = towers.front().model->options().model;
    for (std::size_t i = 0; i < forwards; ++i) {
      const std::size_t kind = i % kinds;
      const RunMode run{(i / kinds) % 2 == 1, &noise, &rng};
      const std::string where = "forward " + std::to_string(i);
      double worst = 0.0;
      if (kind < towers.size()) {
        const Tensor image = random_image(rng, tc.image_side, tc.image_side, tc.channels);
        const auto out = towers[kind].model->forward(image, random_tokens(rng, tc.max_text_len, tc.vocab_size),
                                                     run, true);
        for (const auto& rec : out.managers) worst = std::max(worst, group_sum_error(rec.output));
        for (const auto& cap : out.attention) {
          for (const Tensor* w : {&cap.visual_self, &cap.visual_cross, &cap.textual_self, &cap.textual_cross}) {
            worst = std::max(worst, row_sum_error(*w));
          }
        }
        for (const auto& w : out.visual_bank.attention) worst = std::max(worst, row_sum_error(w));
        for (const auto& w : out.textual_bank.attention) worst = std::max(worst, row_sum_error(w));
      } else if (kind == towers.size()) {
        const Tensor image = random_image(rng, static_cast<std::size_t>(rng.uniform_int(4, 20)),
                                          static_cast<std::size_t>(rng.uniform_int(4, 20)), mo.model.channels);
        const auto out = mllm.forward(mllm.encode_visual(image), random_tokens(rng, 6, mo.model.vocab_size), run, true);
        for (const auto& w : out.attention) worst = std::max(worst, row_sum_error(w));
      } else {
        const std::size_t rows = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const std::size_t cols = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const Tensor x = random_tensor(rng, {rows, cols}, 5.0);
        const double tau = std::exp(rng.uniform(-2.0, 2.0));
        worst = std::max(worst, row_sum_error(softmax_with_temperature(x, tau, 1)));
        worst = std::max(worst, row_sum_error(transpose(softmax_with_temperature(x, tau, 0))));
        const Tensor y = random_tensor(rng, {rows, rows + cols - 1}, 5.0);
        worst = std::max(worst, row_sum_error(causal_softmax(y)));
      }
      tally.check(worst, where);
    }
  });
  return tally.result();
}

PropertyResult diagnostics(std::uint64_t seed, std::size_t cases) {
  Tally tally("diagnostics", 1e-10);
  for (std::size_t lk : {1, 2, 3, 7, 16, 49}) {
    const Tensor uniform = Tensor::full({2, 3, lk}, 1.0 / static_cast<double>(lk));
    tally.check(std::abs(attention_entropy(uniform) - std::log(static_cast<double>(lk))), 1e-12,
                "uniform entropy, Lk=" + std::to_string(lk));
  }
  {
    Rng rng(seed, "diagnostics-identical");
    const Tensor one = random_attention(rng, 1, 4, 5);
    const Tensor parts[] = {one, one, one};
    tally.check(std::abs(inter_head_kl(concat_rows(parts))), 1e-12, "KL of identical heads");
  }
  tally.check(std::abs(mean_attention_distance(Tensor::full({1, 4, 4}, 0.25), 2, 2, 1.0).mean -
                       (2.0 + std::numbers::sqrt2) / 4.0),
              1e-10, "2x2 uniform attention distance");

  Rng rng(seed, "diagnostics");
  for (std::size_t c = 0; c < cases; ++c) {
    const std::string where = "random case " + std::to_string(c);
    tally.guard(where, [&] {
      const auto heads = static_cast<std::size_t>(rng.uniform_int(2, 4));
      const auto gr = static_cast<std::size_t>(rng.uniform_int(1, 4));
      const auto gc = static_cast<std::size_t>(rng.uniform_int(1, 4));
      const std::size_t p = gr * gc;
      const double ppp = static_cast<double>(rng.uniform_int(1, 8));
      const Tensor w = random_attention(rng, heads, p, p);
      const auto wo = to_heads(w);
      tally.check(std::abs(attention_entropy(w) - oracle::entropy(wo)), where + " entropy");
      tally.check(std::abs(inter_head_kl(w) - oracle::inter_head_kl(wo)), where + " KL");
      const auto dist = mean_attention_distance(w, gr, gc, ppp);
      const auto dist_o = oracle::attention_distance(wo, gr, gc, ppp);
      tally.check(max_diff(dist.per_head, dist_o), where + " distance");

      // Class token first: slice it off and renormalize the patch block.
      const Tensor wc = random_attention(rng, heads, p + 1, p + 1);
      std::vector<oracle::Mat> block;
      for (const auto& m : to_heads(wc)) {
        oracle::Mat b(p, p);
        for (std::size_t i = 0; i < p; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < p; ++j) s += m(i + 1, j + 1);
          for (std::size_t j = 0; j < p; ++j) b(i, j) = m(i + 1, j + 1) / s;
        }
        block.push_back(b);
      }
      const auto dist_c = mean_attention_distance(wc, gr, gc, ppp, true);
      const auto dist_co = oracle::attention_distance(block, gr, gc, ppp);
      tally.check(max_diff(dist_c.per_head, dist_co), where + " distance with class token");
      double mean = 0.0;
      for (double d : dist_co) mean += d;
      tally.check(std::abs(dist_c.mean - mean / static_cast<double>(heads)), where + " mean distance");
      tally.check(std::abs(attention_entropy(wc, IndexSpan{1, p}, IndexSpan{1, p}) - oracle::entropy(block)),
                  where + " block entropy");

      const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4});
      tally.check(std::abs(cosine_similarity(a, b) - oracle::cosine(a.to_vector(), b.to_vector())),
                  where + " cosine");
    });
  }
  return tally.result();
}

PropertyResult multigrid(std::uint64_t seed, std::size_t combos) {
  Tally tally("multigrid", 0.0);
  NoGradGuard no_grad;
  Rng rng(seed, "multigrid");
  const std::size_t tiles[] = {4, 6, 8};
  const std::size_t grids[] = {1, 2, 4, 6};
  for (std::size_t c = 0; c < combos; ++c) {
    const std::size_t t = tiles[c % 3];
    const std::size_t mg = grids[(c / 3) % 4];
    const auto h = static_cast<std::size_t>(rng.uniform_int(3, 40));
    const auto w = static_cast<std::size_t>(rng.uniform_int(3, 40));
    const std::string where = "H=" + std::to_string(h) + " W=" + std::to_string(w) + " tile=" + std::to_string(t) +
                              " max_grids=" + std::to_string(mg);
    tally.guard(where, [&] {
      const Tensor image = random_image(rng, h, w, 1);
      const GridLayout layout = multi_grid_layout(image, t, mg);
      tally.expect(layout.rows * layout.cols <= mg, where + " grid within budget");
      tally.expect(bit_equal(reassemble_tiles(layout), layout.padded), where + " reassembly");

      std::vector<oracle::Mat> tiles_o;
      for (const auto& tile : layout.tiles) tiles_o.push_back(oracle::Mat(t, t, tile.to_vector()));
      const oracle::Mat stitched = oracle::stitch(tiles_o, layout.rows, layout.cols);
      tally.check(max_diff(layout.padded, stitched), where + " stitched tiles");

      const GridShape g = choose_grid(h, w, t, mg);
      const oracle::Mat scaled_o = oracle::resize(oracle::Mat(h, w, image.to_vector()), g.scaled_height, g.scaled_width);
      const std::size_t top = (layout.rows * t - g.scaled_height) / 2, left = (layout.cols * t - g.scaled_width) / 2;
      oracle::Mat crop(g.scaled_height, g.scaled_width);
      const auto pad = layout.padded.data();
      for (std::size_t y = 0; y < g.scaled_height; ++y)
        for (std::size_t x = 0; x < g.scaled_width; ++x) crop(y, x) = pad[(y + top) * layout.cols * t + x + left];
      tally.check(max_diff(crop.v, scaled_o.v), 1e-12, where + " placed image");
      if (g.scaled_height == h && g.scaled_width == w) {
        tally.expect(crop.v == image.to_vector(), where + " lossless crop");
      }

      MllmOptions o = tiny_mllm_options();
      o.model.hidden = 4;
      o.model.heads = 1;
      o.model.visual_layers = 2;
      o.model.managed_layers = 1;
      o.model.patch_size = 2;
      o.model.image_side = t;
      o.decoder_layers = 1;
      o.managers = false;
      o.max_grids = mg;
      o.max_seq_len = 256;
      ParameterStore store(seed);
      const MllmModel model(store, o);
      const std::size_t ppt = (t / 2) * (t / 2);
      const std::size_t want = oracle::count_tokens(layout.rows, layout.cols, ppt);
      tally.expect(visual_token_count(layout.rows, layout.cols, ppt) == want, where + " token formula");
      tally.expect(model.encode_visual(image).length() == want, where + " encoded token count");

      std::vector<std::pair<std::size_t, std::size_t>> exact;
      for (std::size_t r = 1; r <= mg; ++r)
        for (std::size_t cc = 1; r * cc <= mg; ++cc) exact.emplace_back(r, cc);
      const auto [er, ec] = exact[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(exact.size()) - 1))];
      const GridShape eg = choose_grid(er * t, ec * t, t, mg);
      tally.expect(eg.rows == er && eg.cols == ec && eg.scaled_height == er * t && eg.scaled_width == ec * t,
                   where + " exact division " + std::to_string(er) + "x" + std::to_string(ec));
    });
  }
  return tally.result();
}

PropertyResult causality(std::uint64_t seed, std::size_t cases) {
  Tally tally("causality", 0.0);
  NoGradGuard no_grad;
  tally.guard("setup", [&] {
    const MllmOptions o = tiny_mllm_options();
    ParameterStore store(seed);
    const MllmModel model(store, o);
    Rng init(seed, "causality-init");
    perturb(store, init, 0.3);
    Rng rng(seed, "causality");
    for (std::size_t i = 0; i < cases; ++i) {
      const std::string where = "case " + std::to_string(i);
      const Tensor image = random_image(rng, static_cast<std::size_t>(rng.uniform_int(4, 20)),
                                        static_cast<std::size_t>(rng.uniform_int(4, 20)), o.model.channels);
      const VisualTokens vis = model.encode_visual(image);
      auto text = random_tokens(rng, 6, o.model.vocab_size);
      const auto out = model.forward(vis, text, {}, true);
      double mass = 0.0;
      for (const auto& w : out.attention) {
        const std::size_t h = w.dim(0), t = w.dim(1);
        const auto v = w.data();
        for (std::size_t k = 0; k < h; ++k)
          for (std::size_t q = 0; q < t; ++q)
            for (std::size_t j = q + 1; j < t; ++j) mass = std::max(mass, std::abs(v[(k * t + q) * t + j]));
      }
      tally.check(mass, where + " mass above the diagonal");

      text.back() = text.back() == TokenIds::kEos ? TokenIds::kFirstFree : TokenIds::kEos;
      const Tensor changed = model.forward(vis, text).logits;
      const std::size_t keep = out.logits.dim(0) - 1;
      tally.expect(bit_equal(slice_rows(out.logits, 0, keep), slice_rows(changed, 0, keep)),
                   where + " prefix logits after changing the last token");
    }
  });
  return tally.result();
}

PropertyResult determinism(std::uint64_t seed, std::size_t cases) {
  Tally tally("determinism", 0.0);
  NoGradGuard no_grad;
  tally.guard("setup", [&] {
    TwoTowerOptions to;
    to.model = tiny_two_tower_config();
    to.mode = TowerMode::AaumFused;
    ParameterStore ts(seed);
    const TwoTowerModel tower(ts, to);
    const MllmOptions mo = tiny_mllm_options();
    ParameterStore ms(seed);
    const MllmModel mllm(ms, mo);
    Rng init(seed, "determinism-init");
    perturb(ts, init, 0.3);
    perturb(ms, init, 0.3);

    const NoiseSpec noise;
    Rng rng(seed, "determinism");
    for (std::size_t i = 0; i < cases; ++i) {
      const std::string where = "case " + std::to_string(i);
      Rng n1(seed + i, "noise"), n2(seed + i, "noise"), n3(seed + i + 1, "noise");
      if (i % 2 == 0) {
        const ModelConfig& c = to.model;
        const Tensor image = random_image(rng, c.image_side, c.image_side, c.channels);
        const auto tokens = random_tokens(rng, c.max_text_len, c.vocab_size);
        const auto a = tower.forward(image, tokens, RunMode{false, &noise, &n1}).final_state();
        const auto b = tower.forward(image, tokens, RunMode{false, &noise, &n3}).final_state();
        const auto e = tower.forward(image, tokens).final_state();
        tally.expect(bit_equal(a.visual, b.visual) && bit_equal(a.textual, b.textual) && bit_equal(a.visual, e.visual),
                     where + " two-tower eval forwards");
        const auto t1 = tower.forward(image, tokens, RunMode{true, &noise, &n1}).final_state();
        const auto t2 = tower.forward(image, tokens, RunMode{true, &noise, &n2}).final_state();
        tally.expect(bit_equal(t1.visual, t2.visual) && bit_equal(t1.textual, t2.textual),
                     where + " two-tower seeded training noise");
      } else {
        const Tensor image = random_image(rng, static_cast<std::size_t>(rng.uniform_int(4, 20)),
                                          static_cast<std::size_t>(rng.uniform_int(4, 20)), mo.model.channels);
        const auto text = random_tokens(rng, 6, mo.model.vocab_size);
        const VisualTokens vis = mllm.encode_visual(image);
        const Tensor a = mllm.forward(vis, text, RunMode{false, &noise, &n1}).logits;
        const Tensor b = mllm.forward(mllm.encode_visual(image), text, RunMode{false, &noise, &n3}).logits;
        tally.expect(bit_equal(a, b), where + " MLLM eval forwards");
        const Tensor t1 = mllm.forward(vis, text, RunMode{true, &noise, &n1}).logits;
        const Tensor t2 = mllm.forward(vis, text, RunMode{true, &noise, &n2}).logits;
        tally.expect(bit_equal(t1, t2), where + " MLLM seeded training jitter");
      }
    }
  });
  return tally.result();
}

std::vector<PropertyResult> run_all(std::uint64_t seed) {
  return {manager_equivalence(seed, 60, 1e-10), block_equivalence(seed, 30, 1e-10),
          one_hot_bridge(seed, 20, 1e-6),       zero_init(seed, 50, true),
          zero_init(seed, 50, false),           normalization(seed, 1000, 1e-9),
          diagnostics(seed, 100),               multigrid(seed, 30),
          causality(seed, 500),                 determinism(seed, 500)};
}

std::string format_result(const PropertyResult& r) {
  std::ostringstream s;
  s << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.cases << " checks, max error "
    << format_double(r.max_error) << " (tolerance " << format_double(r.tolerance) << ")";
  if (!r.passed) s << "; first failure: " << r.detail;
  return s.str();
}

}  // namespace manager::suite
