// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "manager/error.hpp"
#include "manager/gradcheck.hpp"
#include "manager/ops.hpp"
#include "manager/two_tower.hpp"
#include "suite.hpp"
#include "test_util.hpp"

using namespace manager;
using testutil::max_diff;
using testutil::random_tensor;
using testutil::to_mat;

namespace {

oracle::CoHalf to_cohalf(const CoAttentionHalf& h) {
  return {testutil::to_ln(h.ln_msa), testutil::to_attn(h.msa),     testutil::to_ln(h.ln_mca),
          testutil::to_ln(h.ln_mca_context), testutil::to_attn(h.mca), testutil::to_ln(h.ln_ffn),
          testutil::to_lin(h.ffn.up), testutil::to_lin(h.ffn.down)};
}

struct Tower {
  ParameterStore store;
  TwoTowerModel model;

  Tower(TwoTowerOptions o, std::uint64_t seed, double sd = 0.2) : store(seed), model(store, o) {
    if (sd > 0.0) testutil::perturb_by_name(store, seed, sd);
  }
};

TwoTowerOptions options(TowerMode mode) {
  TwoTowerOptions o;
  o.model = suite::tiny_two_tower_config();
  o.mode = mode;
  return o;
}

Tensor image(Rng& rng, const ModelConfig& c) { return random_tensor(rng, {c.image_side, c.image_side, c.channels}); }

void zero(const ParameterStore& store, const std::string& name) {
  Tensor t = store.at(name);
  for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST(CrossModalLayer, SingleTokens) {
  Tower t(options(TowerMode::AaumFused), 1);
  Rng rng(1);
  CoAttentionCapture cap;
  auto [v, x] = t.model.cross_layer(1).forward(random_tensor(rng, {1, 8}), random_tensor(rng, {1, 8}), &cap);
  for (const Tensor* w : {&cap.visual_cross, &cap.textual_cross, &cap.visual_self, &cap.textual_self}) {
    EXPECT_EQ(w->to_vector(), (std::vector<double>{1.0, 1.0}));
  }
  for (double d : v.data()) EXPECT_TRUE(std::isfinite(d));
  for (double d : x.data()) EXPECT_TRUE(std::isfinite(d));
}

TEST(CrossModalLayer, ZeroValueProjectionDecouples) {
  Tower t(options(TowerMode::AaumFused), 2);
  for (const char* side : {"v", "t"}) {
    const std::string p = std::string("crossmodal.layer1.") + side + ".mca.value";
    zero(t.store, p + ".weight");
    zero(t.store, p + ".bias");
  }
  const CrossModalLayer& layer = t.model.cross_layer(1);
  Rng rng(2);
  const Tensor v = random_tensor(rng, {5, 8});
  const Tensor t1 = random_tensor(rng, {4, 8}), t2 = random_tensor(rng, {6, 8});
  const Tensor a = layer.forward(v, t1).first, b = layer.forward(v, t2).first;
  EXPECT_TRUE(testutil::bit_equal(a, b));
  const CoAttentionHalf& h = layer.visual;
  const Tensor v1 = add(v, multi_head_self_attention(h.ln_msa.forward(v), h.msa, false, false).output);
  const Tensor v2 = add(v1, h.mca.output.bias);
  EXPECT_LE(max_diff(a, add(v2, h.ffn.forward(h.ln_ffn.forward(v2)))), 1e-12);
}

TEST(CrossModalLayer, MatchesUnrolledOracle) {
  Tower t(options(TowerMode::AaumFused), 3, 0.3);
  Rng rng(3);
  for (int c = 0; c < 5; ++c) {
    const Tensor v = random_tensor(rng, {5, 8}), x = random_tensor(rng, {3 + static_cast<std::size_t>(c), 8});
    const CrossModalLayer& layer = t.model.cross_layer(2);
    auto [ov, ot] = layer.forward(v, x);
    auto [rv, rt] = oracle::co_attention(to_mat(v), to_mat(x), to_cohalf(layer.visual), to_cohalf(layer.textual));
    EXPECT_LE(max_diff(ov, rv), 1e-10);
    EXPECT_LE(max_diff(ot, rt), 1e-10);
  }
}

TEST(ManagerTower, SingleExpertRunsEndToEnd) {
  TwoTowerOptions o = options(TowerMode::AaumFused);
  o.model.managed_layers = 1;
  Tower t(o, 4);
  Rng rng(4);
  const auto toks = testutil::sentinel_tokens(rng, 6, o.model.vocab_size);
  const auto out = t.model.forward(image(rng, o.model), toks, {}, true);
  EXPECT_EQ(out.states.size(), o.model.cross_layers + 1);
  for (const auto& m : out.managers) {
    for (double w : m.output.weights.data()) EXPECT_NEAR(w, 1.0, 1e-15);
  }
  EXPECT_EQ(t.model.itm_logits(out.final_state()).shape(), (Shape{1, 2}));
}

TEST(ManagerTower, DefaultShapeContract) {
  TwoTowerOptions o;
  EXPECT_EQ(o.model.managed_layers, 3u);
  EXPECT_EQ(o.model.cross_layers, 3u);
  EXPECT_EQ(o.model.visual_layers, 6u);
  EXPECT_EQ(o.model.hidden, 32u);
  ParameterStore store(5);
  TwoTowerModel model(store, o);
  EXPECT_EQ(model.layer_kind(1), ManagerKind::Saum);
  for (std::size_t l = 2; l <= 3; ++l) {
    EXPECT_EQ(model.layer_kind(l), ManagerKind::Aaum);
    EXPECT_TRUE(model.manager(l, Modality::Visual)->fused_query);
    EXPECT_TRUE(model.manager(l, Modality::Textual)->fused_query);
  }
  Rng rng(5);
  const auto toks = testutil::sentinel_tokens(rng, 10, o.model.vocab_size);
  const auto out = model.forward(image(rng, o.model), toks);
  EXPECT_EQ(out.managers.size(), 6u);
  for (const auto& m : out.managers) EXPECT_EQ(m.output.weights.dim(0), 3u);
  EXPECT_EQ(out.final_state().visual.shape(), (Shape{17, 32}));
  EXPECT_EQ(out.final_state().textual.shape(), (Shape{10, 32}));
  EXPECT_NE(store.find("manager.layer2.v.fused.query"), nullptr);
  EXPECT_NE(store.find("crossmodal.layer3.t.mca.value.weight"), nullptr);
}

TEST(ManagerTower, RejectsTooManyManagedLayers) {
  TwoTowerOptions o = options(TowerMode::AaumFused);
  o.model.managed_layers = o.model.visual_layers + 1;
  ParameterStore store(6);
  EXPECT_THROW(TwoTowerModel(store, o), ConfigError);
}

TEST(ManagerTower, OneHotEqualsBridgeReference) {
  Tower t(options(TowerMode::OneHotBridge), 7);
  const auto& c = t.model.options().model;
  std::vector<std::size_t> experts;
  for (std::size_t l = 1; l <= c.cross_layers; ++l) experts.push_back(one_hot_expert(l, c.managed_layers));
  EXPECT_EQ(experts, (std::vector<std::size_t>{1, 2, 2}));
  BridgeReference ref(t.model, experts);
  Rng rng(7);
  for (int k = 0; k < 5; ++k) {
    const Tensor img = image(rng, c);
    const auto toks = testutil::sentinel_tokens(rng, 3 + k, c.vocab_size);
    const auto out = t.model.forward(img, toks);
    const auto st = ref.forward(img, toks);
    EXPECT_LE(max_diff(out.final_state().visual, st.visual), 1e-6);
    EXPECT_LE(max_diff(out.final_state().textual, st.textual), 1e-6);
  }
}

TEST(ManagerTower, EveryModeNormalizesWeights) {
  for (TowerMode mode : {TowerMode::Sam, TowerMode::Saum, TowerMode::Aaum, TowerMode::AaumFused,
                         TowerMode::CrossAttn, TowerMode::ConcatAttn, TowerMode::OneHotBridge}) {
    Tower t(options(mode), 8);
    Rng rng(8);
    const auto& c = t.model.options().model;
    NoiseSpec noise;
    Rng stream(8, "noise");
    for (bool training : {false, true}) {
      const auto out = t.model.forward(image(rng, c), testutil::sentinel_tokens(rng, 6, c.vocab_size),
                                       {training, &noise, &stream});
      for (const auto& m : out.managers) {
        for (auto [begin, count] : m.output.normalized_groups) {
          for (std::size_t col = 0; col < m.output.weights.dim(1); ++col) {
            double s = 0.0;
            for (std::size_t r = begin; r < begin + count; ++r) s += m.output.weights.at({r, col});
            EXPECT_NEAR(s, 1.0, 1e-9) << to_string(mode) << " layer " << m.layer;
          }
        }
      }
    }
  }
}

TEST(ManagerTower, ModeNamesRoundTrip) {
  for (const char* name : {"sam", "saum", "aaum", "aaum-fused", "xattn", "concat", "one-hot-bridge", "last-layer"}) {
    EXPECT_EQ(to_string(parse_tower_mode(name)), name);
  }
  EXPECT_THROW(parse_tower_mode("bridge"), ConfigError);
}

TEST(ManagerTower, TextChangesVisualStream) {
  Tower t(options(TowerMode::AaumFused), 9);
  const auto& c = t.model.options().model;
  Rng rng(9);
  const Tensor img = image(rng, c);
  auto toks = testutil::sentinel_tokens(rng, 6, c.vocab_size);
  const Tensor a = t.model.forward(img, toks).final_state().visual;
  toks[2] = toks[2] == 10 ? 11 : 10;
  const Tensor b = t.model.forward(img, toks).final_state().visual;
  EXPECT_GT(max_diff(a, b), 1e-9);
}

TEST(ManagerTower, LayerKindSwapKeepsPrefix) {
  TwoTowerOptions base = options(TowerMode::AaumFused);
  TwoTowerOptions swapped = base;
  swapped.layer_kinds.assign(base.model.cross_layers, std::nullopt);
  swapped.layer_kinds[2] = ManagerKind::Saum;
  Tower a(base, 10), b(swapped, 10);
  EXPECT_EQ(b.model.layer_kind(3), ManagerKind::Saum);
  const auto& c = base.model;
  Rng rng(10);
  const Tensor img = image(rng, c);
  const auto toks = testutil::sentinel_tokens(rng, 5, c.vocab_size);
  const auto oa = a.model.forward(img, toks), ob = b.model.forward(img, toks);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_TRUE(testutil::bit_equal(oa.states[l].visual, ob.states[l].visual)) << l;
    EXPECT_TRUE(testutil::bit_equal(oa.states[l].textual, ob.states[l].textual)) << l;
  }
  EXPECT_FALSE(testutil::bit_equal(oa.states[3].visual, ob.states[3].visual));
}

TEST(ManagerTower, LastLayerModeFeedsProjection) {
  Tower t(options(TowerMode::LastLayer), 11);
  EXPECT_EQ(t.model.manager(1, Modality::Visual), nullptr);
  const auto& c = t.model.options().model;
  Rng rng(11);
  const Tensor img = image(rng, c);
  const auto toks = testutil::sentinel_tokens(rng, 5, c.vocab_size);
  const auto out = t.model.forward(img, toks);
  EXPECT_TRUE(out.managers.empty());
  auto [v, x] = t.model.cross_layer(1).forward(out.states[0].visual, out.states[0].textual);
  EXPECT_TRUE(testutil::bit_equal(v, out.states[1].visual));
  EXPECT_TRUE(testutil::bit_equal(x, out.states[1].textual));
}

TEST(ItmHead, ZeroWeights) {
  Tower t(options(TowerMode::AaumFused), 12);
  zero(t.store, "itm.classifier.weight");
  zero(t.store, "itm.classifier.bias");
  const auto& c = t.model.options().model;
  Rng rng(12);
  const auto out = t.model.forward(image(rng, c), testutil::sentinel_tokens(rng, 5, c.vocab_size));
  const Tensor logits = t.model.itm_logits(out.final_state());
  EXPECT_EQ(logits.to_vector(), (std::vector<double>{0.0, 0.0}));
  const auto p = softmax_last(logits).to_vector();
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
}

TEST(ItmHead, DeterministicAndMatchesOracle) {
  Tower t(options(TowerMode::AaumFused), 13, 0.3);
  Rng rng(13);
  const CrossModalState s{random_tensor(rng, {5, 8}), random_tensor(rng, {4, 8}), 3};
  const Tensor a = t.model.itm_logits(s), b = t.model.itm_logits(s);
  EXPECT_TRUE(testutil::bit_equal(a, b));

  auto lin = [&](const std::string& p) {
    return oracle::Lin{to_mat(t.store.at(p + ".weight")), t.store.at(p + ".bias").to_vector()};
  };
  auto first_row = [](const Tensor& x) { return oracle::Mat(1, x.dim(1), oracle::Vec(x.data().begin(), x.data().begin() + x.dim(1))); };
  oracle::Mat pv = oracle::linear(first_row(s.visual), lin("itm.pool_v"));
  oracle::Mat pt = oracle::linear(first_row(s.textual), lin("itm.pool_t"));
  oracle::Mat joined(1, 16);
  for (std::size_t j = 0; j < 8; ++j) {
    joined(0, j) = std::tanh(pv(0, j));
    joined(0, 8 + j) = std::tanh(pt(0, j));
  }
  EXPECT_LE(max_diff(a, oracle::linear(joined, lin("itm.classifier"))), 1e-10);
}

TEST(MlmHead, Examples) {
  Tower t(options(TowerMode::AaumFused), 14, 0.3);
  Rng rng(14);
  const CrossModalState s{random_tensor(rng, {5, 8}), random_tensor(rng, {6, 8}), 3};
  EXPECT_FALSE(t.model.mlm_logits(s, {}).defined());
  const std::size_t bad[] = {6};
  EXPECT_THROW(t.model.mlm_logits(s, bad), IndexError);

  const std::size_t pos[] = {1, 4};
  const Tensor logits = t.model.mlm_logits(s, pos);
  ASSERT_EQ(logits.shape(), (Shape{2, 24}));
  auto lin = [&](const std::string& p) {
    return oracle::Lin{to_mat(t.store.at(p + ".weight")), t.store.at(p + ".bias").to_vector()};
  };
  oracle::Mat rows(2, 8);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < 8; ++j) rows(r, j) = s.textual.at({pos[r], j});
  }
  oracle::Mat h = oracle::linear(rows, lin("mlm.dense"));
  for (auto& v : h.v) v = oracle::gelu(v);
  h = oracle::layer_norm(h, {t.store.at("mlm.ln.gain").to_vector(), t.store.at("mlm.ln.bias").to_vector()});
  EXPECT_LE(max_diff(logits, oracle::linear(h, lin("mlm.decoder"))), 1e-10);

  zero(t.store, "mlm.decoder.weight");
  zero(t.store, "mlm.decoder.bias");
  const std::size_t one[] = {2};
  const auto p = softmax_last(t.model.mlm_logits(s, one)).to_vector();
  for (double v : p) EXPECT_NEAR(v, 1.0 / 24.0, 1e-15);
}

TEST(ManagerTower, TwoTokenGradcheck) {
  TwoTowerOptions o = options(TowerMode::AaumFused);
  o.model.image_side = o.model.patch_size;
  o.model.cross_layers = 2;
  ParameterStore store(15);
  TwoTowerModel model(store, o);
  Rng rng(15);
  testutil::perturb(store, rng, 0.1);
  const Tensor img = random_tensor(rng, {4, 4, 1});
  const int toks[] = {TokenIds::kBos, TokenIds::kEos};
  const int itm_target[] = {1};
  const std::size_t pos[] = {1};
  const int mlm_target[] = {TokenIds::kEos};
  auto loss = [&] {
    const auto out = model.forward(img, toks);
    return add(cross_entropy(model.itm_logits(out.final_state()), itm_target),
               cross_entropy(model.mlm_logits(out.final_state(), pos), mlm_target));
  };
  ASSERT_EQ(model.forward(img, toks).final_state().visual.dim(0), 2u);
  GradcheckOptions opts;
  opts.threshold = 1e-4;
  const auto rep = gradcheck(loss, store.entries(), opts);
  std::string worst;
  double m = 0.0;
  for (const auto& p : rep.parameters) {
    if (p.max_relative_error > m) {
      m = p.max_relative_error;
      worst = p.name;
    }
  }
  EXPECT_TRUE(rep.passed()) << rep.flagged() << " entries flagged, worst " << worst << " at " << m;
  EXPECT_LT(rep.max_relative_error(), 1e-4);
}
