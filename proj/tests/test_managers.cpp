// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "manager/error.hpp"
#include "manager/gradcheck.hpp"
#include "manager/managers.hpp"
#include "manager/ops.hpp"
#include "test_util.hpp"

using namespace manager;
using testutil::max_diff;
using testutil::random_tensor;
using testutil::to_ln;
using testutil::to_mat;
using testutil::to_stack;

namespace {

struct Made {
  ParameterStore store{17};
  ManagerParams params;
};

Made make(ManagerKind kind, std::size_t n, std::size_t d, std::size_t layer = 2, bool has_cross = true,
          bool split = false, bool fused = false) {
  Made m;
  ManagerOptions o;
  o.kind = kind;
  o.experts = n;
  o.hidden = d;
  o.layer = layer;
  o.has_cross = has_cross;
  o.split = split;
  o.fused_query = fused;
  m.params = ManagerParams::create(m.store, "m", o);
  return m;
}

void fill(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void randomize(Tensor t, Rng& rng, double sd = 1.0) {
  for (auto& x : t.mutable_data()) x = rng.normal(0.0, sd);
}

/// Mean over experts of the layer-normed stack.
Tensor mean_ln(const Tensor& uni, const LayerNormParams& ln) {
  const std::size_t n = uni.dim(0);
  return scale(sum_axis(ln.forward(uni), 0), 1.0 / static_cast<double>(n));
}

Tensor one_hot_logits(std::size_t n, std::size_t d, std::size_t k) {
  std::vector<double> v(n * d, -1000.0);
  for (std::size_t j = 0; j < d; ++j) v[k * d + j] = 1000.0;
  return Tensor::from_vector({n, d}, v);
}

void set(Tensor dst, const Tensor& src) {
  auto out = dst.mutable_data();
  std::copy(src.data().begin(), src.data().end(), out.begin());
}

double column_sum_error(const Tensor& weights) {
  const std::size_t e = weights.dim(0), l = weights.dim(1);
  double err = 0.0;
  for (std::size_t t = 0; t < l; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < e; ++i) s += weights.at({i, t});
    err = std::max(err, std::abs(s - 1.0));
  }
  return err;
}

}  // namespace

TEST(TypeLayerEmbeddings, Examples) {
  ParameterStore store(1);
  auto emb = TypeLayerEmbeddings::create(store, "e", 3, 4);
  Rng rng(1);
  const Tensor x = random_tensor(rng, {3, 5, 4});
  fill(emb.type, 0.0);
  fill(emb.layer, 0.0);
  EXPECT_TRUE(testutil::bit_equal(add_type_layer_embeddings(x, Modality::Textual, emb), x));

  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) emb.layer.mutable_data()[i * 4 + j] = static_cast<double>(i);
  }
  const Tensor out = add_type_layer_embeddings(Tensor::zeros({3, 5, 4}), Modality::Visual, emb);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.at({i, t, j}), static_cast<double>(i));
    }
  }
}

TEST(TypeLayerEmbeddings, MatchesLoop) {
  ParameterStore store(2);
  auto emb = TypeLayerEmbeddings::create(store, "e", 2, 3);
  Rng rng(2);
  randomize(emb.type, rng);
  randomize(emb.layer, rng);
  const Tensor x = random_tensor(rng, {2, 4, 3});
  for (Modality m : {Modality::Visual, Modality::Textual}) {
    const Tensor out = add_type_layer_embeddings(x, m, emb);
    const std::size_t mi = static_cast<std::size_t>(m);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t j = 0; j < 3; ++j) {
          EXPECT_EQ(out.at({i, t, j}), x.at({i, t, j}) + emb.type.at({mi, j}) + emb.layer.at({i, j}));
        }
      }
    }
  }
  EXPECT_THROW(add_type_layer_embeddings(random_tensor(rng, {3, 4, 3}), Modality::Visual, emb), DimensionError);
}

TEST(Sam, FirstLayerUniformInitIsMean) {
  Made m = make(ManagerKind::Sam, 3, 4, 1);
  Rng rng(3);
  const Tensor uni = random_tensor(rng, {3, 5, 4});
  const auto out = sam_forward(uni, {}, m.params);
  EXPECT_LE(max_diff(out.output, mean_ln(uni, m.params.ln_uni)), 1e-15);
}

TEST(Sam, SaturatedOneHot) {
  Made m = make(ManagerKind::Sam, 3, 4, 2);
  Rng rng(4);
  const Tensor uni = random_tensor(rng, {3, 5, 4});
  const Tensor hist[] = {random_tensor(rng, {5, 4})};
  set(m.params.w, one_hot_logits(4, 4, 1));
  const auto out = sam_forward(uni, hist, m.params);
  EXPECT_LE(max_diff(out.output, m.params.ln_uni.forward(select(uni, 1))), 1e-6);
}

TEST(Sam, RandomMatchesExpansion) {
  for (bool split : {false, true}) {
    Made m = make(ManagerKind::Sam, 3, 4, 3, true, split);
    Rng rng(5);
    testutil::perturb(m.store, rng, 0.5);
    const Tensor uni = random_tensor(rng, {3, 6, 4});
    const Tensor hist[] = {random_tensor(rng, {6, 4}), random_tensor(rng, {6, 4})};
    const auto out = sam_forward(uni, hist, m.params);
    const double tau = std::exp(m.params.log_tau_uni.item());
    oracle::Stack h = {to_mat(hist[0]), to_mat(hist[1])};
    const oracle::Mat ref =
        split ? oracle::sam_split(to_stack(uni), h, to_mat(m.params.w), tau, to_mat(m.params.w_cross),
                                  std::exp(m.params.log_tau_cross.item()), to_ln(m.params.ln_uni), to_ln(m.params.ln_cross))
              : oracle::sam(to_stack(uni), h, to_mat(m.params.w), tau, to_ln(m.params.ln_uni), to_ln(m.params.ln_cross));
    EXPECT_LE(max_diff(out.output, ref), 1e-10) << "split " << split;
  }
}

TEST(Sam, SplitInitialization) {
  Made m = make(ManagerKind::Sam, 6, 4, 4, true, true);
  for (double v : m.params.w.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 6.0);
  ASSERT_EQ(m.params.w_cross.shape(), (Shape{3, 4}));
  for (double v : m.params.w_cross.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  Made joint = make(ManagerKind::Sam, 6, 4, 4);
  EXPECT_EQ(joint.params.w.shape(), (Shape{9, 4}));
}

TEST(Sam, HistoryLengthMismatch) {
  Made m = make(ManagerKind::Sam, 2, 4, 3);
  Rng rng(6);
  const Tensor hist[] = {random_tensor(rng, {5, 4})};
  EXPECT_THROW(sam_forward(random_tensor(rng, {2, 5, 4}), hist, m.params), ContractError);
}

TEST(Saum, InitIsMeanPlusCross) {
  Made m = make(ManagerKind::Saum, 3, 4);
  Rng rng(7);
  const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
  const auto out = saum_forward(uni, &cross, m.params);
  const Tensor expect = add(mean_ln(uni, m.params.ln_uni), m.params.ln_cross.forward(cross));
  EXPECT_LE(max_diff(out.output, expect), 1e-15);
}

TEST(Saum, ZeroCrossWeightOneHot) {
  Made m = make(ManagerKind::Saum, 3, 4);
  Rng rng(8);
  const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
  fill(m.params.w_c, 0.0);
  set(m.params.w, one_hot_logits(3, 4, 2));
  const auto out = saum_forward(uni, &cross, m.params);
  EXPECT_LE(max_diff(out.output, m.params.ln_uni.forward(select(uni, 2))), 1e-6);
}

TEST(Saum, RandomMatchesExpansion) {
  for (bool has_cross : {false, true}) {
    Made m = make(ManagerKind::Saum, 4, 6, has_cross ? 2 : 1, has_cross);
    Rng rng(9);
    testutil::perturb(m.store, rng, 0.5);
    const Tensor uni = random_tensor(rng, {4, 3, 6}), cross = random_tensor(rng, {3, 6});
    const auto out = saum_forward(uni, has_cross ? &cross : nullptr, m.params);
    const oracle::Mat c = to_mat(cross);
    const oracle::Ln ln_cross = has_cross ? to_ln(m.params.ln_cross) : oracle::Ln{};
    const oracle::Vec wc = has_cross ? m.params.w_c.to_vector() : oracle::Vec{};
    const oracle::Mat ref = oracle::saum(to_stack(uni), has_cross ? &c : nullptr, to_mat(m.params.w),
                                         std::exp(m.params.log_tau_uni.item()), wc, to_ln(m.params.ln_uni), ln_cross);
    EXPECT_LE(max_diff(out.output, ref), 1e-10);
  }
}

TEST(Saum, CrossInputContract) {
  Made first = make(ManagerKind::Saum, 2, 4, 1, false);
  Made later = make(ManagerKind::Saum, 2, 4, 2, true);
  Rng rng(10);
  const Tensor uni = random_tensor(rng, {2, 3, 4}), cross = random_tensor(rng, {3, 4});
  EXPECT_THROW(saum_forward(uni, &cross, first.params), ContractError);
  EXPECT_THROW(saum_forward(uni, nullptr, later.params), ContractError);
  EXPECT_THROW(saum_forward(random_tensor(rng, {3, 3, 4}), &cross, later.params), DimensionError);
}

TEST(FusedQuery, SingleTextToken) {
  Made m = make(ManagerKind::Aaum, 2, 4, 2, true, false, true);
  Rng rng(11);
  testutil::perturb(m.store, rng, 0.5);
  const Tensor own = random_tensor(rng, {5, 4}), other = random_tensor(rng, {1, 4});
  const Tensor q = fused_query(own, other, m.params);
  ASSERT_EQ(q.shape(), (Shape{5, 4}));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(q.at({i, j}), other.at({0, j}), 1e-15);
  }
}

TEST(FusedQuery, ZeroQueryProjectionAveragesText) {
  Made m = make(ManagerKind::Aaum, 2, 4, 2, true, false, true);
  Rng rng(12);
  testutil::perturb(m.store, rng, 0.5);
  fill(m.params.query_proj, 0.0);
  const Tensor own = random_tensor(rng, {3, 4}), other = random_tensor(rng, {6, 4});
  const Tensor q = fused_query(own, other, m.params);
  const Tensor avg = scale(sum_axis(other, 0), 1.0 / 6.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(q.at({i, j}), avg.at({j}), 1e-14);
  }
}

TEST(FusedQuery, MatchesNaiveAttention) {
  Made m = make(ManagerKind::Aaum, 2, 4, 3, true, false, true);
  Rng rng(13);
  testutil::perturb(m.store, rng, 0.5);
  for (int c = 0; c < 10; ++c) {
    const Tensor own = random_tensor(rng, {5, 4}), other = random_tensor(rng, {3, 4});
    const oracle::Mat ref =
        oracle::fused_query(to_mat(own), to_mat(other), to_mat(m.params.query_proj), to_mat(m.params.key_proj));
    EXPECT_LE(max_diff(fused_query(own, other, m.params), ref), 1e-10);
  }
}

TEST(FusedQuery, FirstLayerIsContractError) {
  Made m = make(ManagerKind::Aaum, 2, 4, 1, true, false, true);
  Rng rng(14);
  EXPECT_THROW(fused_query(random_tensor(rng, {3, 4}), random_tensor(rng, {2, 4}), m.params), ContractError);
  Made plain = make(ManagerKind::Aaum, 2, 4, 2);
  EXPECT_THROW(fused_query(random_tensor(rng, {3, 4}), random_tensor(rng, {2, 4}), plain.params), ContractError);
}

TEST(Aaum, ZeroRouterEqualsUniformSaum) {
  Made a = make(ManagerKind::Aaum, 3, 4);
  Made s = make(ManagerKind::Saum, 3, 4);
  Rng rng(15);
  fill(a.params.w_m, 0.0);
  randomize(a.params.w_c, rng);
  set(s.params.w_c, a.params.w_c);
  const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
  const Tensor query = random_tensor(rng, {5, 4});
  const auto ao = aaum_forward(uni, cross, query, a.params, {});
  const auto so = saum_forward(uni, &cross, s.params);
  EXPECT_LE(max_diff(ao.output, so.output), 1e-15);
  for (double w : ao.weights.data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(Aaum, SingleTokenMatchesExpansion) {
  Made a = make(ManagerKind::Aaum, 4, 6);
  Rng rng(16);
  testutil::perturb(a.store, rng, 0.5);
  const Tensor uni = random_tensor(rng, {4, 1, 6}), cross = random_tensor(rng, {1, 6});
  const auto out = aaum_forward(uni, cross, cross, a.params, {});
  oracle::Mat routes;
  const oracle::Mat ref = oracle::aaum(to_stack(uni), to_mat(cross), to_mat(cross), to_ln(a.params.ln_query),
                                       to_mat(a.params.w_m), std::exp(a.params.log_tau_uni.item()),
                                       a.params.w_c.to_vector(), to_ln(a.params.ln_uni), to_ln(a.params.ln_cross),
                                       nullptr, &routes);
  EXPECT_LE(max_diff(out.output, ref), 1e-10);
  EXPECT_LE(max_diff(out.weights, routes), 1e-12);
}

TEST(Aaum, RouterWeightsAreExpertsByTokens) {
  Made a = make(ManagerKind::Aaum, 6, 4);
  Rng rng(17);
  testutil::perturb(a.store, rng, 0.5);
  const Tensor uni = random_tensor(rng, {6, 7, 4}), cross = random_tensor(rng, {7, 4});
  NoiseSpec noise;
  Rng stream(3);
  for (bool training : {false, true}) {
    const RunMode mode{training, &noise, &stream};
    const auto out = aaum_forward(uni, cross, cross, a.params, mode);
    EXPECT_EQ(out.weights.shape(), (Shape{6, 7}));
    EXPECT_LE(column_sum_error(out.weights), 1e-9);
  }
}

TEST(Aaum, ArgmaxInvariantUnderTemperature) {
  Made a = make(ManagerKind::Aaum, 5, 4);
  Rng rng(18);
  testutil::perturb(a.store, rng, 1.0);
  const Tensor uni = random_tensor(rng, {5, 8, 4}), cross = random_tensor(rng, {8, 4});
  auto argmax = [&] {
    const Tensor w = aaum_forward(uni, cross, cross, a.params, {}).weights;
    std::vector<std::size_t> best(8);
    for (std::size_t t = 0; t < 8; ++t) {
      for (std::size_t i = 1; i < 5; ++i) {
        if (w.at({i, t}) > w.at({best[t], t})) best[t] = i;
      }
    }
    return best;
  };
  const auto base = argmax();
  for (double lt : {-2.0, -0.5, 0.7, 3.0}) {
    a.params.log_tau_uni.mutable_data()[0] = lt;
    EXPECT_EQ(argmax(), base) << "log tau " << lt;
  }
}

TEST(Aaum, NoiseOnlyInTrainingAndSeeded) {
  Made a = make(ManagerKind::Aaum, 3, 4);
  Rng rng(19);
  testutil::perturb(a.store, rng, 0.5);
  const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
  NoiseSpec noise;
  Rng s1(7), s2(7), s3(7);
  const auto eval1 = aaum_forward(uni, cross, cross, a.params, {false, &noise, &s1});
  const auto eval2 = aaum_forward(uni, cross, cross, a.params, {});
  EXPECT_TRUE(testutil::bit_equal(eval1.output, eval2.output));
  const auto t1 = aaum_forward(uni, cross, cross, a.params, {true, &noise, &s2});
  const auto t2 = aaum_forward(uni, cross, cross, a.params, {true, &noise, &s3});
  EXPECT_TRUE(testutil::bit_equal(t1.output, t2.output));
  EXPECT_FALSE(testutil::bit_equal(t1.output, eval1.output));
  noise.aaum_gaussian = false;
  Rng s4(7);
  EXPECT_TRUE(testutil::bit_equal(aaum_forward(uni, cross, cross, a.params, {true, &noise, &s4}).output, eval1.output));
}

TEST(Aaum, GradcheckNoiseOff) {
  Made a = make(ManagerKind::Aaum, 3, 4, 2, true, false, true);
  Rng rng(20);
  testutil::perturb(a.store, rng, 0.3);
  const Tensor uni = random_tensor(rng, {3, 4, 4}), cross = random_tensor(rng, {4, 4});
  const Tensor other = random_tensor(rng, {3, 4}), r = random_tensor(rng, {4, 4});
  auto loss = [&] {
    const Tensor q = fused_query(cross, other, a.params);
    return sum(mul(aaum_forward(uni, cross, q, a.params, {}).output, r));
  };
  GradcheckOptions opts;
  opts.threshold = 1e-4;
  const auto rep = gradcheck(loss, a.store.entries(), opts);
  EXPECT_TRUE(rep.passed()) << rep.max_relative_error();
  for (const char* name : {"m.w_c", "m.w_m", "m.log_tau_uni", "m.fused.query", "m.fused.key"}) {
    const Tensor& t = a.store.at(name);
    double mag = 0.0;
    for (double g : t.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << name;
  }
}

TEST(Saum, GradientsReachWeights) {
  Made m = make(ManagerKind::Saum, 3, 4);
  Rng rng(21);
  testutil::perturb(m.store, rng, 0.3);
  const Tensor uni = random_tensor(rng, {3, 4, 4}), cross = random_tensor(rng, {4, 4}), r = random_tensor(rng, {4, 4});
  const auto rep = gradcheck([&] { return sum(mul(saum_forward(uni, &cross, m.params).output, r)); },
                             m.store.entries());
  EXPECT_TRUE(rep.passed()) << rep.max_relative_error();
  for (const char* name : {"m.w", "m.w_c", "m.log_tau_uni"}) {
    double mag = 0.0;
    for (double g : m.store.at(name).grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << name;
  }
}

TEST(CrossAttentionManager, SingleExpert) {
  Made m = make(ManagerKind::CrossAttn, 1, 4);
  Rng rng(22);
  testutil::perturb(m.store, rng, 0.5);
  const Tensor uni = random_tensor(rng, {1, 5, 4}), cross = random_tensor(rng, {5, 4});
  const auto out = cross_attention_manager(uni, cross, m.params, {});
  for (double w : out.weights.data()) EXPECT_EQ(w, 1.0);
  const Tensor expect =
      add(m.params.ln_uni.forward(select(uni, 0)), mul(m.params.w_c, m.params.ln_cross.forward(cross)));
  EXPECT_LE(max_diff(out.output, expect), 1e-15);
}

TEST(CrossAttentionManager, IdenticalKeysGiveUniformWeights) {
  Made m = make(ManagerKind::CrossAttn, 4, 4);
  Rng rng(23);
  testutil::perturb(m.store, rng, 0.5);
  const Tensor first = random_tensor(rng, {1, 4});
  std::vector<Tensor> layers;
  for (int i = 0; i < 4; ++i) {
    const Tensor parts[] = {first, random_tensor(rng, {4, 4})};
    layers.push_back(concat_rows(parts));
  }
  const Tensor uni = stack(layers), cross = random_tensor(rng, {5, 4});
  const auto out = cross_attention_manager(uni, cross, m.params, {});
  for (double w : out.weights.data()) EXPECT_NEAR(w, 0.25, 1e-15);
}

TEST(CrossAttentionManager, MatchesOracle) {
  Made m = make(ManagerKind::CrossAttn, 3, 4);
  Rng rng(24);
  testutil::perturb(m.store, rng, 0.5);
  for (int c = 0; c < 10; ++c) {
    const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
    const oracle::Mat ref = oracle::cross_attention_manager(
        to_stack(uni), to_mat(cross), to_ln(m.params.ln_query), to_mat(m.params.query_proj),
        to_mat(m.params.key_proj), std::exp(m.params.log_tau_uni.item()), m.params.w_c.to_vector(),
        to_ln(m.params.ln_uni), to_ln(m.params.ln_cross));
    EXPECT_LE(max_diff(cross_attention_manager(uni, cross, m.params, {}).output, ref), 1e-10);
  }
}

TEST(ConcatAttentionManager, ZeroProjectionEqualsUniformSaum) {
  Made c = make(ManagerKind::ConcatAttn, 3, 4);
  Made s = make(ManagerKind::Saum, 3, 4);
  fill(c.params.concat_proj.weight, 0.0);
  Rng rng(25);
  const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
  const auto co = concat_attention_manager(uni, cross, c.params, {});
  EXPECT_LE(max_diff(co.output, saum_forward(uni, &cross, s.params).output), 1e-15);
  for (double w : co.weights.data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(ConcatAttentionManager, SingleExpertWeightsAreOne) {
  Made c = make(ManagerKind::ConcatAttn, 1, 4);
  Rng rng(26);
  testutil::perturb(c.store, rng, 0.5);
  const auto out = concat_attention_manager(random_tensor(rng, {1, 5, 4}), random_tensor(rng, {5, 4}), c.params, {});
  for (double w : out.weights.data()) EXPECT_EQ(w, 1.0);
}

TEST(ConcatAttentionManager, MatchesOracle) {
  Made c = make(ManagerKind::ConcatAttn, 3, 4);
  Rng rng(27);
  testutil::perturb(c.store, rng, 0.5);
  for (int k = 0; k < 10; ++k) {
    const Tensor uni = random_tensor(rng, {3, 5, 4}), cross = random_tensor(rng, {5, 4});
    const oracle::Mat ref = oracle::concat_attention_manager(
        to_stack(uni), to_mat(cross), testutil::to_lin(c.params.concat_proj), std::exp(c.params.log_tau_uni.item()),
        c.params.w_c.to_vector(), to_ln(c.params.ln_uni), to_ln(c.params.ln_cross));
    EXPECT_LE(max_diff(concat_attention_manager(uni, cross, c.params, {}).output, ref), 1e-10);
  }
}

TEST(MllmSaum, ZeroInitGivesZero) {
  Made m = make(ManagerKind::MllmSaum, 3, 4);
  for (double w : m.params.w.data()) EXPECT_EQ(w, 0.0);
  Rng rng(28);
  const auto out = mllm_saum_forward(random_tensor(rng, {3, 5, 4}), m.params, {});
  for (double v : out.output.data()) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(m.params.w_c.defined());
  EXPECT_FALSE(m.params.ln_uni.gain.defined());
}

TEST(MllmSaum, SingleExpertIsExact) {
  Made m = make(ManagerKind::MllmSaum, 3, 4);
  for (std::size_t j = 0; j < 4; ++j) m.params.w.mutable_data()[1 * 4 + j] = 1.0;
  Rng rng(29);
  const Tensor uni = random_tensor(rng, {3, 5, 4});
  EXPECT_TRUE(testutil::bit_equal(mllm_saum_forward(uni, m.params, {}).output, select(uni, 1)));
}

TEST(MllmSaum, RandomMatchesExpansion) {
  Made m = make(ManagerKind::MllmSaum, 4, 6);
  Rng rng(30);
  for (int c = 0; c < 10; ++c) {
    randomize(m.params.w, rng);
    const Tensor uni = random_tensor(rng, {4, 3, 6});
    EXPECT_LE(max_diff(mllm_saum_forward(uni, m.params, {}).output, oracle::mllm_saum(to_stack(uni), to_mat(m.params.w))),
              1e-12);
  }
}

TEST(MllmSaum, JitterBoundsAndSeeding) {
  Made m = make(ManagerKind::MllmSaum, 2, 4);
  Rng rng(31);
  randomize(m.params.w, rng);
  const Tensor uni = random_tensor(rng, {2, 3, 4});
  const Tensor clean = mllm_saum_forward(uni, m.params, {}).output;
  NoiseSpec noise;
  Rng stream(5);
  for (int c = 0; c < 50; ++c) {
    const Tensor noisy = mllm_saum_forward(uni, m.params, {true, &noise, &stream}).output;
    const double eps = noisy.at({0, 0}) / clean.at({0, 0});
    EXPECT_GE(eps, 0.98 - 1e-12);
    EXPECT_LE(eps, 1.02 + 1e-12);
    for (std::size_t i = 0; i < noisy.numel(); ++i) EXPECT_NEAR(noisy.data()[i], eps * clean.data()[i], 1e-12);
  }
  Rng a(9), b(9);
  EXPECT_TRUE(testutil::bit_equal(mllm_saum_forward(uni, m.params, {true, &noise, &a}).output,
                                  mllm_saum_forward(uni, m.params, {true, &noise, &b}).output));
}
