// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations over plain vectors. Deliberately
// written with explicit loops and no shared code with the tensor library.
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0, cols = 0;
  Vec v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, Vec values);
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

/// N x L x D stack as N matrices.
using Stack = std::vector<Mat>;

struct Ln {
  Vec gain, bias;
};

struct Lin {
  Mat w;   // [in x out]
  Vec b;   // empty when bias-free
};

struct Attn {
  Lin q, k, v, o;
  std::size_t heads = 1;
};

struct Block {
  Ln ln1;
  Attn attn;
  Ln ln2;
  Lin up, down;
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat linear(const Mat& x, const Lin& l);
/// Two-pass mean / population variance.
Mat layer_norm(const Mat& x, const Ln& p, double eps = 1e-5);
Vec softmax(const Vec& x, double tau = 1.0);
double gelu(double x);

/// Per-head loop attention, returning output and (optionally) weights [h][q][k].
Mat attention(const Mat& queries, const Mat& context, const Attn& p, bool causal,
              std::vector<Mat>* weights = nullptr);
Mat block_forward(const Mat& x, const Block& b, bool causal);

/// Co-attention layer on both streams (MSA, MCA with LN'd context, FFN).
struct CoHalf {
  Ln ln_msa;
  Attn msa;
  Ln ln_mca, ln_ctx;
  Attn mca;
  Ln ln_ffn;
  Lin up, down;
};
std::pair<Mat, Mat> co_attention(const Mat& v, const Mat& t, const CoHalf& pv, const CoHalf& pt);

// Managers. Weighted sums are spelled out over (i, t, d).
Mat sam(const Stack& uni, const Stack& history, const Mat& w, double tau, const Ln& ln_uni, const Ln& ln_cross);
Mat sam_split(const Stack& uni, const Stack& history, const Mat& w_uni, double tau_uni, const Mat& w_cross,
              double tau_cross, const Ln& ln_uni, const Ln& ln_cross);
/// `cross` null means no cross-modal term.
Mat saum(const Stack& uni, const Mat* cross, const Mat& w, double tau, const Vec& w_c, const Ln& ln_uni,
         const Ln& ln_cross);
Mat fused_query(const Mat& own, const Mat& other, const Mat& wq, const Mat& wk);
/// `noise` is [L x N] added to router logits when present.
Mat aaum(const Stack& uni, const Mat& cross, const Mat& query, const Ln& ln_query, const Mat& w_m, double tau,
         const Vec& w_c, const Ln& ln_uni, const Ln& ln_cross, const Mat* noise = nullptr,
         Mat* routes = nullptr);
Mat cross_attention_manager(const Stack& uni, const Mat& cross, const Ln& ln_query, const Mat& wq, const Mat& wk,
                            double tau, const Vec& w_c, const Ln& ln_uni, const Ln& ln_cross);
Mat concat_attention_manager(const Stack& uni, const Mat& cross, const Lin& proj, double tau, const Vec& w_c,
                             const Ln& ln_uni, const Ln& ln_cross);
Mat mllm_saum(const Stack& uni, const Mat& w, double eps = 1.0);

// Diagnostics.
double cosine(const Vec& a, const Vec& b);
/// weights[h] is [Lq x Lk].
double entropy(const std::vector<Mat>& weights);
double inter_head_kl(const std::vector<Mat>& weights, double floor = 1e-12);
std::vector<double> attention_distance(const std::vector<Mat>& weights, std::size_t grid_rows,
                                       std::size_t grid_cols, double pixels_per_patch);

// Images are [H][W] single-channel matrices.
/// Bilinear resize built from per-axis interpolation matrices: out = Ry * img * Rxᵀ.
Mat resize(const Mat& img, std::size_t out_h, std::size_t out_w);
/// Row-major patch vectors of a square-patch grid.
Mat patchify(const Mat& img, std::size_t patch);
Mat unpatchify(const Mat& patches, std::size_t height, std::size_t width, std::size_t patch);
/// Stitches tiles (raster order, each side x side) into a rows x cols canvas.
Mat stitch(const std::vector<Mat>& tiles, std::size_t rows, std::size_t cols);
/// Enumerates the visual token sequence of a layout and returns its length.
std::size_t count_tokens(std::size_t rows, std::size_t cols, std::size_t patches_per_tile);

// Losses.
double cross_entropy(const Mat& logits, const std::vector<int>& targets);

}  // namespace oracle
