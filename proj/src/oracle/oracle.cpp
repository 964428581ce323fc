// SPDX-License-Identifier: Apache-2.0
#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

Mat::Mat(std::size_t r, std::size_t c, Vec values) : rows(r), cols(c), v(std::move(values)) {
  if (v.size() != r * c) throw std::invalid_argument("oracle matrix size mismatch");
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("oracle matmul shape mismatch");
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

Mat transpose(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

Mat linear(const Mat& x, const Lin& l) {
  Mat out = matmul(x, l.w);
  if (!l.b.empty())
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += l.b[j];
  return out;
}

Mat layer_norm(const Mat& x, const Ln& p, double eps) {
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mean) * inv * p.gain[j] + p.bias[j];
  }
  return out;
}

Vec softmax(const Vec& x, double tau) {
  double m = x[0];
  for (double e : x) m = std::max(m, e);
  Vec out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp((x[i] - m) / tau);
    z += out[i];
  }
  for (double& e : out) e /= z;
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Mat attention(const Mat& queries, const Mat& context, const Attn& p, bool causal, std::vector<Mat>* weights) {
  const Mat q = linear(queries, p.q), k = linear(context, p.k), v = linear(context, p.v);
  const std::size_t d = q.cols, dh = d / p.heads, lq = q.rows, lk = k.rows;
  Mat merged(lq, d);
  if (weights) weights->assign(p.heads, Mat(lq, lk));
  for (std::size_t h = 0; h < p.heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      const std::size_t visible = causal ? std::min(lk, i + 1 + (lk - lq)) : lk;
      Vec scores(visible);
      for (std::size_t j = 0; j < visible; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += q(i, h * dh + e) * k(j, h * dh + e);
        scores[j] = s / std::sqrt(static_cast<double>(dh));
      }
      const Vec w = softmax(scores);
      for (std::size_t j = 0; j < visible; ++j) {
        if (weights) (*weights)[h](i, j) = w[j];
        for (std::size_t e = 0; e < dh; ++e) merged(i, h * dh + e) += w[j] * v(j, h * dh + e);
      }
    }
  }
  return linear(merged, p.o);
}

namespace {

Mat ffn(const Mat& x, const Lin& up, const Lin& down) {
  Mat h = linear(x, up);
  for (double& e : h.v) e = gelu(e);
  return linear(h, down);
}

}  // namespace

Mat block_forward(const Mat& x, const Block& b, bool causal) {
  Mat h = add(x, attention(layer_norm(x, b.ln1), layer_norm(x, b.ln1), b.attn, causal));
  return add(h, ffn(layer_norm(h, b.ln2), b.up, b.down));
}

std::pair<Mat, Mat> co_attention(const Mat& v, const Mat& t, const CoHalf& pv, const CoHalf& pt) {
  const Mat nv = layer_norm(v, pv.ln_msa), nt = layer_norm(t, pt.ln_msa);
  const Mat v1 = add(v, attention(nv, nv, pv.msa, false));
  const Mat t1 = add(t, attention(nt, nt, pt.msa, false));
  const Mat v2 = add(v1, attention(layer_norm(v1, pv.ln_mca), layer_norm(t1, pv.ln_ctx), pv.mca, false));
  const Mat t2 = add(t1, attention(layer_norm(t1, pt.ln_mca), layer_norm(v1, pt.ln_ctx), pt.mca, false));
  return {add(v2, ffn(layer_norm(v2, pv.ln_ffn), pv.up, pv.down)),
          add(t2, ffn(layer_norm(t2, pt.ln_ffn), pt.up, pt.down))};
}

namespace {

Stack ln_stack(const Stack& s, const Ln& p) {
  Stack out;
  for (const auto& m : s) out.push_back(layer_norm(m, p));
  return out;
}

// Softmax down each column of an [E x D] matrix.
Mat column_softmax(const Mat& w, double tau) {
  Mat out(w.rows, w.cols);
  for (std::size_t j = 0; j < w.cols; ++j) {
    Vec col(w.rows);
    for (std::size_t i = 0; i < w.rows; ++i) col[i] = w(i, j);
    const Vec s = softmax(col, tau);
    for (std::size_t i = 0; i < w.rows; ++i) out(i, j) = s[i];
  }
  return out;
}

void add_cross(Mat& out, const Mat& cross, const Vec& w_c, const Ln& ln_cross) {
  const Mat c = layer_norm(cross, ln_cross);
  for (std::size_t t = 0; t < out.rows; ++t)
    for (std::size_t d = 0; d < out.cols; ++d) out(t, d) += w_c[d] * c(t, d);
}

Mat routed_sum(const Stack& ln_uni, const Mat& routes /* N x L */) {
  const std::size_t l = ln_uni[0].rows, d = ln_uni[0].cols;
  Mat out(l, d);
  for (std::size_t i = 0; i < ln_uni.size(); ++i)
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t e = 0; e < d; ++e) out(t, e) += routes(i, t) * ln_uni[i](t, e);
  return out;
}

}  // namespace

Mat sam(const Stack& uni, const Stack& history, const Mat& w, double tau, const Ln& ln_uni, const Ln& ln_cross) {
  const Mat ws = column_softmax(w, tau);
  const Stack lu = ln_stack(uni, ln_uni);
  const Stack lh = ln_stack(history, ln_cross);
  const std::size_t n = uni.size(), l = uni[0].rows, d = uni[0].cols;
  Mat out(l, d);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t e = 0; e < d; ++e) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += ws(i, e) * lu[i](t, e);
      for (std::size_t j = 0; j < lh.size(); ++j) acc += ws(n + j, e) * lh[j](t, e);
      out(t, e) = acc;
    }
  return out;
}

Mat sam_split(const Stack& uni, const Stack& history, const Mat& w_uni, double tau_uni, const Mat& w_cross,
              double tau_cross, const Ln& ln_uni, const Ln& ln_cross) {
  const Mat wu = column_softmax(w_uni, tau_uni);
  const Stack lu = ln_stack(uni, ln_uni);
  const std::size_t l = uni[0].rows, d = uni[0].cols;
  Mat out(l, d);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t e = 0; e < d; ++e)
      for (std::size_t i = 0; i < uni.size(); ++i) out(t, e) += wu(i, e) * lu[i](t, e);
  if (!history.empty()) {
    const Mat wc = column_softmax(w_cross, tau_cross);
    const Stack lh = ln_stack(history, ln_cross);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t e = 0; e < d; ++e)
        for (std::size_t j = 0; j < lh.size(); ++j) out(t, e) += wc(j, e) * lh[j](t, e);
  }
  return out;
}

Mat saum(const Stack& uni, const Mat* cross, const Mat& w, double tau, const Vec& w_c, const Ln& ln_uni,
         const Ln& ln_cross) {
  const Mat ws = column_softmax(w, tau);
  const Stack lu = ln_stack(uni, ln_uni);
  const std::size_t l = uni[0].rows, d = uni[0].cols;
  Mat out(l, d);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t e = 0; e < d; ++e)
      for (std::size_t i = 0; i < uni.size(); ++i) out(t, e) += ws(i, e) * lu[i](t, e);
  if (cross) add_cross(out, *cross, w_c, ln_cross);
  return out;
}

Mat fused_query(const Mat& own, const Mat& other, const Mat& wq, const Mat& wk) {
  const Mat q = matmul(own, wq), k = matmul(other, wk);
  const std::size_t d = own.cols;
  Mat out(own.rows, d);
  for (std::size_t i = 0; i < own.rows; ++i) {
    Vec s(other.rows);
    for (std::size_t j = 0; j < other.rows; ++j) {
      double acc = 0.0;
      for (std::size_t e = 0; e < d; ++e) acc += q(i, e) * k(j, e);
      s[j] = acc / std::sqrt(static_cast<double>(d));
    }
    const Vec p = softmax(s);
    for (std::size_t j = 0; j < other.rows; ++j)
      for (std::size_t e = 0; e < d; ++e) out(i, e) += p[j] * other(j, e);
  }
  return out;
}

Mat aaum(const Stack& uni, const Mat& cross, const Mat& query, const Ln& ln_query, const Mat& w_m, double tau,
         const Vec& w_c, const Ln& ln_uni, const Ln& ln_cross, const Mat* noise, Mat* routes_out) {
  const std::size_t n = uni.size(), l = uni[0].rows, d = uni[0].cols;
  const Mat nq = layer_norm(query, ln_query);
  Mat routes(n, l);
  for (std::size_t t = 0; t < l; ++t) {
    Vec logits(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t e = 0; e < d; ++e) acc += nq(t, e) * w_m(e, i);
      logits[i] = acc + (noise ? (*noise)(t, i) : 0.0);
    }
    const Vec p = softmax(logits, tau);
    for (std::size_t i = 0; i < n; ++i) routes(i, t) = p[i];
  }
  Mat out = routed_sum(ln_stack(uni, ln_uni), routes);
  add_cross(out, cross, w_c, ln_cross);
  if (routes_out) *routes_out = routes;
  return out;
}

Mat cross_attention_manager(const Stack& uni, const Mat& cross, const Ln& ln_query, const Mat& wq, const Mat& wk,
                            double tau, const Vec& w_c, const Ln& ln_uni, const Ln& ln_cross) {
  const std::size_t n = uni.size(), l = uni[0].rows, d = uni[0].cols;
  const Stack lu = ln_stack(uni, ln_uni);
  const Mat q = matmul(layer_norm(cross, ln_query), wq);
  Mat keys(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < d; ++e) {
      double acc = 0.0;
      for (std::size_t f = 0; f < d; ++f) acc += lu[i](0, f) * wk(f, e);
      keys(i, e) = acc;
    }
  Mat routes(n, l);
  for (std::size_t t = 0; t < l; ++t) {
    Vec s(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t e = 0; e < d; ++e) acc += q(t, e) * keys(i, e);
      s[i] = acc / std::sqrt(static_cast<double>(d));
    }
    const Vec p = softmax(s, tau);
    for (std::size_t i = 0; i < n; ++i) routes(i, t) = p[i];
  }
  Mat out = routed_sum(lu, routes);
  add_cross(out, cross, w_c, ln_cross);
  return out;
}

Mat concat_attention_manager(const Stack& uni, const Mat& cross, const Lin& proj, double tau, const Vec& w_c,
                             const Ln& ln_uni, const Ln& ln_cross) {
  const std::size_t n = uni.size(), l = uni[0].rows, d = uni[0].cols;
  const Stack lu = ln_stack(uni, ln_uni);
  Mat out(l, d);
  for (std::size_t t = 0; t < l; ++t) {
    for (std::size_t e = 0; e < d; ++e) {
      Vec logits(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = proj.b.empty() ? 0.0 : proj.b[e];
        for (std::size_t f = 0; f < d; ++f) acc += cross(t, f) * proj.w(f, e) + uni[i](t, f) * proj.w(d + f, e);
        logits[i] = acc;
      }
      const Vec p = softmax(logits, tau);
      for (std::size_t i = 0; i < n; ++i) out(t, e) += p[i] * lu[i](t, e);
    }
  }
  add_cross(out, cross, w_c, ln_cross);
  return out;
}

Mat mllm_saum(const Stack& uni, const Mat& w, double eps) {
  const std::size_t l = uni[0].rows, d = uni[0].cols;
  Mat out(l, d);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t e = 0; e < d; ++e) {
      double acc = 0.0;
      for (std::size_t i = 0; i < uni.size(); ++i) acc += w(i, e) * uni[i](t, e);
      out(t, e) = acc * eps;
    }
  return out;
}

double cosine(const Vec& a, const Vec& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

double entropy(const std::vector<Mat>& weights) {
  double total = 0.0;
  std::size_t rows = 0;
  for (const auto& w : weights)
    for (std::size_t q = 0; q < w.rows; ++q, ++rows)
      for (std::size_t k = 0; k < w.cols; ++k)
        if (w(q, k) > 0.0) total -= w(q, k) * std::log(w(q, k));
  return total / static_cast<double>(rows);
}

double inter_head_kl(const std::vector<Mat>& weights, double floor) {
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    for (std::size_t j = 0; j < weights.size(); ++j) {
      if (i == j) continue;
      for (std::size_t q = 0; q < weights[i].rows; ++q, ++terms)
        for (std::size_t k = 0; k < weights[i].cols; ++k) {
          const double p = weights[i](q, k), r = std::max(weights[j](q, k), floor);
          if (p > 0.0) total += p * std::log(p / r);
        }
    }
  return total / static_cast<double>(terms);
}

std::vector<double> attention_distance(const std::vector<Mat>& weights, std::size_t grid_rows,
                                       std::size_t grid_cols, double pixels_per_patch) {
  std::vector<double> out;
  const std::size_t p = grid_rows * grid_cols;
  for (const auto& w : weights) {
    double total = 0.0;
    for (std::size_t qy = 0; qy < grid_rows; ++qy)
      for (std::size_t qx = 0; qx < grid_cols; ++qx)
        for (std::size_t ky = 0; ky < grid_rows; ++ky)
          for (std::size_t kx = 0; kx < grid_cols; ++kx) {
            const double dy = static_cast<double>(qy) - static_cast<double>(ky);
            const double dx = static_cast<double>(qx) - static_cast<double>(kx);
            total += w(qy * grid_cols + qx, ky * grid_cols + kx) * std::hypot(dx, dy) * pixels_per_patch;
          }
    out.push_back(total / static_cast<double>(p));
  }
  return out;
}

namespace {

Mat interpolation_matrix(std::size_t out_n, std::size_t in_n) {
  Mat r(out_n, in_n);
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
    const auto lo = static_cast<std::size_t>(src);
    const std::size_t hi = std::min(lo + 1, in_n - 1);
    const double f = src - static_cast<double>(lo);
    r(o, lo) += 1.0 - f;
    r(o, hi) += f;
  }
  return r;
}

}  // namespace

Mat resize(const Mat& img, std::size_t out_h, std::size_t out_w) {
  return matmul(matmul(interpolation_matrix(out_h, img.rows), img), transpose(interpolation_matrix(out_w, img.cols)));
}

Mat patchify(const Mat& img, std::size_t patch) {
  const std::size_t pr = img.rows / patch, pc = img.cols / patch;
  Mat out(pr * pc, patch * patch);
  for (std::size_t n = 0; n < pr * pc; ++n)
    for (std::size_t e = 0; e < patch * patch; ++e) out(n, e) = img((n / pc) * patch + e / patch, (n % pc) * patch + e % patch);
  return out;
}

Mat unpatchify(const Mat& patches, std::size_t height, std::size_t width, std::size_t patch) {
  Mat img(height, width);
  const std::size_t pc = width / patch;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      img(y, x) = patches((y / patch) * pc + x / patch, (y % patch) * patch + x % patch);
  return img;
}

Mat stitch(const std::vector<Mat>& tiles, std::size_t rows, std::size_t cols) {
  const std::size_t s = tiles[0].rows;
  Mat out(rows * s, cols * s);
  for (std::size_t y = 0; y < rows * s; ++y)
    for (std::size_t x = 0; x < cols * s; ++x) out(y, x) = tiles[(y / s) * cols + x / s](y % s, x % s);
  return out;
}

std::size_t count_tokens(std::size_t rows, std::size_t cols, std::size_t patches_per_tile) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < patches_per_tile; ++p) ++n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t p = 0; p < patches_per_tile; ++p) ++n;
    ++n;
  }
  return n;
}

double cross_entropy(const Mat& logits, const std::vector<int>& targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j));
    total += std::log(z) - logits(i, static_cast<std::size_t>(targets[i]));
  }
  return total / static_cast<double>(logits.rows);
}

}  // namespace oracle
