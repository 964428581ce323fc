// SPDX-License-Identifier: Apache-2.0
#include "manager/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graph.hpp"
#include "manager/error.hpp"

namespace manager {

using detail::make_result;
using detail::Node;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Maps every output element of a broadcast op to the flat index of the
// corresponding operand element.
std::vector<std::size_t> broadcast_index(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - operand.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t j = operand.size(); j-- > 0;) {
    stride[j + offset] = operand[j] == 1 ? 0 : s;
    s *= operand[j];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = flat;
    for (std::size_t j = rank; j-- > 0;) {
      if (++counter[j] < out[j]) {
        flat += stride[j];
        break;
      }
      flat -= stride[j] * (out[j] - 1);
      counter[j] = 0;
    }
  }
  return index;
}

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> ia = same_a ? std::vector<std::size_t>{} : broadcast_index(a.shape(), out_shape);
  std::vector<std::size_t> ib = same_b ? std::vector<std::size_t>{} : broadcast_index(b.shape(), out_shape);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[same_a ? i : ia[i]], bv[same_b ? i : ib[i]]);
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [ia = std::move(ia), ib = std::move(ib), same_a, same_b, da, db](Node& self) {
                       auto& na = *self.inputs[0];
                       auto& nb = *self.inputs[1];
                       const auto& g = self.grad;
                       if (na.requires_grad) {
                         auto& ga = na.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           std::size_t ja = same_a ? i : ia[i];
                           std::size_t jb = same_b ? i : ib[i];
                           ga[ja] += g[i] * da(na.value[ja], nb.value[jb]);
                         }
                       }
                       if (nb.requires_grad) {
                         auto& gb = nb.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           std::size_t ja = same_a ? i : ia[i];
                           std::size_t jb = same_b ? i : ib[i];
                           gb[jb] += g[i] * db(na.value[ja], nb.value[jb]);
                         }
                       }
                     });
}

// y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    auto& na = *self.inputs[0];
    auto& ga = na.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(na.value[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t j = 0; j < rank; ++j) {
    std::size_t da = j + a.size() >= rank ? a[j + a.size() - rank] : 1;
    std::size_t db = j + b.size() >= rank ? b[j + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_to_string(a) + " and " + shape_to_string(b) + " are not broadcastable");
    }
    out[j] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor reciprocal(const Tensor& a) {
  for (double v : a.data()) {
    if (v == 0.0) throw DomainError("reciprocal of zero");
  }
  return unary_op(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();  // g * b^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * nb.value[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();  // a^T * g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = na.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a rank-2 tensor, got " + shape_to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto av = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
  }
  auto v = a.to_vector();
  return make_result(std::move(shape), std::move(v), {a}, [](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  const auto av = a.data();
  double s = std::accumulate(av.begin(), av.end(), 0.0);
  return make_result({1}, {s}, {a}, [](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (auto& x : ga) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  const auto av = a.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += av[(o * sp.n + k) * sp.inner + i];
  return make_result(std::move(out_shape), std::move(out), {a}, [sp](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.n + k) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < sp.n; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        double e = std::exp(xv[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = base + k * sp.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
  });
}

Tensor softmax_last(const Tensor& x) { return softmax(x, x.rank() - 1); }

Tensor softmax_with_temperature(const Tensor& x, double tau, std::size_t axis) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("softmax temperature must be positive and finite");
  return softmax(scale(x, 1.0 / tau), axis);
}

Tensor softmax_with_temperature(const Tensor& x, const Tensor& tau, std::size_t axis) {
  if (tau.numel() != 1) throw DimensionError("temperature must be a single value, got " + shape_to_string(tau.shape()));
  if (!(tau.item() > 0.0) || !std::isfinite(tau.item())) {
    throw DomainError("softmax temperature must be positive and finite");
  }
  return softmax(mul(x, reciprocal(reshape(tau, {1}))), axis);
}

Tensor causal_softmax(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("causal_softmax needs [..., Lq, Lk], got " + shape_to_string(x.shape()));
  const std::size_t lq = x.dim(x.rank() - 2);
  const std::size_t lk = x.dim(x.rank() - 1);
  if (lk < lq) throw DimensionError("causal_softmax needs Lk >= Lq");
  const std::size_t shift = lk - lq;
  const std::size_t rows = x.numel() / lk;
  const auto xv = x.data();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = (r % lq) + shift + 1;
    const double* in = xv.data() + r * lk;
    double* o = out.data() + r * lk;
    double mx = *std::max_element(in, in + visible);
    double z = 0.0;
    for (std::size_t k = 0; k < visible; ++k) z += (o[k] = std::exp(in[k] - mx));
    for (std::size_t k = 0; k < visible; ++k) o[k] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, lq, lk, shift](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t visible = (r % lq) + shift + 1;
      const double* y = self.value.data() + r * lk;
      const double* g = self.grad.data() + r * lk;
      double dot = 0.0;
      for (std::size_t k = 0; k < visible; ++k) dot += g[k] * y[k];
      for (std::size_t k = 0; k < visible; ++k) gx[r * lk + k] += y[k] * (g[k] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm affine parameters must have " + std::to_string(d) + " entries, got " +
                         shape_to_string(gain.shape()) + " and " + shape_to_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       auto& nx = *self.inputs[0];
                       auto& ng = *self.inputs[1];
                       auto& nb = *self.inputs[2];
                       const auto& g = self.grad;
                       if (ng.requires_grad) {
                         auto& gg = ng.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                       }
                       if (nb.requires_grad) {
                         auto& gb = nb.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                       }
                       if (nx.requires_grad) {
                         auto& gx = nx.grad_buffer();
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * ng.value[j];
                             m1 += dh;
                             m2 += dh * xhat[r * d + j];
                           }
                           m1 *= inv_d;
                           m2 *= inv_d;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * ng.value[j];
                             gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                           }
                         }
                       }
                     });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError("concat_last leading shapes differ: " + shape_to_string(sa) + " vs " + shape_to_string(sb));
  }
  const std::size_t p = sa.back(), q = sb.back();
  const std::size_t rows = a.numel() / p;
  Shape out_shape = sa;
  out_shape.back() = p + q;
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(bv.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b}, [rows, p, q](Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += self.grad[r * (p + q) + j];
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += self.grad[r * (p + q) + p + j];
    }
  });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t w = a.dim(a.rank() - 1);
  if (count == 0 || begin + count > w) {
    throw DimensionError("slice_last [" + std::to_string(begin) + ", +" + std::to_string(count) + ") outside " +
                         shape_to_string(a.shape()));
  }
  const std::size_t rows = a.numel() / w;
  Shape out_shape = a.shape();
  out_shape.back() = count;
  const auto av = a.data();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * w + begin, count, out.data() + r * count);
  return make_result(std::move(out_shape), std::move(out), {a}, [rows, w, begin, count](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) ga[r * w + begin + j] += self.grad[r * count + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of an empty list");
  const Shape& first = parts[0].shape();
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& t : parts) {
    const auto& s = t.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat_rows trailing shapes differ: " + shape_to_string(first) + " vs " +
                           shape_to_string(s));
    }
    rows += s[0];
    sizes.push_back(t.numel());
  }
  Shape out_shape = first;
  out_shape[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(out_shape));
  for (const auto& t : parts) {
    auto d = t.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), inputs, [sizes = std::move(sizes)](Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      auto& n = *self.inputs[i];
      if (n.requires_grad) {
        auto& g = n.grad_buffer();
        for (std::size_t j = 0; j < sizes[i]; ++j) g[j] += self.grad[off + j];
      }
      off += sizes[i];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t r = a.dim(0);
  if (count == 0 || begin + count > r) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") outside " +
                         shape_to_string(a.shape()));
  }
  const std::size_t inner = a.numel() / r;
  Shape out_shape = a.shape();
  out_shape[0] = count;
  const auto av = a.data();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                          av.begin() + static_cast<std::ptrdiff_t>((begin + count) * inner));
  return make_result(std::move(out_shape), std::move(out), {a}, [inner, begin](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t j = 0; j < self.grad.size(); ++j) ga[begin * inner + j] += self.grad[j];
  });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack of an empty list");
  const Shape inner = parts[0].shape();
  std::vector<Tensor> rows;
  rows.reserve(parts.size());
  Shape one = inner;
  one.insert(one.begin(), 1);
  for (const auto& t : parts) {
    if (t.shape() != inner) {
      throw DimensionError("stack shapes differ: " + shape_to_string(inner) + " vs " + shape_to_string(t.shape()));
    }
    rows.push_back(reshape(t, one));
  }
  return concat_rows(rows);
}

Tensor select(const Tensor& a, std::size_t index) {
  if (a.rank() < 2) throw DimensionError("select needs rank >= 2, got " + shape_to_string(a.shape()));
  Shape rest(a.shape().begin() + 1, a.shape().end());
  return reshape(slice_rows(a, index, 1), rest);
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be [V x D]");
  if (ids.empty()) throw DimensionError("embedding lookup of an empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  const auto tv = table.data();
  std::vector<double> out(ids.size() * d);
  std::vector<int> keep(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(v));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table}, [keep = std::move(keep), d](Node& self) {
    auto& gt = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < keep.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(keep[i]) * d + j] += self.grad[i * d + j];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy needs [B x K] logits, got " + shape_to_string(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (targets.size() != b) throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(b) + " rows");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw IndexError("target class " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto lv = logits.data();
  std::vector<double> probs(b * k);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = lv.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (probs[r * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  std::vector<int> keep(targets.begin(), targets.end());
  return make_result({1}, {total / static_cast<double>(b)}, {logits},
                     [probs = std::move(probs), keep = std::move(keep), b, k](Node& self) {
                       auto& gl = self.inputs[0]->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(b);
                       for (std::size_t r = 0; r < b; ++r)
                         for (std::size_t j = 0; j < k; ++j) {
                           double p = probs[r * k + j] - (static_cast<std::size_t>(keep[r]) == j ? 1.0 : 0.0);
                           gl[r * k + j] += s * p;
                         }
                     });
}

}  // namespace manager
