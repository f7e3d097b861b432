#include "apricot/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#ifdef APRICOT_USE_BLAS
#include <cblas.h>
#endif

namespace apricot::ndgrad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                              shape_string(b));
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                shape_string(x.shape()));
  }
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Broadcast kind for binary elementwise ops.
enum class Broadcast { kSame, kRow };

Broadcast broadcast_kind(const char* op, const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return Broadcast::kSame;
  if (sb.size() == 1 && !sa.empty() && sa.back() == sb[0]) return Broadcast::kRow;
  shape_error(op, sa, sb);
}

// Elementwise unary op from value/derivative functors. The derivative sees
// the input and the output values.
template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi, deriv](Tape& t, std::size_t self) {
    Array* gx = t.accumulate_target(xi);
    if (gx == nullptr) return;
    const Array& g = t.grad(self);
    const Array& in = t.value(xi);
    const Array& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * deriv(in[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) shape_error("matmul", av.shape(), bv.shape());
  Array out(Shape{m, n});
#ifdef APRICOT_USE_BLAS
  if (m && n && k)
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, av.data(), int(k),
                bv.data(), int(n), 0.0, out.data(), int(n));
#else
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = av.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = arow[p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
#endif
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& av = t.value(ai);
    const Array& bv = t.value(bi);
#ifdef APRICOT_USE_BLAS
    if (!m || !n || !k) return;
    if (Array* ga = t.accumulate_target(ai))  // ga += g b^T
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(k), int(n), 1.0, g.data(), int(n), bv.data(),
                  int(n), 1.0, ga->data(), int(k));
    if (Array* gb = t.accumulate_target(bi))  // gb += a^T g
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(k), int(n), int(m), 1.0, av.data(), int(k), g.data(),
                  int(n), 1.0, gb->data(), int(n));
#else
    if (Array* ga = t.accumulate_target(ai)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        double* garow = ga->data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bv.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          garow[p] += acc;
        }
      }
    }
    if (Array* gb = t.accumulate_target(bi)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        const double* arow = av.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = arow[p];
          if (s == 0.0) continue;
          double* gbrow = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
#endif
  });
}

Var add(Var a, Var b) {
  const Broadcast kind = broadcast_kind("add", a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out = av;
  const std::size_t n = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += kind == Broadcast::kSame ? bv[i] : bv[i % n];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi, kind, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (Array* ga = t.accumulate_target(ai))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Array* gb = t.accumulate_target(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[kind == Broadcast::kSame ? i : i % n] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    if (Array* ga = t.accumulate_target(ai))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Array* gb = t.accumulate_target(bi))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  const Broadcast kind = broadcast_kind("mul", a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t n = bv.size();
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * (kind == Broadcast::kSame ? bv[i] : bv[i % n]);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi, kind, n](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& av = t.value(ai);
    const Array& bv = t.value(bi);
    if (Array* ga = t.accumulate_target(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (kind == Broadcast::kSame ? bv[i] : bv[i % n]);
    }
    if (Array* gb = t.accumulate_target(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[kind == Broadcast::kSame ? i : i % n] += g[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var sigmoid(Var x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var x) {
  return unary(
      x, [](double v) { return v * stable_sigmoid(v); },
      [](double v, double) {
        const double s = stable_sigmoid(v);
        return s + v * s * (1.0 - s);
      });
}

Var softplus(Var x) {
  return unary(x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Var conv1d(Var x, Var weight, Var bias) {
  require_rank("conv1d", x, 2);
  require_rank("conv1d", weight, 3);
  require_rank("conv1d", bias, 1);
  const Array& xv = x.value();
  const Array& wv = weight.value();
  const Array& bv = bias.value();
  const std::size_t len = xv.dim(0), cin = xv.dim(1);
  const std::size_t kw = wv.dim(0), cout = wv.dim(2);
  if (kw == 0 || wv.dim(1) != cin) shape_error("conv1d", xv.shape(), wv.shape());
  if (bv.dim(0) != cout) shape_error("conv1d", wv.shape(), bv.shape());
  Array out(Shape{len, cout});
  for (std::size_t t = 0; t < len; ++t) {
    double* orow = out.data() + t * cout;
    for (std::size_t o = 0; o < cout; ++o) orow[o] = bv[o];
    for (std::size_t j = 0; j < kw; ++j) {
      if (t + j + 1 < kw) continue;
      const std::size_t s = t + j + 1 - kw;
      for (std::size_t c = 0; c < cin; ++c) {
        const double xs = xv[s * cin + c];
        const double* wrow = wv.data() + (j * cin + c) * cout;
        for (std::size_t o = 0; o < cout; ++o) orow[o] += xs * wrow[o];
      }
    }
  }
  const std::size_t xi = x.id(), wi = weight.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias}, [=](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& xv = t.value(xi);
    const Array& wv = t.value(wi);
    Array* gx = t.accumulate_target(xi);
    Array* gw = t.accumulate_target(wi);
    if (Array* gb = t.accumulate_target(bi)) {
      for (std::size_t tt = 0; tt < len; ++tt)
        for (std::size_t o = 0; o < cout; ++o) (*gb)[o] += g[tt * cout + o];
    }
    if (gx == nullptr && gw == nullptr) return;
    for (std::size_t tt = 0; tt < len; ++tt) {
      const double* grow = g.data() + tt * cout;
      for (std::size_t j = 0; j < kw; ++j) {
        if (tt + j + 1 < kw) continue;
        const std::size_t s = tt + j + 1 - kw;
        for (std::size_t c = 0; c < cin; ++c) {
          const std::size_t wbase = (j * cin + c) * cout;
          if (gx) {
            double acc = 0.0;
            for (std::size_t o = 0; o < cout; ++o) acc += grow[o] * wv[wbase + o];
            (*gx)[s * cin + c] += acc;
          }
          if (gw) {
            const double xs = xv[s * cin + c];
            for (std::size_t o = 0; o < cout; ++o) (*gw)[wbase + o] += xs * grow[o];
          }
        }
      }
    }
  });
}

Var depthwise_conv1d(Var x, Var weight, Var bias) {
  require_rank("depthwise_conv1d", x, 2);
  require_rank("depthwise_conv1d", weight, 2);
  require_rank("depthwise_conv1d", bias, 1);
  const Array& xv = x.value();
  const Array& wv = weight.value();
  const Array& bv = bias.value();
  const std::size_t len = xv.dim(0), ch = xv.dim(1), kw = wv.dim(0);
  if (kw == 0 || wv.dim(1) != ch) shape_error("depthwise_conv1d", xv.shape(), wv.shape());
  if (bv.dim(0) != ch) shape_error("depthwise_conv1d", xv.shape(), bv.shape());
  Array out(Shape{len, ch});
  for (std::size_t t = 0; t < len; ++t) {
    double* orow = out.data() + t * ch;
    for (std::size_t c = 0; c < ch; ++c) orow[c] = bv[c];
    for (std::size_t j = 0; j < kw; ++j) {
      if (t + j + 1 < kw) continue;
      const double* xrow = xv.data() + (t + j + 1 - kw) * ch;
      const double* wrow = wv.data() + j * ch;
      for (std::size_t c = 0; c < ch; ++c) orow[c] += xrow[c] * wrow[c];
    }
  }
  const std::size_t xi = x.id(), wi = weight.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias}, [=](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& xv = t.value(xi);
    const Array& wv = t.value(wi);
    Array* gx = t.accumulate_target(xi);
    Array* gw = t.accumulate_target(wi);
    Array* gb = t.accumulate_target(bi);
    for (std::size_t tt = 0; tt < len; ++tt) {
      const double* grow = g.data() + tt * ch;
      if (gb)
        for (std::size_t c = 0; c < ch; ++c) (*gb)[c] += grow[c];
      for (std::size_t j = 0; j < kw; ++j) {
        if (tt + j + 1 < kw) continue;
        const std::size_t s = tt + j + 1 - kw;
        for (std::size_t c = 0; c < ch; ++c) {
          if (gx) (*gx)[s * ch + c] += grow[c] * wv[j * ch + c];
          if (gw) (*gw)[j * ch + c] += grow[c] * xv[s * ch + c];
        }
      }
    }
  });
}

Var embedding(Var table, std::span<const int> indices) {
  require_rank("embedding", table, 2);
  const Array& tv = table.value();
  const std::size_t rows = tv.dim(0), width = tv.dim(1);
  Array out(Shape{indices.size(), width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows) {
      throw std::invalid_argument("embedding: index " + std::to_string(idx) + " outside table of shape " +
                                  shape_string(tv.shape()));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(idx) * width, width, out.data() + i * width);
  }
  const std::size_t ti = table.id();
  std::vector<int> idx(indices.begin(), indices.end());
  return table.tape().record(std::move(out), {table}, [ti, width, idx = std::move(idx)](Tape& t, std::size_t self) {
    Array* gt = t.accumulate_target(ti);
    if (gt == nullptr) return;
    const Array& g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gt->data() + static_cast<std::size_t>(idx[i]) * width;
      const double* src = g.data() + i * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t rank = first.size();
  if (rank < 1 || rank > 2 || axis >= rank) {
    throw std::invalid_argument("concat: unsupported axis " + std::to_string(axis) + " for shape " +
                                shape_string(first));
  }
  // View every part as [outer, inner_p] where the concat happens on inner.
  const std::size_t outer = axis == 0 ? 1 : first[0];
  std::vector<std::size_t> inner;
  std::size_t total_inner = 0;
  std::size_t total_axis = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != rank) shape_error("concat", first, s);
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && s[d] != first[d]) shape_error("concat", first, s);
    inner.push_back(p.value().size() / std::max<std::size_t>(outer, 1));
    total_inner += inner.back();
    total_axis += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  Array out(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Array& v = parts[pi].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * inner[pi], inner[pi], out.data() + o * total_inner + offset);
    offset += inner[pi];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts, [ids, inner, outer, total_inner](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      if (Array* gp = t.accumulate_target(ids[pi])) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * total_inner + offset;
          double* dst = gp->data() + o * inner[pi];
          for (std::size_t i = 0; i < inner[pi]; ++i) dst[i] += src[i];
        }
      }
      offset += inner[pi];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (s.empty() || s.size() > 2 || axis >= s.size() || start + length > s[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") on axis " + std::to_string(axis) + " outside shape " + shape_string(s));
  }
  const std::size_t outer = axis == 0 ? 1 : s[0];
  const std::size_t row = x.value().size() / std::max<std::size_t>(outer, 1);
  const std::size_t inner_unit = axis == 0 && s.size() == 2 ? s[1] : 1;
  const std::size_t off = start * inner_unit;
  const std::size_t cnt = length * inner_unit;
  Shape out_shape = s;
  out_shape[axis] = length;
  Array out(out_shape);
  const Array& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * row + off, cnt, out.data() + o * cnt);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    Array* gx = t.accumulate_target(xi);
    if (gx == nullptr) return;
    const Array& g = t.grad(self);
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = gx->data() + o * row + off;
      const double* src = g.data() + o * cnt;
      for (std::size_t i = 0; i < cnt; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    Array* gx = t.accumulate_target(xi);
    if (gx == nullptr) return;
    const Array& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

namespace {

Var reduce_axis(Var x, std::size_t axis, bool average, const char* op) {
  require_rank(op, x, 2);
  if (axis > 1) throw std::invalid_argument(std::string(op) + ": axis out of range for " + shape_string(x.shape()));
  const Array& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  const std::size_t count = axis == 0 ? rows : cols;
  const double factor = average ? (count == 0 ? 0.0 : 1.0 / static_cast<double>(count)) : 1.0;
  Array out(Shape{axis == 0 ? cols : rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += xv[r * cols + c];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    Array* gx = t.accumulate_target(xi);
    if (gx == nullptr) return;
    const Array& g = t.grad(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += factor * g[axis == 0 ? c : r];
  });
}

}  // namespace

Var sum(Var x, std::size_t axis) { return reduce_axis(x, axis, false, "sum"); }
Var mean(Var x, std::size_t axis) { return reduce_axis(x, axis, true, "mean"); }

Var sum_all(Var x) {
  const Array& xv = x.value();
  const double total = std::accumulate(xv.values().begin(), xv.values().end(), 0.0);
  const std::size_t xi = x.id();
  return x.tape().record(Array::scalar(total), {x}, [xi](Tape& t, std::size_t self) {
    Array* gx = t.accumulate_target(xi);
    if (gx == nullptr) return;
    const double g = t.grad(self)[0];
    for (double& v : gx->values()) v += g;
  });
}

Var topk_select(Var x, std::size_t k, std::size_t valid_rows) {
  require_rank("topk_select", x, 2);
  if (k == 0) throw std::invalid_argument("topk_select: k must be >= 1");
  const Array& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (valid_rows > rows) {
    throw std::invalid_argument("topk_select: " + std::to_string(valid_rows) + " valid rows exceed shape " +
                                shape_string(xv.shape()));
  }
  const std::size_t kk = std::min(k, valid_rows);
  Array out(Shape{kk, cols});
  auto picked = std::make_shared<std::vector<std::size_t>>(kk * cols);
  std::vector<std::size_t> order(valid_rows);
  for (std::size_t c = 0; c < cols; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double va = xv[a * cols + c], vb = xv[b * cols + c];
                        return va > vb || (va == vb && a < b);
                      });
    for (std::size_t r = 0; r < kk; ++r) {
      (*picked)[r * cols + c] = order[r];
      out[r * cols + c] = xv[order[r] * cols + c];
    }
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi, picked, kk, cols](Tape& t, std::size_t self) {
    Array* gx = t.accumulate_target(xi);
    if (gx == nullptr) return;
    const Array& g = t.grad(self);
    for (std::size_t r = 0; r < kk; ++r)
      for (std::size_t c = 0; c < cols; ++c) (*gx)[(*picked)[r * cols + c] * cols + c] += g[r * cols + c];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_rank("layer_norm", x, 2);
  const Array& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (gain.shape() != Shape{cols}) shape_error("layer_norm", xv.shape(), gain.shape());
  if (bias.shape() != Shape{cols}) shape_error("layer_norm", xv.shape(), bias.shape());
  const Array& gv = gain.value();
  const Array& bv = bias.value();
  auto normed = std::make_shared<Array>(Shape{rows, cols});
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Array out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (xr[c] - mu) * is;
      normed->at(r, c) = xh;
      out[r * cols + c] = xh * gv[c] + bv[c];
    }
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, gain, bias}, [=](Tape& t, std::size_t self) {
    const Array& g = t.grad(self);
    const Array& gv = t.value(gi);
    Array* gx = t.accumulate_target(xi);
    Array* gg = t.accumulate_target(gi);
    Array* gb = t.accumulate_target(bi);
    std::vector<double> gxh(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_g = 0.0, mean_gx = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double gy = g[r * cols + c];
        const double xh = normed->at(r, c);
        if (gg) (*gg)[c] += gy * xh;
        if (gb) (*gb)[c] += gy;
        gxh[c] = gy * gv[c];
        mean_g += gxh[c];
        mean_gx += gxh[c] * xh;
      }
      if (!gx) continue;
      mean_g /= static_cast<double>(cols);
      mean_gx /= static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c)
        (*gx)[r * cols + c] += (*inv_std)[r] * (gxh[c] - mean_g - normed->at(r, c) * mean_gx);
    }
  });
}

Var bce_with_logits(Var logits, std::span<const double> targets, std::span<const double> weights) {
  const Array& z = logits.value();
  if (targets.size() != z.size() || weights.size() != z.size()) {
    throw std::invalid_argument("bce_with_logits: logits of shape " + shape_string(z.shape()) + " vs " +
                                std::to_string(targets.size()) + " targets and " + std::to_string(weights.size()) +
                                " weights");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (weights[i] == 0.0) continue;
    loss += weights[i] * (stable_softplus(z[i]) - targets[i] * z[i]);
  }
  const std::size_t zi = logits.id();
  std::vector<double> y(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return logits.tape().record(Array::scalar(loss), {logits}, [zi, y, w](Tape& t, std::size_t self) {
    Array* gz = t.accumulate_target(zi);
    if (gz == nullptr) return;
    const double g = t.grad(self)[0];
    const Array& z = t.value(zi);
    for (std::size_t i = 0; i < z.size(); ++i) (*gz)[i] += g * w[i] * (stable_sigmoid(z[i]) - y[i]);
  });
}

double grad_check(const OpBuilder& op, const std::vector<Array>& inputs, double h, unsigned long long seed) {
  Tape tape;
  std::vector<Var> vars;
  for (const Array& a : inputs) vars.push_back(tape.parameter(a));
  Var out = op(tape, vars);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Array projection(out.shape());
  for (double& v : projection.values()) v = unif(rng);
  tape.backward(sum_all(mul(out, tape.constant(projection))));

  auto project = [&](const std::vector<Array>& args) {
    Tape probe;
    std::vector<Var> pv;
    for (const Array& a : args) pv.push_back(probe.constant(a));
    const Array& y = op(probe, pv).value();
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * projection[i];
    return acc;
  };

  double worst = 0.0;
  std::vector<Array> work = inputs;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Array analytic = tape.gradient(vars[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double orig = work[a][i];
      work[a][i] = orig + h;
      const double up = project(work);
      work[a][i] = orig - h;
      const double down = project(work);
      work[a][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace apricot::ndgrad
