#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "uformer/graph.hpp"
#include "uformer/rng.hpp"

namespace uformer::ops {

// ---------------------------------------------------------------------------
// Generic elementwise machinery
// ---------------------------------------------------------------------------

template <std::floating_point T>
Value<T> constant(Graph<T>& g, Tensor<T> t, std::string label = "const") {
  return g.leaf(std::move(t), false, std::move(label));
}

// Elementwise unary op. `f` maps x to y, `df` maps (x, y) to dy/dx.
template <std::floating_point T, class F, class DF>
Value<T> unary(Value<T> x, F f, DF df, const char* name) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  Tensor<T> y(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i)
    y[i] = f(xv[i]);
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    std::int64_t xid = x.id;
    bwd = [&g, xid, df, out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& yv = g.node(out_id).value;
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t i = 0; i < xv.numel(); ++i)
        gx[i] += gy[i] * df(xv[i], yv[i]);
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), name);
}

// Elementwise binary op with right-aligned broadcasting. `da` and `db` give
// the partials with respect to each operand; broadcast axes accumulate.
template <std::floating_point T, class F, class DA, class DB>
Value<T> binary(Value<T> a, Value<T> b, F f, DA da, DB db, const char* name) {
  Graph<T>& g = *a.graph;
  require<ShapeError>(b.graph == &g, "binary op across graphs");
  const Tensor<T>&av = a.val();
  const Tensor<T>& bv = b.val();
  Shape out_shape = broadcast_shapes(av.shape(), bv.shape());
  Tensor<T> y(out_shape);
  for_each_broadcast(out_shape, av.shape(), bv.shape(),
                     [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                       y[o] = f(av[ia], bv[ib]);
                     });
  const bool track = g.tracks({a, b});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, aid = a.id, bid = b.id, da, db, out_id = g.size(),
           out_shape]() {
      const Tensor<T>& av = g.node(aid).value;
      const Tensor<T>& bv = g.node(bid).value;
      const Tensor<T>& gy = g.grad(out_id);
      const bool na = g.node(aid).needs_grad;
      const bool nb = g.node(bid).needs_grad;
      Tensor<T>* ga = na ? &g.grad(aid) : nullptr;
      Tensor<T>* gb = nb ? &g.grad(bid) : nullptr;
      for_each_broadcast(out_shape, av.shape(), bv.shape(),
                         [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                           if (ga) (*ga)[ia] += gy[o] * da(av[ia], bv[ib]);
                           if (gb) (*gb)[ib] += gy[o] * db(av[ia], bv[ib]);
                         });
    };
  }
  return g.emplace(std::move(y), track, {a.id, b.id}, std::move(bwd), name);
}

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

template <std::floating_point T>
Value<T> add(Value<T> a, Value<T> b) {
  return binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); }, "add");
}

template <std::floating_point T>
Value<T> sub(Value<T> a, Value<T> b) {
  return binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); }, "sub");
}

template <std::floating_point T>
Value<T> mul(Value<T> a, Value<T> b) {
  return binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; }, "mul");
}

template <std::floating_point T>
Value<T> div(Value<T> a, Value<T> b) {
  return binary(
      a, b, [](T x, T y) { return x / y; },
      [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); }, "div");
}

// y = c * x for a plain scalar c.
template <std::floating_point T>
Value<T> scale(Value<T> x, T c) {
  return unary(
      x, [c](T v) { return c * v; }, [c](T, T) { return c; }, "scale");
}

template <std::floating_point T>
Value<T> shift(Value<T> x, T c) {
  return unary(
      x, [c](T v) { return v + c; }, [](T, T) { return T(1); }, "shift");
}

template <std::floating_point T>
Value<T> neg(Value<T> x) {
  return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// Nonlinearities and pointwise math
// ---------------------------------------------------------------------------

template <std::floating_point T>
Value<T> sigmoid(Value<T> x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <std::floating_point T>
Value<T> tanh(Value<T> x) {
  return unary(
      x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; }, "tanh");
}

// swish(x) = x * sigmoid(x)
template <std::floating_point T>
Value<T> swish(Value<T> x) {
  return unary(
      x,
      [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T y) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s + y * (T(1) - s);
      },
      "swish");
}

template <std::floating_point T>
Value<T> exp(Value<T> x) {
  return unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; }, "exp");
}

template <std::floating_point T>
Value<T> log(Value<T> x) {
  return unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; },
      "log");
}

template <std::floating_point T>
Value<T> sqrt(Value<T> x) {
  return unary(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) {
        // Guarded at the origin: sqrt has an infinite one-sided derivative
        // there, which would poison gradients with inf * 0.
        const T d = T(2) * y;
        return d > T(1e-30) ? T(1) / d : T(0);
      },
      "sqrt");
}

template <std::floating_point T>
Value<T> square(Value<T> x) {
  return unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; }, "square");
}

template <std::floating_point T>
Value<T> abs(Value<T> x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); },
      "abs");
}

template <std::floating_point T>
Value<T> cos(Value<T> x) {
  return unary(
      x, [](T v) { return std::cos(v); },
      [](T v, T) { return -std::sin(v); }, "cos");
}

template <std::floating_point T>
Value<T> sin(Value<T> x) {
  return unary(
      x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); },
      "sin");
}

// Four-quadrant arctangent of im/re, with atan2(0, 0) defined as 0 and a
// zero (sub)gradient at the origin.
template <std::floating_point T>
Value<T> atan2(Value<T> im, Value<T> re) {
  return binary(
      im, re, [](T y, T x) { return (y == T(0) && x == T(0)) ? T(0) : std::atan2(y, x); },
      [](T y, T x) {
        const T d = x * x + y * y;
        return d > T(0) ? x / d : T(0);
      },
      [](T y, T x) {
        const T d = x * x + y * y;
        return d > T(0) ? -y / d : T(0);
      },
      "atan2");
}

// PReLU with one slope per channel (axis 1).
template <std::floating_point T>
Value<T> prelu(Value<T> x, Value<T> alpha) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  const Tensor<T>& av = alpha.val();
  require<ShapeError>(xv.rank() >= 2, "prelu input must have a channel axis");
  const std::int64_t C = xv.shape()[1];
  require<ShapeError>(av.rank() == 1 && av.shape()[0] == C,
                      "prelu slope shape " + shape_str(av.shape()) +
                          " does not match channels " + std::to_string(C));
  const std::int64_t B = xv.shape()[0];
  std::int64_t S = 1;
  for (std::size_t i = 2; i < xv.rank(); ++i) S *= xv.shape()[i];

  Tensor<T> y(xv.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const T a = av[c];
      const std::int64_t base = (b * C + c) * S;
      for (std::int64_t s = 0; s < S; ++s) {
        const T v = xv[base + s];
        y[base + s] = v > T(0) ? v : a * v;
      }
    }
  const bool track = g.tracks({x, alpha});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, aid = alpha.id, B, C, S, out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& av = g.node(aid).value;
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>* gx = g.node(xid).needs_grad ? &g.grad(xid) : nullptr;
      Tensor<T>* ga = g.node(aid).needs_grad ? &g.grad(aid) : nullptr;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const T a = av[c];
          const std::int64_t base = (b * C + c) * S;
          for (std::int64_t s = 0; s < S; ++s) {
            const T v = xv[base + s];
            const T go = gy[base + s];
            if (gx) (*gx)[base + s] += v > T(0) ? go : a * go;
            if (ga && v <= T(0)) (*ga)[c] += go * v;
          }
        }
    };
  }
  return g.emplace(std::move(y), track, {x.id, alpha.id}, std::move(bwd),
                   "prelu");
}

// ---------------------------------------------------------------------------
// Softmax and dropout
// ---------------------------------------------------------------------------

namespace detail {
inline void axis_geometry(const Shape& s, std::size_t axis, std::int64_t& outer,
                          std::int64_t& m, std::int64_t& inner) {
  require<ShapeError>(axis < s.size(), "axis out of range for shape " +
                                           shape_str(s));
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  m = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <std::floating_point T>
Value<T> softmax(Value<T> x, std::size_t axis) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  std::int64_t outer, m, inner;
  detail::axis_geometry(xv.shape(), axis, outer, m, inner);

  Tensor<T> y(xv.shape());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * m * inner + in;
      T mx = xv[base];
      for (std::int64_t k = 1; k < m; ++k)
        mx = std::max(mx, xv[base + k * inner]);
      double sum = 0.0;
      for (std::int64_t k = 0; k < m; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        y[base + k * inner] = e;
        sum += static_cast<double>(e);
      }
      const T norm = static_cast<T>(1.0 / sum);
      for (std::int64_t k = 0; k < m; ++k) y[base + k * inner] *= norm;
    }
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, outer, m, inner, out_id = g.size()]() {
      const Tensor<T>& yv = g.node(out_id).value;
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * m * inner + in;
          double dot = 0.0;
          for (std::int64_t k = 0; k < m; ++k)
            dot += static_cast<double>(gy[base + k * inner]) *
                   static_cast<double>(yv[base + k * inner]);
          for (std::int64_t k = 0; k < m; ++k) {
            const std::int64_t i = base + k * inner;
            gx[i] += yv[i] * (gy[i] - static_cast<T>(dot));
          }
        }
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "softmax");
}

// Inverted dropout: kept elements are scaled by 1/(1-p) so eval needs no
// rescale. p = 0 is an exact no-op that adds no tape node.
template <std::floating_point T>
Value<T> dropout(Value<T> x, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(xv.numel()));
  const T inv = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> y(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    keep[static_cast<std::size_t>(i)] = rng.uniform() >= p ? 1 : 0;
    y[i] = keep[static_cast<std::size_t>(i)] ? xv[i] * inv : T(0);
  }
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, keep = std::move(keep), inv, out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t i = 0; i < gy.numel(); ++i)
        if (keep[static_cast<std::size_t>(i)]) gx[i] += gy[i] * inv;
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "dropout");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <std::floating_point T>
Value<T> sum_all(Value<T> x) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  double acc = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i)
    acc += static_cast<double>(xv[i]);
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, out_id = g.size()]() {
      const T go = g.grad(out_id)[0];
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += go;
    };
  }
  return g.emplace(Tensor<T>::scalar(static_cast<T>(acc)), track, {x.id},
                   std::move(bwd), "sum_all");
}

template <std::floating_point T>
Value<T> mean_all(Value<T> x) {
  const std::int64_t n = x.val().numel();
  require<ShapeError>(n > 0, "mean of empty tensor");
  return scale(sum_all(x), static_cast<T>(1.0 / static_cast<double>(n)));
}

template <std::floating_point T>
Value<T> sum_axis(Value<T> x, std::size_t axis, bool keepdim = false) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  std::int64_t outer, m, inner;
  detail::axis_geometry(xv.shape(), axis, outer, m, inner);
  Shape out_shape = xv.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));

  Tensor<T> y(out_shape);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      double acc = 0.0;
      const std::int64_t base = o * m * inner + in;
      for (std::int64_t k = 0; k < m; ++k)
        acc += static_cast<double>(xv[base + k * inner]);
      y[o * inner + in] = static_cast<T>(acc);
    }
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, outer, m, inner, out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const T go = gy[o * inner + in];
          const std::int64_t base = o * m * inner + in;
          for (std::int64_t k = 0; k < m; ++k) gx[base + k * inner] += go;
        }
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "sum_axis");
}

template <std::floating_point T>
Value<T> mean_axis(Value<T> x, std::size_t axis, bool keepdim = false) {
  const std::int64_t m = x.val().shape()[axis];
  return scale(sum_axis(x, axis, keepdim),
               static_cast<T>(1.0 / static_cast<double>(m)));
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <std::floating_point T>
Value<T> reshape(Value<T> x, Shape new_shape) {
  Graph<T>& g = *x.graph;
  Tensor<T> y = x.val().reshaped(new_shape);
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "reshape");
}

template <std::floating_point T>
Value<T> permute(Value<T> x, std::vector<std::size_t> axes) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  const std::size_t r = xv.rank();
  require<ShapeError>(axes.size() == r, "permute axes rank mismatch");
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = xv.shape()[axes[i]];

  const auto xst = xv.strides();
  // Flat mapping out index -> in index, reused verbatim by the backward.
  std::vector<std::int64_t> map(static_cast<std::size_t>(xv.numel()));
  std::vector<std::int64_t> idx(r, 0);
  for (std::int64_t o = 0; o < xv.numel(); ++o) {
    std::int64_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * xst[axes[i]];
    map[static_cast<std::size_t>(o)] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> y(out_shape);
  for (std::int64_t o = 0; o < xv.numel(); ++o)
    y[o] = xv[map[static_cast<std::size_t>(o)]];
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, map = std::move(map), out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t o = 0; o < gy.numel(); ++o)
        gx[map[static_cast<std::size_t>(o)]] += gy[o];
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "permute");
}

template <std::floating_point T>
Value<T> slice(Value<T> x, std::size_t axis, std::int64_t start,
               std::int64_t len) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  std::int64_t outer, m, inner;
  detail::axis_geometry(xv.shape(), axis, outer, m, inner);
  require<ShapeError>(start >= 0 && len >= 0 && start + len <= m,
                      "slice [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") out of axis size " +
                          std::to_string(m));
  Shape out_shape = xv.shape();
  out_shape[axis] = len;
  Tensor<T> y(out_shape);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < len; ++k)
      for (std::int64_t in = 0; in < inner; ++in)
        y[(o * len + k) * inner + in] = xv[(o * m + start + k) * inner + in];
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, outer, m, inner, start, len, out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < len; ++k)
          for (std::int64_t in = 0; in < inner; ++in)
            gx[(o * m + start + k) * inner + in] +=
                gy[(o * len + k) * inner + in];
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "slice");
}

template <std::floating_point T>
Value<T> concat(const std::vector<Value<T>>& xs, std::size_t axis) {
  require<ShapeError>(!xs.empty(), "concat of zero tensors");
  Graph<T>& g = *xs[0].graph;
  const std::size_t r = xs[0].val().rank();
  std::int64_t total = 0;
  for (const auto& x : xs) {
    require<ShapeError>(x.val().rank() == r, "concat rank mismatch");
    for (std::size_t i = 0; i < r; ++i)
      if (i != axis)
        require<ShapeError>(x.val().shape()[i] == xs[0].val().shape()[i],
                            "concat shape mismatch at axis " +
                                std::to_string(i));
    total += x.val().shape()[axis];
  }
  Shape out_shape = xs[0].val().shape();
  out_shape[axis] = total;
  std::int64_t outer, m_out, inner;
  detail::axis_geometry(out_shape, axis, outer, m_out, inner);

  Tensor<T> y(out_shape);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const Tensor<T>& xv = x.val();
    const std::int64_t m = xv.shape()[axis];
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < m; ++k)
        std::memcpy(&y[(o * m_out + off + k) * inner],
                    &xv[(o * m + k) * inner],
                    static_cast<std::size_t>(inner) * sizeof(T));
    off += m;
  }
  bool track = false;
  std::vector<std::int64_t> parents;
  for (const auto& x : xs) {
    parents.push_back(x.id);
    track = track || g.tracks({x});
  }
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, parents, offsets, outer, m_out, inner, axis,
           out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      for (std::size_t p = 0; p < parents.size(); ++p) {
        if (!g.node(parents[p]).needs_grad) continue;
        Tensor<T>& gx = g.grad(parents[p]);
        const std::int64_t m = g.node(parents[p]).value.shape()[axis];
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t k = 0; k < m; ++k)
            for (std::int64_t in = 0; in < inner; ++in)
              gx[(o * m + k) * inner + in] +=
                  gy[(o * m_out + offsets[p] + k) * inner + in];
      }
    };
  }
  return g.emplace(std::move(y), track, std::move(parents), std::move(bwd),
                   "concat");
}

// Gathers a window of time frames around every position. Input [B, C, T, F]
// becomes [B, C, J, T, F] with y[..., j, t, :] = x[..., t + offsets[j], :];
// positions outside [0, T) read as zero. The backward scatter-adds only the
// in-range taps.
template <std::floating_point T>
Value<T> unfold_time(Value<T> x, const std::vector<std::int64_t>& offsets) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  require<ShapeError>(xv.rank() == 4, "unfold_time expects [B, C, T, F], got " +
                                          shape_str(xv.shape()));
  const std::int64_t B = xv.shape()[0], C = xv.shape()[1], Tn = xv.shape()[2],
                     F = xv.shape()[3];
  const std::int64_t J = static_cast<std::int64_t>(offsets.size());
  Tensor<T> y({B, C, J, Tn, F});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t j = 0; j < J; ++j)
        for (std::int64_t t = 0; t < Tn; ++t) {
          const std::int64_t src_t = t + offsets[static_cast<std::size_t>(j)];
          if (src_t < 0 || src_t >= Tn) continue;
          std::memcpy(&y[(((b * C + c) * J + j) * Tn + t) * F],
                      &xv[((b * C + c) * Tn + src_t) * F],
                      static_cast<std::size_t>(F) * sizeof(T));
        }
  const bool track = g.tracks({x});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, offsets, B, C, Tn, F, J, out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>& gx = g.grad(xid);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t j = 0; j < J; ++j)
            for (std::int64_t t = 0; t < Tn; ++t) {
              const std::int64_t src_t =
                  t + offsets[static_cast<std::size_t>(j)];
              if (src_t < 0 || src_t >= Tn) continue;
              const std::int64_t ybase = (((b * C + c) * J + j) * Tn + t) * F;
              const std::int64_t xbase = ((b * C + c) * Tn + src_t) * F;
              for (std::int64_t f = 0; f < F; ++f)
                gx[xbase + f] += gy[ybase + f];
            }
    };
  }
  return g.emplace(std::move(y), track, {x.id}, std::move(bwd), "unfold_time");
}

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

// Plain 2-D matrix product [m, k] x [k, n] -> [m, n], double accumulation.
template <std::floating_point T>
Value<T> matmul(Value<T> a, Value<T> b) {
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = a.val();
  const Tensor<T>& bv = b.val();
  require<ShapeError>(av.rank() == 2 && bv.rank() == 2,
                      "matmul expects rank-2 operands");
  const std::int64_t m = av.shape()[0], k = av.shape()[1];
  require<ShapeError>(bv.shape()[0] == k,
                      "matmul inner dimensions disagree: " +
                          shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const std::int64_t n = bv.shape()[1];
  Tensor<T> y({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(av[i * k + p]) *
               static_cast<double>(bv[p * n + j]);
      y[i * n + j] = static_cast<T>(acc);
    }
  const bool track = g.tracks({a, b});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, aid = a.id, bid = b.id, m, k, n, out_id = g.size()]() {
      const Tensor<T>& av = g.node(aid).value;
      const Tensor<T>& bv = g.node(bid).value;
      const Tensor<T>& gy = g.grad(out_id);
      if (g.node(aid).needs_grad) {
        Tensor<T>& ga = g.grad(aid);
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j)
              acc += static_cast<double>(gy[i * n + j]) *
                     static_cast<double>(bv[p * n + j]);
            ga[i * k + p] += static_cast<T>(acc);
          }
      }
      if (g.node(bid).needs_grad) {
        Tensor<T>& gb = g.grad(bid);
        for (std::int64_t p = 0; p < k; ++p)
          for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < m; ++i)
              acc += static_cast<double>(av[i * k + p]) *
                     static_cast<double>(gy[i * n + j]);
            gb[p * n + j] += static_cast<T>(acc);
          }
      }
    };
  }
  return g.emplace(std::move(y), track, {a.id, b.id}, std::move(bwd),
                   "matmul");
}

// Pointwise channel mixing: x [B, C, S...], w [Co, C], optional bias [Co]
// -> [B, Co, S...]. This is the 1x1 projection used throughout attention.
template <std::floating_point T>
Value<T> linear_channels(Value<T> x, Value<T> w, Value<T> bias = {}) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  const Tensor<T>& wv = w.val();
  require<ShapeError>(xv.rank() >= 2, "linear_channels input needs channels");
  require<ShapeError>(wv.rank() == 2, "linear_channels weight must be [Co, C]");
  const std::int64_t B = xv.shape()[0], C = xv.shape()[1];
  require<ShapeError>(wv.shape()[1] == C,
                      "weight " + shape_str(wv.shape()) +
                          " does not accept " + std::to_string(C) +
                          " channels");
  const std::int64_t Co = wv.shape()[0];
  std::int64_t S = 1;
  for (std::size_t i = 2; i < xv.rank(); ++i) S *= xv.shape()[i];
  const bool has_bias = bias.valid();
  if (has_bias)
    require<ShapeError>(bias.val().numel() == Co, "bias size mismatch");

  Shape out_shape = xv.shape();
  out_shape[1] = Co;
  Tensor<T> y(out_shape);
  const Tensor<T>* bv = has_bias ? &bias.val() : nullptr;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t co = 0; co < Co; ++co) {
      const T bias_v = bv ? (*bv)[co] : T(0);
      for (std::int64_t s = 0; s < S; ++s) {
        double acc = static_cast<double>(bias_v);
        for (std::int64_t c = 0; c < C; ++c)
          acc += static_cast<double>(wv[co * C + c]) *
                 static_cast<double>(xv[(b * C + c) * S + s]);
        y[(b * Co + co) * S + s] = static_cast<T>(acc);
      }
    }
  const bool track = has_bias ? g.tracks({x, w, bias}) : g.tracks({x, w});
  std::vector<std::int64_t> parents{x.id, w.id};
  if (has_bias) parents.push_back(bias.id);
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, wid = w.id, bid = has_bias ? bias.id : -1, B, C, Co,
           S, out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& wv = g.node(wid).value;
      const Tensor<T>& gy = g.grad(out_id);
      if (g.node(xid).needs_grad) {
        Tensor<T>& gx = g.grad(xid);
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t s = 0; s < S; ++s) {
              double acc = 0.0;
              for (std::int64_t co = 0; co < Co; ++co)
                acc += static_cast<double>(wv[co * C + c]) *
                       static_cast<double>(gy[(b * Co + co) * S + s]);
              gx[(b * C + c) * S + s] += static_cast<T>(acc);
            }
      }
      if (g.node(wid).needs_grad) {
        Tensor<T>& gw = g.grad(wid);
        for (std::int64_t co = 0; co < Co; ++co)
          for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < B; ++b)
              for (std::int64_t s = 0; s < S; ++s)
                acc += static_cast<double>(gy[(b * Co + co) * S + s]) *
                       static_cast<double>(xv[(b * C + c) * S + s]);
            gw[co * C + c] += static_cast<T>(acc);
          }
      }
      if (bid >= 0 && g.node(bid).needs_grad) {
        Tensor<T>& gb = g.grad(bid);
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            for (std::int64_t s = 0; s < S; ++s)
              acc += static_cast<double>(gy[(b * Co + co) * S + s]);
            gb[co] += static_cast<T>(acc);
          }
      }
    };
  }
  return g.emplace(std::move(y), track, std::move(parents), std::move(bwd),
                   "linear_channels");
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Training-mode batch norm over all axes except channels (axis 1). Batch
// mean and biased variance are written to the out parameters so the caller
// can maintain running statistics.
template <std::floating_point T>
Value<T> batchnorm_train(Value<T> x, Value<T> gamma, Value<T> beta, T eps,
                         Tensor<T>* batch_mean = nullptr,
                         Tensor<T>* batch_var = nullptr) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  require<ShapeError>(xv.rank() >= 2, "batchnorm input needs channels");
  const std::int64_t B = xv.shape()[0], C = xv.shape()[1];
  std::int64_t S = 1;
  for (std::size_t i = 2; i < xv.rank(); ++i) S *= xv.shape()[i];
  const std::int64_t N = B * S;
  require<ShapeError>(N > 0, "batchnorm over empty reduce set");
  require<ShapeError>(gamma.val().numel() == C && beta.val().numel() == C,
                      "batchnorm affine parameters must match channels");

  Tensor<T> mean({C}), var({C});
  for (std::int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t s = 0; s < S; ++s)
        acc += static_cast<double>(xv[(b * C + c) * S + s]);
    mean[c] = static_cast<T>(acc / static_cast<double>(N));
    double vacc = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t s = 0; s < S; ++s) {
        const double d =
            static_cast<double>(xv[(b * C + c) * S + s]) - mean[c];
        vacc += d * d;
      }
    var[c] = static_cast<T>(vacc / static_cast<double>(N));
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  const Tensor<T>& gv = gamma.val();
  const Tensor<T>& bev = beta.val();
  Tensor<T> y(xv.shape());
  Tensor<T> inv_std({C});
  for (std::int64_t c = 0; c < C; ++c)
    inv_std[c] = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps)));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < S; ++s) {
        const std::int64_t i = (b * C + c) * S + s;
        y[i] = gv[c] * (xv[i] - mean[c]) * inv_std[c] + bev[c];
      }
  const bool track = g.tracks({x, gamma, beta});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, gid = gamma.id, bid = beta.id, mean, inv_std, B, C,
           S, N, out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& gv = g.node(gid).value;
      const Tensor<T>& gy = g.grad(out_id);
      for (std::int64_t c = 0; c < C; ++c) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t s = 0; s < S; ++s) {
            const std::int64_t i = (b * C + c) * S + s;
            const double xhat =
                (static_cast<double>(xv[i]) - static_cast<double>(mean[c])) *
                static_cast<double>(inv_std[c]);
            sum_gy += static_cast<double>(gy[i]);
            sum_gy_xhat += static_cast<double>(gy[i]) * xhat;
          }
        if (g.node(gid).needs_grad)
          g.grad(gid)[c] += static_cast<T>(sum_gy_xhat);
        if (g.node(bid).needs_grad) g.grad(bid)[c] += static_cast<T>(sum_gy);
        if (g.node(xid).needs_grad) {
          Tensor<T>& gx = g.grad(xid);
          const double mg = sum_gy / static_cast<double>(N);
          const double mgx = sum_gy_xhat / static_cast<double>(N);
          const double gs = static_cast<double>(gv[c]) *
                            static_cast<double>(inv_std[c]);
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t s = 0; s < S; ++s) {
              const std::int64_t i = (b * C + c) * S + s;
              const double xhat =
                  (static_cast<double>(xv[i]) - static_cast<double>(mean[c])) *
                  static_cast<double>(inv_std[c]);
              gx[i] += static_cast<T>(
                  gs * (static_cast<double>(gy[i]) - mg - xhat * mgx));
            }
        }
      }
    };
  }
  return g.emplace(std::move(y), track, {x.id, gamma.id, beta.id},
                   std::move(bwd), "batchnorm");
}

// Inference-mode batch norm against frozen statistics.
template <std::floating_point T>
Value<T> batchnorm_eval(Value<T> x, Value<T> gamma, Value<T> beta,
                        const Tensor<T>& mean, const Tensor<T>& var, T eps) {
  Graph<T>& g = *x.graph;
  const Tensor<T>& xv = x.val();
  const std::int64_t B = xv.shape()[0], C = xv.shape()[1];
  std::int64_t S = 1;
  for (std::size_t i = 2; i < xv.rank(); ++i) S *= xv.shape()[i];
  require<ShapeError>(mean.numel() == C && var.numel() == C,
                      "batchnorm running stats must match channels");

  const Tensor<T>& gv = gamma.val();
  const Tensor<T>& bev = beta.val();
  Tensor<T> inv_std({C});
  for (std::int64_t c = 0; c < C; ++c)
    inv_std[c] = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps)));
  Tensor<T> y(xv.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < S; ++s) {
        const std::int64_t i = (b * C + c) * S + s;
        y[i] = gv[c] * (xv[i] - mean[c]) * inv_std[c] + bev[c];
      }
  const bool track = g.tracks({x, gamma, beta});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, gid = gamma.id, bid = beta.id, mean, inv_std, B, C,
           S, out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& gv = g.node(gid).value;
      const Tensor<T>& gy = g.grad(out_id);
      for (std::int64_t c = 0; c < C; ++c) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t s = 0; s < S; ++s) {
            const std::int64_t i = (b * C + c) * S + s;
            const double xhat =
                (static_cast<double>(xv[i]) - static_cast<double>(mean[c])) *
                static_cast<double>(inv_std[c]);
            sum_gy += static_cast<double>(gy[i]);
            sum_gy_xhat += static_cast<double>(gy[i]) * xhat;
            if (g.node(xid).needs_grad)
              g.grad(xid)[i] += gy[i] * gv[c] * inv_std[c];
          }
        if (g.node(gid).needs_grad)
          g.grad(gid)[c] += static_cast<T>(sum_gy_xhat);
        if (g.node(bid).needs_grad) g.grad(bid)[c] += static_cast<T>(sum_gy);
      }
    };
  }
  return g.emplace(std::move(y), track, {x.id, gamma.id, beta.id},
                   std::move(bwd), "batchnorm_eval");
}

}  // namespace uformer::ops
