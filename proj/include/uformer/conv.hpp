#pragma once

#include <functional>
#include <string>

#include "uformer/graph.hpp"

namespace uformer {

// Geometry of a 2-D convolution over [B, C, T, F] maps. Padding is given per
// edge because the frequency axis pads asymmetrically and causal layers pad
// time entirely on the left.
struct ConvGeom {
  std::int64_t stride_t = 1, stride_f = 1;
  std::int64_t dil_t = 1, dil_f = 1;
  std::int64_t pad_t0 = 0, pad_t1 = 0;  // before, after
  std::int64_t pad_f0 = 0, pad_f1 = 0;
  std::int64_t groups = 1;
};

inline std::int64_t conv_out_size(std::int64_t in, std::int64_t k,
                                  std::int64_t stride, std::int64_t dil,
                                  std::int64_t pad0, std::int64_t pad1) {
  const std::int64_t span = in + pad0 + pad1 - dil * (k - 1) - 1;
  require<ShapeError>(span >= 0, "convolution window exceeds padded input");
  return span / stride + 1;
}

inline std::int64_t convt_out_size(std::int64_t in, std::int64_t k,
                                   std::int64_t stride, std::int64_t dil,
                                   std::int64_t pad0, std::int64_t pad1) {
  return (in - 1) * stride + dil * (k - 1) + 1 - pad0 - pad1;
}

namespace conv_detail {

template <std::floating_point T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w,
                     const ConvGeom& geom) {
  require<ShapeError>(x.rank() == 4, "conv input must be [B, C, T, F], got " +
                                         shape_str(x.shape()));
  require<ShapeError>(w.rank() == 4, "conv weight must be rank 4, got " +
                                         shape_str(w.shape()));
  require<ShapeError>(geom.groups >= 1 && x.shape()[1] % geom.groups == 0,
                      "channels not divisible by groups");
}

// Direct (unoptimized) convolution. Everything in this project is small
// enough that clarity wins over blocking, and the double accumulator keeps
// float32 runs well conditioned.
template <std::floating_point T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const T* bias,
                     const ConvGeom& geom) {
  check_conv_args(x, w, geom);
  const std::int64_t B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2],
                     Fi = x.shape()[3];
  const std::int64_t Co = w.shape()[0], Cg = w.shape()[1], kT = w.shape()[2],
                     kF = w.shape()[3];
  require<ShapeError>(Cg * geom.groups == Ci,
                      "weight " + shape_str(w.shape()) + " does not accept " +
                          std::to_string(Ci) + " input channels with " +
                          std::to_string(geom.groups) + " groups");
  require<ShapeError>(Co % geom.groups == 0, "out channels vs groups");
  const std::int64_t To =
      conv_out_size(Ti, kT, geom.stride_t, geom.dil_t, geom.pad_t0, geom.pad_t1);
  const std::int64_t Fo =
      conv_out_size(Fi, kF, geom.stride_f, geom.dil_f, geom.pad_f0, geom.pad_f1);
  const std::int64_t co_per_g = Co / geom.groups;

  Tensor<T> y({B, Co, To, Fo});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t co = 0; co < Co; ++co) {
      const std::int64_t grp = co / co_per_g;
      for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t fo = 0; fo < Fo; ++fo) {
          double acc = bias ? static_cast<double>(bias[co]) : 0.0;
          for (std::int64_t cg = 0; cg < Cg; ++cg) {
            const std::int64_t ci = grp * Cg + cg;
            for (std::int64_t kt = 0; kt < kT; ++kt) {
              const std::int64_t ti =
                  to * geom.stride_t - geom.pad_t0 + kt * geom.dil_t;
              if (ti < 0 || ti >= Ti) continue;
              for (std::int64_t kf = 0; kf < kF; ++kf) {
                const std::int64_t fi =
                    fo * geom.stride_f - geom.pad_f0 + kf * geom.dil_f;
                if (fi < 0 || fi >= Fi) continue;
                acc += static_cast<double>(
                           x[((b * Ci + ci) * Ti + ti) * Fi + fi]) *
                       static_cast<double>(
                           w[((co * Cg + cg) * kT + kt) * kF + kf]);
              }
            }
          }
          y[((b * Co + co) * To + to) * Fo + fo] = static_cast<T>(acc);
        }
    }
  return y;
}

template <std::floating_point T>
Tensor<T> conv2d_bwd_data(const Tensor<T>& gy, const Tensor<T>& w,
                          const Shape& x_shape, const ConvGeom& geom) {
  const std::int64_t B = x_shape[0], Ci = x_shape[1], Ti = x_shape[2],
                     Fi = x_shape[3];
  const std::int64_t Co = w.shape()[0], Cg = w.shape()[1], kT = w.shape()[2],
                     kF = w.shape()[3];
  const std::int64_t To = gy.shape()[2], Fo = gy.shape()[3];
  const std::int64_t co_per_g = Co / geom.groups;

  Tensor<T> gx(x_shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t co = 0; co < Co; ++co) {
      const std::int64_t grp = co / co_per_g;
      for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t fo = 0; fo < Fo; ++fo) {
          const T go = gy[((b * Co + co) * To + to) * Fo + fo];
          if (go == T(0)) continue;
          for (std::int64_t cg = 0; cg < Cg; ++cg) {
            const std::int64_t ci = grp * Cg + cg;
            for (std::int64_t kt = 0; kt < kT; ++kt) {
              const std::int64_t ti =
                  to * geom.stride_t - geom.pad_t0 + kt * geom.dil_t;
              if (ti < 0 || ti >= Ti) continue;
              for (std::int64_t kf = 0; kf < kF; ++kf) {
                const std::int64_t fi =
                    fo * geom.stride_f - geom.pad_f0 + kf * geom.dil_f;
                if (fi < 0 || fi >= Fi) continue;
                gx[((b * Ci + ci) * Ti + ti) * Fi + fi] +=
                    go * w[((co * Cg + cg) * kT + kt) * kF + kf];
              }
            }
          }
        }
    }
  return gx;
}

template <std::floating_point T>
Tensor<T> conv2d_bwd_weights(const Tensor<T>& x, const Tensor<T>& gy,
                             const Shape& w_shape, const ConvGeom& geom) {
  const std::int64_t B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2],
                     Fi = x.shape()[3];
  const std::int64_t Co = w_shape[0], Cg = w_shape[1], kT = w_shape[2],
                     kF = w_shape[3];
  const std::int64_t To = gy.shape()[2], Fo = gy.shape()[3];
  const std::int64_t co_per_g = Co / geom.groups;

  Tensor<T> gw(w_shape);
  for (std::int64_t co = 0; co < Co; ++co) {
    const std::int64_t grp = co / co_per_g;
    for (std::int64_t cg = 0; cg < Cg; ++cg) {
      const std::int64_t ci = grp * Cg + cg;
      for (std::int64_t kt = 0; kt < kT; ++kt)
        for (std::int64_t kf = 0; kf < kF; ++kf) {
          double acc = 0.0;
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t to = 0; to < To; ++to) {
              const std::int64_t ti =
                  to * geom.stride_t - geom.pad_t0 + kt * geom.dil_t;
              if (ti < 0 || ti >= Ti) continue;
              for (std::int64_t fo = 0; fo < Fo; ++fo) {
                const std::int64_t fi =
                    fo * geom.stride_f - geom.pad_f0 + kf * geom.dil_f;
                if (fi < 0 || fi >= Fi) continue;
                acc += static_cast<double>(
                           x[((b * Ci + ci) * Ti + ti) * Fi + fi]) *
                       static_cast<double>(
                           gy[((b * Co + co) * To + to) * Fo + fo]);
              }
            }
          gw[((co * Cg + cg) * kT + kt) * kF + kf] = static_cast<T>(acc);
        }
    }
  }
  return gw;
}

// Transposed convolution, weight layout [Ci, Co, kT, kF]. The forward is the
// adjoint of a conv2d with the same geometry, which is exactly what the
// decoder needs to undo the encoder's striding.
template <std::floating_point T>
Tensor<T> convt2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const T* bias,
                      const ConvGeom& geom, std::int64_t To, std::int64_t Fo) {
  require<ShapeError>(x.rank() == 4 && w.rank() == 4,
                      "transposed conv operands must be rank 4");
  const std::int64_t B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2],
                     Fi = x.shape()[3];
  require<ShapeError>(w.shape()[0] == Ci,
                      "transposed conv weight " + shape_str(w.shape()) +
                          " does not accept " + std::to_string(Ci) +
                          " input channels");
  const std::int64_t Co = w.shape()[1], kT = w.shape()[2], kF = w.shape()[3];

  Tensor<T> y({B, Co, To, Fo});
  if (bias) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t i = 0; i < To * Fo; ++i)
          y[(b * Co + co) * To * Fo + i] = bias[co];
  }
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t ci = 0; ci < Ci; ++ci)
      for (std::int64_t ti = 0; ti < Ti; ++ti)
        for (std::int64_t fi = 0; fi < Fi; ++fi) {
          const T xv = x[((b * Ci + ci) * Ti + ti) * Fi + fi];
          if (xv == T(0)) continue;
          for (std::int64_t kt = 0; kt < kT; ++kt) {
            const std::int64_t to =
                ti * geom.stride_t - geom.pad_t0 + kt * geom.dil_t;
            if (to < 0 || to >= To) continue;
            for (std::int64_t kf = 0; kf < kF; ++kf) {
              const std::int64_t fo =
                  fi * geom.stride_f - geom.pad_f0 + kf * geom.dil_f;
              if (fo < 0 || fo >= Fo) continue;
              for (std::int64_t co = 0; co < Co; ++co)
                y[((b * Co + co) * To + to) * Fo + fo] +=
                    xv * w[((ci * Co + co) * kT + kt) * kF + kf];
            }
          }
        }
  return y;
}

template <std::floating_point T>
Tensor<T> convt2d_bwd_data(const Tensor<T>& gy, const Tensor<T>& w,
                           const Shape& x_shape, const ConvGeom& geom) {
  const std::int64_t B = x_shape[0], Ci = x_shape[1], Ti = x_shape[2],
                     Fi = x_shape[3];
  const std::int64_t Co = w.shape()[1], kT = w.shape()[2], kF = w.shape()[3];
  const std::int64_t To = gy.shape()[2], Fo = gy.shape()[3];

  Tensor<T> gx(x_shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t ci = 0; ci < Ci; ++ci)
      for (std::int64_t ti = 0; ti < Ti; ++ti)
        for (std::int64_t fi = 0; fi < Fi; ++fi) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t kt = 0; kt < kT; ++kt) {
              const std::int64_t to =
                  ti * geom.stride_t - geom.pad_t0 + kt * geom.dil_t;
              if (to < 0 || to >= To) continue;
              for (std::int64_t kf = 0; kf < kF; ++kf) {
                const std::int64_t fo =
                    fi * geom.stride_f - geom.pad_f0 + kf * geom.dil_f;
                if (fo < 0 || fo >= Fo) continue;
                acc += static_cast<double>(
                           gy[((b * Co + co) * To + to) * Fo + fo]) *
                       static_cast<double>(
                           w[((ci * Co + co) * kT + kt) * kF + kf]);
              }
            }
          gx[((b * Ci + ci) * Ti + ti) * Fi + fi] = static_cast<T>(acc);
        }
  return gx;
}

template <std::floating_point T>
Tensor<T> convt2d_bwd_weights(const Tensor<T>& x, const Tensor<T>& gy,
                              const Shape& w_shape, const ConvGeom& geom) {
  const std::int64_t B = x.shape()[0], Ci = x.shape()[1], Ti = x.shape()[2],
                     Fi = x.shape()[3];
  const std::int64_t Co = w_shape[1], kT = w_shape[2], kF = w_shape[3];
  const std::int64_t To = gy.shape()[2], Fo = gy.shape()[3];

  Tensor<T> gw(w_shape);
  for (std::int64_t ci = 0; ci < Ci; ++ci)
    for (std::int64_t co = 0; co < Co; ++co)
      for (std::int64_t kt = 0; kt < kT; ++kt)
        for (std::int64_t kf = 0; kf < kF; ++kf) {
          double acc = 0.0;
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t ti = 0; ti < Ti; ++ti) {
              const std::int64_t to =
                  ti * geom.stride_t - geom.pad_t0 + kt * geom.dil_t;
              if (to < 0 || to >= To) continue;
              for (std::int64_t fi = 0; fi < Fi; ++fi) {
                const std::int64_t fo =
                    fi * geom.stride_f - geom.pad_f0 + kf * geom.dil_f;
                if (fo < 0 || fo >= Fo) continue;
                acc += static_cast<double>(
                           x[((b * Ci + ci) * Ti + ti) * Fi + fi]) *
                       static_cast<double>(
                           gy[((b * Co + co) * To + to) * Fo + fo]);
              }
            }
          gw[((ci * Co + co) * kT + kt) * kF + kf] = static_cast<T>(acc);
        }
  return gw;
}

}  // namespace conv_detail

namespace ops {

template <std::floating_point T>
Value<T> conv2d(Value<T> x, Value<T> w, Value<T> bias, const ConvGeom& geom) {
  Graph<T>& g = *x.graph;
  const bool has_bias = bias.valid();
  const T* bptr = has_bias ? bias.val().data() : nullptr;
  Tensor<T> y = conv_detail::conv2d_fwd(x.val(), w.val(), bptr, geom);
  const bool track = has_bias ? g.tracks({x, w, bias}) : g.tracks({x, w});
  std::vector<std::int64_t> parents{x.id, w.id};
  if (has_bias) parents.push_back(bias.id);
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, wid = w.id, bid = has_bias ? bias.id : -1, geom,
           out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& wv = g.node(wid).value;
      const Tensor<T>& gy = g.grad(out_id);
      if (g.node(xid).needs_grad) {
        Tensor<T> gx =
            conv_detail::conv2d_bwd_data(gy, wv, xv.shape(), geom);
        Tensor<T>& acc = g.grad(xid);
        for (std::int64_t i = 0; i < gx.numel(); ++i) acc[i] += gx[i];
      }
      if (g.node(wid).needs_grad) {
        Tensor<T> gw =
            conv_detail::conv2d_bwd_weights(xv, gy, wv.shape(), geom);
        Tensor<T>& acc = g.grad(wid);
        for (std::int64_t i = 0; i < gw.numel(); ++i) acc[i] += gw[i];
      }
      if (bid >= 0 && g.node(bid).needs_grad) {
        Tensor<T>& gb = g.grad(bid);
        const std::int64_t B = gy.shape()[0], Co = gy.shape()[1],
                           S = gy.shape()[2] * gy.shape()[3];
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
                   "conv2d");
}

template <std::floating_point T>
Value<T> conv_transpose2d(Value<T> x, Value<T> w, Value<T> bias,
                          const ConvGeom& geom, std::int64_t out_t,
                          std::int64_t out_f) {
  Graph<T>& g = *x.graph;
  const bool has_bias = bias.valid();
  const T* bptr = has_bias ? bias.val().data() : nullptr;
  Tensor<T> y = conv_detail::convt2d_fwd(x.val(), w.val(), bptr, geom, out_t,
                                         out_f);
  const bool track = has_bias ? g.tracks({x, w, bias}) : g.tracks({x, w});
  std::vector<std::int64_t> parents{x.id, w.id};
  if (has_bias) parents.push_back(bias.id);
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, xid = x.id, wid = w.id, bid = has_bias ? bias.id : -1, geom,
           out_id = g.size()]() {
      const Tensor<T>& xv = g.node(xid).value;
      const Tensor<T>& wv = g.node(wid).value;
      const Tensor<T>& gy = g.grad(out_id);
      if (g.node(xid).needs_grad) {
        Tensor<T> gx =
            conv_detail::convt2d_bwd_data(gy, wv, xv.shape(), geom);
        Tensor<T>& acc = g.grad(xid);
        for (std::int64_t i = 0; i < gx.numel(); ++i) acc[i] += gx[i];
      }
      if (g.node(wid).needs_grad) {
        Tensor<T> gw =
            conv_detail::convt2d_bwd_weights(xv, gy, wv.shape(), geom);
        Tensor<T>& acc = g.grad(wid);
        for (std::int64_t i = 0; i < gw.numel(); ++i) acc[i] += gw[i];
      }
      if (bid >= 0 && g.node(bid).needs_grad) {
        Tensor<T>& gb = g.grad(bid);
        const std::int64_t B = gy.shape()[0], Co = gy.shape()[1],
                           S = gy.shape()[2] * gy.shape()[3];
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
                   "conv_transpose2d");
}

}  // namespace ops
}  // namespace uformer
