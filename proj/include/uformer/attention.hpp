#pragma once

#include <cmath>
#include <vector>

#include "uformer/layers.hpp"
#include "uformer/linalg.hpp"

namespace uformer {

// ---------------------------------------------------------------------------
// Plain scaled dot-product attention
// ---------------------------------------------------------------------------

namespace attn_detail {

// Row-wise softmax of a [m, n] matrix.
template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::int64_t m = x.shape()[0], n = x.shape()[1];
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    T mx = x[i * n];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const T e = std::exp(x[i * n + j] - mx);
      y[i * n + j] = e;
      sum += static_cast<double>(e);
    }
    for (std::int64_t j = 0; j < n; ++j)
      y[i * n + j] = static_cast<T>(y[i * n + j] / sum);
  }
  return y;
}

}  // namespace attn_detail

// Scaled dot-product attention on plain tensors. Q is [d, m], K is [d, n],
// V is [n, e]; the result is softmax(Q^T K / sqrt(d)) V of shape [m, e],
// with each weight row normalised over the n attended positions.
template <std::floating_point T>
Tensor<T> real_attention(const Tensor<T>& q, const Tensor<T>& k,
                         const Tensor<T>& v) {
  require<ShapeError>(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
                      "attention operands must be rank 2");
  require<ShapeError>(q.shape()[0] == k.shape()[0],
                      "query and key depth disagree");
  require<ShapeError>(k.shape()[1] == v.shape()[0],
                      "key count and value count disagree");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.shape()[0]));
  Tensor<T> logits = matmul_plain(transpose_plain(q), k);
  for (std::int64_t i = 0; i < logits.numel(); ++i)
    logits[i] = static_cast<T>(logits[i] * inv_scale);
  return matmul_plain(attn_detail::softmax_rows(logits), v);
}

// Complex attention as eight real attention terms. Writing A(x, y, z) for
// real_attention(Qx, Ky, Vz) over the component planes,
//   real = A(r,r,r) - A(r,i,i) - A(i,r,i) - A(i,i,r)
//   imag = A(r,r,i) + A(r,i,r) + A(i,r,r) - A(i,i,i)
// which mirrors how the four component products of (a+ib)(c+id)(e+if)
// distribute over the two output planes.
template <std::floating_point T>
ComplexTensor<T> complex_attention(const ComplexTensor<T>& q,
                                   const ComplexTensor<T>& k,
                                   const ComplexTensor<T>& v) {
  const auto a = [&](const Tensor<T>& qq, const Tensor<T>& kk,
                     const Tensor<T>& vv) { return real_attention(qq, kk, vv); };
  Tensor<T> rrr = a(q.re, k.re, v.re);
  Tensor<T> rii = a(q.re, k.im, v.im);
  Tensor<T> iri = a(q.im, k.re, v.im);
  Tensor<T> iir = a(q.im, k.im, v.re);
  Tensor<T> rri = a(q.re, k.re, v.im);
  Tensor<T> rir = a(q.re, k.im, v.re);
  Tensor<T> irr = a(q.im, k.re, v.re);
  Tensor<T> iii = a(q.im, k.im, v.im);

  ComplexTensor<T> out(rrr.shape());
  for (std::int64_t i = 0; i < rrr.numel(); ++i) {
    out.re[i] = rrr[i] - rii[i] - iri[i] - iir[i];
    out.im[i] = rri[i] + rir[i] + irr[i] - iii[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention sublayers over [B, C, T, F] feature maps
// ---------------------------------------------------------------------------

inline std::vector<std::int64_t> time_context_offsets(std::int64_t context,
                                                      bool causal) {
  std::vector<std::int64_t> offsets;
  if (causal) {
    // The full window lies in the past: -(c-1) .. 0.
    for (std::int64_t j = -(context - 1); j <= 0; ++j) offsets.push_back(j);
  } else {
    // Centred window: -(c-1)/2 .. +c/2 rounded toward the past for even c.
    const std::int64_t back = (context - 1) / 2;
    for (std::int64_t j = -back; j < context - back; ++j) offsets.push_back(j);
  }
  return offsets;
}

// Local attention along time. Each (t, f) position projects queries from a
// window of context frames and a key from the current frame; the resulting
// context-length weight column blends the window's values:
//   A(t, f) = softmax(Q^T K / sqrt(d)) over the window axis,
//   y(t, f) = sum_j A_j V_j.
template <std::floating_point T>
class RealTimeAttention {
 public:
  RealTimeAttention() = default;
  RealTimeAttention(ParameterStore<T>& store, const std::string& name,
                    std::int64_t channels, std::int64_t proj_dim,
                    std::int64_t context, bool causal, Rng& rng)
      : q_(store, name + ".q", channels, proj_dim, rng),
        k_(store, name + ".k", channels, proj_dim, rng),
        v_(store, name + ".v", channels, proj_dim, rng),
        out_(store, name + ".out", proj_dim, channels, rng),
        offsets_(time_context_offsets(context, causal)),
        proj_dim_(proj_dim) {}

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Scope<T> scope(ctx.graph, "time_attn");
    Value<T> xu = ops::unfold_time(x, offsets_);          // [B, C, J, T, F]
    Value<T> q = q_.forward(ctx, xu);                      // [B, d, J, T, F]
    Value<T> v = v_.forward(ctx, xu);                      // [B, d, J, T, F]
    Value<T> k = k_.forward(ctx, x);                       // [B, d, T, F]
    const Shape& ks = k.val().shape();
    k = ops::reshape(k, {ks[0], ks[1], 1, ks[2], ks[3]});  // [B, d, 1, T, F]

    const T inv_scale =
        static_cast<T>(1.0 / std::sqrt(static_cast<double>(proj_dim_)));
    Value<T> logits =
        ops::scale(ops::sum_axis(ops::mul(q, k), 1, true), inv_scale);
    Value<T> a = ops::softmax(logits, 2);                  // over the window
    Value<T> y = ops::sum_axis(ops::mul(a, v), 2);         // [B, d, T, F]
    Value<T> o = out_.forward(ctx, y);
    if (ctx.train && ctx.dropout > 0.0)
      o = ops::dropout(o, ctx.dropout, *ctx.rng);
    return o;
  }

 private:
  LinearLayer<T> q_, k_, v_, out_;
  std::vector<std::int64_t> offsets_;
  std::int64_t proj_dim_ = 0;
};

template <std::floating_point T>
class ComplexTimeAttention {
 public:
  ComplexTimeAttention() = default;
  ComplexTimeAttention(ParameterStore<T>& store, const std::string& name,
                       std::int64_t channels, std::int64_t proj_dim,
                       std::int64_t context, bool causal, Rng& rng)
      : q_(store, name + ".q", channels, proj_dim, rng),
        k_(store, name + ".k", channels, proj_dim, rng),
        v_(store, name + ".v", channels, proj_dim, rng),
        out_(store, name + ".out", proj_dim, channels, rng),
        offsets_(time_context_offsets(context, causal)),
        proj_dim_(proj_dim) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Scope<T> scope(ctx.graph, "time_attn");
    CValue<T> xu{ops::unfold_time(x.re, offsets_),
                 ops::unfold_time(x.im, offsets_)};
    CValue<T> q = q_.forward(ctx, xu);
    CValue<T> v = v_.forward(ctx, xu);
    CValue<T> k = k_.forward(ctx, x);
    const Shape& ks = k.re.val().shape();
    const Shape kexp{ks[0], ks[1], 1, ks[2], ks[3]};
    k = {ops::reshape(k.re, kexp), ops::reshape(k.im, kexp)};

    const T inv_scale =
        static_cast<T>(1.0 / std::sqrt(static_cast<double>(proj_dim_)));
    auto weights = [&](Value<T> qc, Value<T> kc) {
      Value<T> logits =
          ops::scale(ops::sum_axis(ops::mul(qc, kc), 1, true), inv_scale);
      return ops::softmax(logits, 2);
    };
    Value<T> a_rr = weights(q.re, k.re);
    Value<T> a_ri = weights(q.re, k.im);
    Value<T> a_ir = weights(q.im, k.re);
    Value<T> a_ii = weights(q.im, k.im);
    auto apply = [&](Value<T> a, Value<T> vc) {
      return ops::sum_axis(ops::mul(a, vc), 2);
    };
    Value<T> y_re = ops::sub(
        ops::sub(apply(a_rr, v.re), apply(a_ri, v.im)),
        ops::add(apply(a_ir, v.im), apply(a_ii, v.re)));
    Value<T> y_im = ops::sub(
        ops::add(apply(a_rr, v.im),
                 ops::add(apply(a_ri, v.re), apply(a_ir, v.re))),
        apply(a_ii, v.im));
    CValue<T> o = out_.forward(ctx, {y_re, y_im});
    if (ctx.train && ctx.dropout > 0.0) {
      o.re = ops::dropout(o.re, ctx.dropout, *ctx.rng);
      o.im = ops::dropout(o.im, ctx.dropout, *ctx.rng);
    }
    return o;
  }

 private:
  ComplexLinear<T> q_, k_, v_, out_;
  std::vector<std::int64_t> offsets_;
  std::int64_t proj_dim_ = 0;
};

// Global attention along frequency. For each frame, every bin attends over
// all bins: A = softmax(Q^T K / sqrt(d)) of shape [F, F], normalised over
// the attended (key) bins, then y(f) = sum_f' A[f, f'] V[f'].
template <std::floating_point T>
class RealFreqAttention {
 public:
  RealFreqAttention() = default;
  RealFreqAttention(ParameterStore<T>& store, const std::string& name,
                    std::int64_t channels, std::int64_t proj_dim, Rng& rng)
      : q_(store, name + ".q", channels, proj_dim, rng),
        k_(store, name + ".k", channels, proj_dim, rng),
        v_(store, name + ".v", channels, proj_dim, rng),
        out_(store, name + ".out", proj_dim, channels, rng),
        proj_dim_(proj_dim) {}

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Scope<T> scope(ctx.graph, "freq_attn");
    Value<T> q = q_.forward(ctx, x);  // [B, d, T, F]
    Value<T> k = k_.forward(ctx, x);
    Value<T> v = v_.forward(ctx, x);
    const Shape& s = q.val().shape();
    const std::int64_t B = s[0], d = s[1], Tn = s[2], F = s[3];

    Value<T> qe = ops::reshape(q, {B, d, Tn, F, 1});
    Value<T> ke = ops::reshape(k, {B, d, Tn, 1, F});
    const T inv_scale =
        static_cast<T>(1.0 / std::sqrt(static_cast<double>(proj_dim_)));
    Value<T> logits =
        ops::scale(ops::sum_axis(ops::mul(qe, ke), 1), inv_scale);
    Value<T> a = ops::softmax(logits, 3);  // [B, T, F, F'], rows over F'
    Value<T> ae = ops::reshape(a, {B, 1, Tn, F, F});
    Value<T> ve = ops::reshape(v, {B, d, Tn, 1, F});
    Value<T> y = ops::sum_axis(ops::mul(ae, ve), 4);  // [B, d, T, F]
    Value<T> o = out_.forward(ctx, y);
    if (ctx.train && ctx.dropout > 0.0)
      o = ops::dropout(o, ctx.dropout, *ctx.rng);
    return o;
  }

 private:
  LinearLayer<T> q_, k_, v_, out_;
  std::int64_t proj_dim_ = 0;
};

template <std::floating_point T>
class ComplexFreqAttention {
 public:
  ComplexFreqAttention() = default;
  ComplexFreqAttention(ParameterStore<T>& store, const std::string& name,
                       std::int64_t channels, std::int64_t proj_dim, Rng& rng)
      : q_(store, name + ".q", channels, proj_dim, rng),
        k_(store, name + ".k", channels, proj_dim, rng),
        v_(store, name + ".v", channels, proj_dim, rng),
        out_(store, name + ".out", proj_dim, channels, rng),
        proj_dim_(proj_dim) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Scope<T> scope(ctx.graph, "freq_attn");
    CValue<T> q = q_.forward(ctx, x);
    CValue<T> k = k_.forward(ctx, x);
    CValue<T> v = v_.forward(ctx, x);
    const Shape& s = q.re.val().shape();
    const std::int64_t B = s[0], d = s[1], Tn = s[2], F = s[3];
    const T inv_scale =
        static_cast<T>(1.0 / std::sqrt(static_cast<double>(proj_dim_)));

    auto weights = [&](Value<T> qc, Value<T> kc) {
      Value<T> qe = ops::reshape(qc, {B, d, Tn, F, 1});
      Value<T> ke = ops::reshape(kc, {B, d, Tn, 1, F});
      Value<T> logits =
          ops::scale(ops::sum_axis(ops::mul(qe, ke), 1), inv_scale);
      return ops::reshape(ops::softmax(logits, 3), {B, 1, Tn, F, F});
    };
    Value<T> a_rr = weights(q.re, k.re);
    Value<T> a_ri = weights(q.re, k.im);
    Value<T> a_ir = weights(q.im, k.re);
    Value<T> a_ii = weights(q.im, k.im);
    auto apply = [&](Value<T> a, Value<T> vc) {
      Value<T> ve = ops::reshape(vc, {B, d, Tn, 1, F});
      return ops::sum_axis(ops::mul(a, ve), 4);
    };
    Value<T> y_re = ops::sub(
        ops::sub(apply(a_rr, v.re), apply(a_ri, v.im)),
        ops::add(apply(a_ir, v.im), apply(a_ii, v.re)));
    Value<T> y_im = ops::sub(
        ops::add(apply(a_rr, v.im),
                 ops::add(apply(a_ri, v.re), apply(a_ir, v.re))),
        apply(a_ii, v.im));
    CValue<T> o = out_.forward(ctx, {y_re, y_im});
    if (ctx.train && ctx.dropout > 0.0) {
      o.re = ops::dropout(o.re, ctx.dropout, *ctx.rng);
      o.im = ops::dropout(o.im, ctx.dropout, *ctx.rng);
    }
    return o;
  }

 private:
  ComplexLinear<T> q_, k_, v_, out_;
  std::int64_t proj_dim_ = 0;
};

}  // namespace uformer
