#pragma once

#include <optional>
#include <string>

#include "uformer/conv.hpp"
#include "uformer/ops.hpp"
#include "uformer/parameters.hpp"

namespace uformer {

// Thin wrappers that own parameter slots and replay themselves onto a graph.
// Construction order is deterministic, so a fixed seed yields a fixed model.

template <std::floating_point T>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(ParameterStore<T>& store, const std::string& name,
              std::int64_t in, std::int64_t out, Rng& rng, bool bias = true) {
    w_ = store.add(name + ".w", init_uniform<T>({out, in}, in, rng));
    if (bias) b_ = store.add(name + ".b", init_uniform<T>({out}, in, rng));
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Value<T> bias = b_ >= 0 ? ctx.use(b_) : Value<T>{};
    return ops::linear_channels(x, ctx.use(w_), bias);
  }

 private:
  int w_ = -1, b_ = -1;
};

template <std::floating_point T>
class ComplexLinear {
 public:
  ComplexLinear() = default;
  ComplexLinear(ParameterStore<T>& store, const std::string& name,
                std::int64_t in, std::int64_t out, Rng& rng, bool bias = true) {
    wr_ = store.add(name + ".w_re", init_uniform<T>({out, in}, in, rng));
    wi_ = store.add(name + ".w_im", init_uniform<T>({out, in}, in, rng));
    if (bias) {
      br_ = store.add(name + ".b_re", init_uniform<T>({out}, in, rng));
      bi_ = store.add(name + ".b_im", init_uniform<T>({out}, in, rng));
    }
  }

  // (Wr + iWi)(xr + ixi): real = Wr xr - Wi xi, imag = Wi xr + Wr xi.
  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Value<T> wr = ctx.use(wr_), wi = ctx.use(wi_);
    Value<T> br = br_ >= 0 ? ctx.use(br_) : Value<T>{};
    Value<T> bi = bi_ >= 0 ? ctx.use(bi_) : Value<T>{};
    Value<T> re = ops::sub(ops::linear_channels(x.re, wr, br),
                           ops::linear_channels(x.im, wi));
    Value<T> im = ops::add(ops::linear_channels(x.re, wi, bi),
                           ops::linear_channels(x.im, wr));
    return {re, im};
  }

 private:
  int wr_ = -1, wi_ = -1, br_ = -1, bi_ = -1;
};

template <std::floating_point T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParameterStore<T>& store, const std::string& name,
              std::int64_t ci, std::int64_t co, std::int64_t kt,
              std::int64_t kf, ConvGeom geom, Rng& rng, bool bias = true)
      : geom_(geom) {
    const std::int64_t cg = ci / geom.groups;
    const std::int64_t fan_in = cg * kt * kf;
    w_ = store.add(name + ".w", init_uniform<T>({co, cg, kt, kf}, fan_in, rng));
    if (bias) b_ = store.add(name + ".b", init_uniform<T>({co}, fan_in, rng));
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Value<T> bias = b_ >= 0 ? ctx.use(b_) : Value<T>{};
    return ops::conv2d(x, ctx.use(w_), bias, geom_);
  }

 private:
  ConvGeom geom_;
  int w_ = -1, b_ = -1;
};

template <std::floating_point T>
class ComplexConv2d {
 public:
  ComplexConv2d() = default;
  ComplexConv2d(ParameterStore<T>& store, const std::string& name,
                std::int64_t ci, std::int64_t co, std::int64_t kt,
                std::int64_t kf, ConvGeom geom, Rng& rng, bool bias = true)
      : geom_(geom) {
    const std::int64_t cg = ci / geom.groups;
    const std::int64_t fan_in = cg * kt * kf;
    wr_ = store.add(name + ".w_re",
                    init_uniform<T>({co, cg, kt, kf}, fan_in, rng));
    wi_ = store.add(name + ".w_im",
                    init_uniform<T>({co, cg, kt, kf}, fan_in, rng));
    if (bias) {
      br_ = store.add(name + ".b_re", init_uniform<T>({co}, fan_in, rng));
      bi_ = store.add(name + ".b_im", init_uniform<T>({co}, fan_in, rng));
    }
  }

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Value<T> wr = ctx.use(wr_), wi = ctx.use(wi_);
    Value<T> br = br_ >= 0 ? ctx.use(br_) : Value<T>{};
    Value<T> bi = bi_ >= 0 ? ctx.use(bi_) : Value<T>{};
    Value<T> re = ops::sub(ops::conv2d(x.re, wr, br, geom_),
                           ops::conv2d(x.im, wi, Value<T>{}, geom_));
    Value<T> im = ops::add(ops::conv2d(x.re, wi, bi, geom_),
                           ops::conv2d(x.im, wr, Value<T>{}, geom_));
    return {re, im};
  }

 private:
  ConvGeom geom_;
  int wr_ = -1, wi_ = -1, br_ = -1, bi_ = -1;
};

template <std::floating_point T>
class ConvT2dLayer {
 public:
  ConvT2dLayer() = default;
  ConvT2dLayer(ParameterStore<T>& store, const std::string& name,
               std::int64_t ci, std::int64_t co, std::int64_t kt,
               std::int64_t kf, ConvGeom geom, Rng& rng, bool bias = true)
      : geom_(geom) {
    const std::int64_t fan_in = ci * kt * kf;
    w_ = store.add(name + ".w", init_uniform<T>({ci, co, kt, kf}, fan_in, rng));
    if (bias) b_ = store.add(name + ".b", init_uniform<T>({co}, fan_in, rng));
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x, std::int64_t out_t,
                   std::int64_t out_f) const {
    Value<T> bias = b_ >= 0 ? ctx.use(b_) : Value<T>{};
    return ops::conv_transpose2d(x, ctx.use(w_), bias, geom_, out_t, out_f);
  }

 private:
  ConvGeom geom_;
  int w_ = -1, b_ = -1;
};

template <std::floating_point T>
class ComplexConvT2d {
 public:
  ComplexConvT2d() = default;
  ComplexConvT2d(ParameterStore<T>& store, const std::string& name,
                 std::int64_t ci, std::int64_t co, std::int64_t kt,
                 std::int64_t kf, ConvGeom geom, Rng& rng, bool bias = true)
      : geom_(geom) {
    const std::int64_t fan_in = ci * kt * kf;
    wr_ = store.add(name + ".w_re",
                    init_uniform<T>({ci, co, kt, kf}, fan_in, rng));
    wi_ = store.add(name + ".w_im",
                    init_uniform<T>({ci, co, kt, kf}, fan_in, rng));
    if (bias) {
      br_ = store.add(name + ".b_re", init_uniform<T>({co}, fan_in, rng));
      bi_ = store.add(name + ".b_im", init_uniform<T>({co}, fan_in, rng));
    }
  }

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x, std::int64_t out_t,
                    std::int64_t out_f) const {
    Value<T> wr = ctx.use(wr_), wi = ctx.use(wi_);
    Value<T> br = br_ >= 0 ? ctx.use(br_) : Value<T>{};
    Value<T> bi = bi_ >= 0 ? ctx.use(bi_) : Value<T>{};
    Value<T> re = ops::sub(
        ops::conv_transpose2d(x.re, wr, br, geom_, out_t, out_f),
        ops::conv_transpose2d(x.im, wi, Value<T>{}, geom_, out_t, out_f));
    Value<T> im = ops::add(
        ops::conv_transpose2d(x.re, wi, bi, geom_, out_t, out_f),
        ops::conv_transpose2d(x.im, wr, Value<T>{}, geom_, out_t, out_f));
    return {re, im};
  }

 private:
  ConvGeom geom_;
  int wr_ = -1, wi_ = -1, br_ = -1, bi_ = -1;
};

template <std::floating_point T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(ParameterStore<T>& store, const std::string& name,
                 std::int64_t channels, T eps = T(1e-5))
      : eps_(eps) {
    gamma_ = store.add(name + ".gamma", Tensor<T>::full({channels}, T(1)));
    beta_ = store.add(name + ".beta", Tensor<T>({channels}));
    rmean_ = store.add(name + ".running_mean", Tensor<T>({channels}),
                       /*trainable=*/false);
    rvar_ = store.add(name + ".running_var",
                      Tensor<T>::full({channels}, T(1)), /*trainable=*/false);
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    if (ctx.train) {
      Tensor<T> mean, var;
      Value<T> y = ops::batchnorm_train(x, ctx.use(gamma_), ctx.use(beta_),
                                        eps_, &mean, &var);
      if (ctx.update_stats) {
        auto& rm = ctx.params.at(rmean_).value;
        auto& rv = ctx.params.at(rvar_).value;
        std::int64_t n = 1;
        for (std::size_t i = 0; i < x.shape().size(); ++i)
          if (i != 1) n *= x.shape()[i];
        // Running variance uses the unbiased estimate, batch norm itself the
        // biased one.
        const double corr =
            n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        const T mom = static_cast<T>(ctx.bn_momentum);
        for (std::int64_t c = 0; c < rm.numel(); ++c) {
          rm[c] = (T(1) - mom) * rm[c] + mom * mean[c];
          rv[c] = (T(1) - mom) * rv[c] +
                  mom * static_cast<T>(static_cast<double>(var[c]) * corr);
        }
      }
      return y;
    }
    return ops::batchnorm_eval(x, ctx.use(gamma_), ctx.use(beta_),
                               ctx.params.at(rmean_).value,
                               ctx.params.at(rvar_).value, eps_);
  }

 private:
  T eps_ = T(1e-5);
  int gamma_ = -1, beta_ = -1, rmean_ = -1, rvar_ = -1;
};

// Complex batch norm in the naive style: independent normalisation of the
// real and imaginary planes.
template <std::floating_point T>
class ComplexBatchNorm {
 public:
  ComplexBatchNorm() = default;
  ComplexBatchNorm(ParameterStore<T>& store, const std::string& name,
                   std::int64_t channels, T eps = T(1e-5))
      : re_(store, name + ".re", channels, eps),
        im_(store, name + ".im", channels, eps) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    return {re_.forward(ctx, x.re), im_.forward(ctx, x.im)};
  }

 private:
  BatchNormLayer<T> re_, im_;
};

template <std::floating_point T>
class PReLULayer {
 public:
  PReLULayer() = default;
  PReLULayer(ParameterStore<T>& store, const std::string& name,
             std::int64_t channels) {
    alpha_ = store.add(name + ".alpha", Tensor<T>::full({channels}, T(0.25)));
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    return ops::prelu(x, ctx.use(alpha_));
  }

 private:
  int alpha_ = -1;
};

template <std::floating_point T>
class ComplexPReLU {
 public:
  ComplexPReLU() = default;
  ComplexPReLU(ParameterStore<T>& store, const std::string& name,
               std::int64_t channels)
      : re_(store, name + ".re", channels), im_(store, name + ".im", channels) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    return {re_.forward(ctx, x.re), im_.forward(ctx, x.im)};
  }

 private:
  PReLULayer<T> re_, im_;
};

}  // namespace uformer
