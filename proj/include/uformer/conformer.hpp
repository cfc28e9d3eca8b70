#pragma once

#include <string>
#include <vector>

#include "uformer/attention.hpp"
#include "uformer/config.hpp"

namespace uformer {

// ---------------------------------------------------------------------------
// Feed-forward sublayers
// ---------------------------------------------------------------------------

template <std::floating_point T>
class RealFeedForward {
 public:
  RealFeedForward() = default;
  RealFeedForward(ParameterStore<T>& store, const std::string& name,
                  std::int64_t channels, std::int64_t hidden, Rng& rng)
      : in_(store, name + ".in", channels, hidden, rng),
        out_(store, name + ".out", hidden, channels, rng) {}

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Scope<T> scope(ctx.graph, "ff");
    Value<T> h = ops::swish(in_.forward(ctx, x));
    if (ctx.train && ctx.dropout > 0.0)
      h = ops::dropout(h, ctx.dropout, *ctx.rng);
    Value<T> y = out_.forward(ctx, h);
    if (ctx.train && ctx.dropout > 0.0)
      y = ops::dropout(y, ctx.dropout, *ctx.rng);
    return y;
  }

 private:
  LinearLayer<T> in_, out_;
};

template <std::floating_point T>
class ComplexFeedForward {
 public:
  ComplexFeedForward() = default;
  ComplexFeedForward(ParameterStore<T>& store, const std::string& name,
                     std::int64_t channels, std::int64_t hidden, Rng& rng)
      : in_(store, name + ".in", channels, hidden, rng),
        out_(store, name + ".out", hidden, channels, rng) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Scope<T> scope(ctx.graph, "ff");
    CValue<T> h = in_.forward(ctx, x);
    h = {ops::swish(h.re), ops::swish(h.im)};
    if (ctx.train && ctx.dropout > 0.0) {
      h.re = ops::dropout(h.re, ctx.dropout, *ctx.rng);
      h.im = ops::dropout(h.im, ctx.dropout, *ctx.rng);
    }
    CValue<T> y = out_.forward(ctx, h);
    if (ctx.train && ctx.dropout > 0.0) {
      y.re = ops::dropout(y.re, ctx.dropout, *ctx.rng);
      y.im = ops::dropout(y.im, ctx.dropout, *ctx.rng);
    }
    return y;
  }

 private:
  ComplexLinear<T> in_, out_;
};

// ---------------------------------------------------------------------------
// Gated dilated convolution sublayer
// ---------------------------------------------------------------------------

// Pointwise bottleneck, then two parallel depthwise convolutions along time
// whose dilations run in opposite directions across the stack: the forward
// path widens as 2^layer while the gate narrows as 2^(depth-1-layer). The
// sigmoid gate multiplies plane by plane, and a final pointwise conv
// restores the block width. All convolutions are bias-free; time padding is
// entirely on the left, so the sublayer never looks ahead.
template <std::floating_point T>
class RealDilatedConv {
 public:
  RealDilatedConv() = default;
  RealDilatedConv(ParameterStore<T>& store, const std::string& name,
                  std::int64_t channels, std::int64_t hidden,
                  std::int64_t kernel_t, std::int64_t dil_fwd,
                  std::int64_t dil_gate, Rng& rng) {
    ConvGeom pw;
    in_ = Conv2dLayer<T>(store, name + ".in", channels, hidden, 1, 1, pw, rng,
                         /*bias=*/false);
    ConvGeom fwd;
    fwd.dil_t = dil_fwd;
    fwd.pad_t0 = dil_fwd * (kernel_t - 1);
    fwd.groups = hidden;
    fwd_ = Conv2dLayer<T>(store, name + ".fwd", hidden, hidden, kernel_t, 1,
                          fwd, rng, /*bias=*/false);
    ConvGeom gate;
    gate.dil_t = dil_gate;
    gate.pad_t0 = dil_gate * (kernel_t - 1);
    gate.groups = hidden;
    gate_ = Conv2dLayer<T>(store, name + ".gate", hidden, hidden, kernel_t, 1,
                           gate, rng, /*bias=*/false);
    out_ = Conv2dLayer<T>(store, name + ".out", hidden, channels, 1, 1, pw,
                          rng, /*bias=*/false);
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Scope<T> scope(ctx.graph, "dilated_conv");
    Value<T> z = in_.forward(ctx, x);
    Value<T> h =
        ops::mul(fwd_.forward(ctx, z), ops::sigmoid(gate_.forward(ctx, z)));
    Value<T> y = out_.forward(ctx, h);
    if (ctx.train && ctx.dropout > 0.0)
      y = ops::dropout(y, ctx.dropout, *ctx.rng);
    return y;
  }

 private:
  Conv2dLayer<T> in_, fwd_, gate_, out_;
};

template <std::floating_point T>
class ComplexDilatedConv {
 public:
  ComplexDilatedConv() = default;
  ComplexDilatedConv(ParameterStore<T>& store, const std::string& name,
                     std::int64_t channels, std::int64_t hidden,
                     std::int64_t kernel_t, std::int64_t dil_fwd,
                     std::int64_t dil_gate, Rng& rng) {
    ConvGeom pw;
    in_ = ComplexConv2d<T>(store, name + ".in", channels, hidden, 1, 1, pw,
                           rng, /*bias=*/false);
    ConvGeom fwd;
    fwd.dil_t = dil_fwd;
    fwd.pad_t0 = dil_fwd * (kernel_t - 1);
    fwd.groups = hidden;
    fwd_ = ComplexConv2d<T>(store, name + ".fwd", hidden, hidden, kernel_t, 1,
                            fwd, rng, /*bias=*/false);
    ConvGeom gate;
    gate.dil_t = dil_gate;
    gate.pad_t0 = dil_gate * (kernel_t - 1);
    gate.groups = hidden;
    gate_ = ComplexConv2d<T>(store, name + ".gate", hidden, hidden, kernel_t,
                             1, gate, rng, /*bias=*/false);
    out_ = ComplexConv2d<T>(store, name + ".out", hidden, channels, 1, 1, pw,
                            rng, /*bias=*/false);
  }

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Scope<T> scope(ctx.graph, "dilated_conv");
    CValue<T> z = in_.forward(ctx, x);
    CValue<T> fz = fwd_.forward(ctx, z);
    CValue<T> gz = gate_.forward(ctx, z);
    CValue<T> h{ops::mul(fz.re, ops::sigmoid(gz.re)),
                ops::mul(fz.im, ops::sigmoid(gz.im))};
    CValue<T> y = out_.forward(ctx, h);
    if (ctx.train && ctx.dropout > 0.0) {
      y.re = ops::dropout(y.re, ctx.dropout, *ctx.rng);
      y.im = ops::dropout(y.im, ctx.dropout, *ctx.rng);
    }
    return y;
  }

 private:
  ComplexConv2d<T> in_, fwd_, gate_, out_;
};

// ---------------------------------------------------------------------------
// Conformer blocks
// ---------------------------------------------------------------------------

// Sandwich block: half-step feed-forward, time attention, frequency
// attention, gated dilated convolution, half-step feed-forward, each wrapped
// in a residual connection.
template <std::floating_point T>
class RealConformerBlock {
 public:
  RealConformerBlock() = default;
  RealConformerBlock(ParameterStore<T>& store, const std::string& name,
                     const ModelSettings& m, std::int64_t channels,
                     std::int64_t dil_fwd, std::int64_t dil_gate, Rng& rng)
      : ff1_(store, name + ".ff1", channels, m.ff_hidden1, rng),
        ta_(store, name + ".ta", channels, m.proj_dim, m.context, m.causal,
            rng),
        has_fa_(!m.disable_freq_attention),
        has_dc_(!m.disable_dilated_conv),
        ff2_(store, name + ".ff2", channels, m.ff_hidden2, rng) {
    if (has_fa_)
      fa_ = RealFreqAttention<T>(store, name + ".fa", channels, m.proj_dim,
                                 rng);
    if (has_dc_)
      dc_ = RealDilatedConv<T>(store, name + ".dc", channels, m.dc_hidden,
                               m.dc_kernel_t, dil_fwd, dil_gate, rng);
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    x = ops::add(x, ops::scale(ff1_.forward(ctx, x), T(0.5)));
    x = ops::add(x, ta_.forward(ctx, x));
    if (has_fa_) x = ops::add(x, fa_.forward(ctx, x));
    if (has_dc_) x = ops::add(x, dc_.forward(ctx, x));
    x = ops::add(x, ops::scale(ff2_.forward(ctx, x), T(0.5)));
    return x;
  }

 private:
  RealFeedForward<T> ff1_;
  RealTimeAttention<T> ta_;
  RealFreqAttention<T> fa_;
  RealDilatedConv<T> dc_;
  bool has_fa_ = false, has_dc_ = false;
  RealFeedForward<T> ff2_;
};

template <std::floating_point T>
class ComplexConformerBlock {
 public:
  ComplexConformerBlock() = default;
  ComplexConformerBlock(ParameterStore<T>& store, const std::string& name,
                        const ModelSettings& m, std::int64_t channels,
                        std::int64_t dil_fwd, std::int64_t dil_gate, Rng& rng)
      : ff1_(store, name + ".ff1", channels, m.ff_hidden1, rng),
        ta_(store, name + ".ta", channels, m.proj_dim, m.context, m.causal,
            rng),
        has_fa_(!m.disable_freq_attention),
        has_dc_(!m.disable_dilated_conv),
        ff2_(store, name + ".ff2", channels, m.ff_hidden2, rng) {
    if (has_fa_)
      fa_ = ComplexFreqAttention<T>(store, name + ".fa", channels, m.proj_dim,
                                    rng);
    if (has_dc_)
      dc_ = ComplexDilatedConv<T>(store, name + ".dc", channels, m.dc_hidden,
                                  m.dc_kernel_t, dil_fwd, dil_gate, rng);
  }

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    auto res = [](CValue<T> a, CValue<T> b) {
      return CValue<T>{ops::add(a.re, b.re), ops::add(a.im, b.im)};
    };
    auto half = [](CValue<T> a) {
      return CValue<T>{ops::scale(a.re, T(0.5)), ops::scale(a.im, T(0.5))};
    };
    x = res(x, half(ff1_.forward(ctx, x)));
    x = res(x, ta_.forward(ctx, x));
    if (has_fa_) x = res(x, fa_.forward(ctx, x));
    if (has_dc_) x = res(x, dc_.forward(ctx, x));
    x = res(x, half(ff2_.forward(ctx, x)));
    return x;
  }

 private:
  ComplexFeedForward<T> ff1_;
  ComplexTimeAttention<T> ta_;
  ComplexFreqAttention<T> fa_;
  ComplexDilatedConv<T> dc_;
  bool has_fa_ = false, has_dc_ = false;
  ComplexFeedForward<T> ff2_;
};

// ---------------------------------------------------------------------------
// Recurrent fallback used by the conformer-ablation model
// ---------------------------------------------------------------------------

// Unidirectional multi-layer LSTM over time. Frequency positions are folded
// into the batch, so every bin runs the same recurrence, then a linear map
// restores the block width.
template <std::floating_point T>
class LstmStack {
 public:
  LstmStack() = default;
  LstmStack(ParameterStore<T>& store, const std::string& name,
            std::int64_t channels, std::int64_t hidden, std::int64_t layers,
            Rng& rng)
      : hidden_(hidden) {
    std::int64_t in = channels;
    for (std::int64_t l = 0; l < layers; ++l) {
      const std::string base = name + ".l" + std::to_string(l);
      Layer lay;
      lay.wx = store.add(base + ".wx",
                         init_uniform<T>({in, 4 * hidden}, hidden, rng));
      lay.wh = store.add(base + ".wh",
                         init_uniform<T>({hidden, 4 * hidden}, hidden, rng));
      lay.b = store.add(base + ".b", init_uniform<T>({4 * hidden}, hidden, rng));
      layers_.push_back(lay);
      in = hidden;
    }
    proj_ = LinearLayer<T>(store, name + ".proj", hidden, channels, rng);
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    Scope<T> scope(ctx.graph, "lstm");
    const Shape& s = x.val().shape();
    const std::int64_t B = s[0], Tn = s[2], F = s[3];
    Graph<T>& g = ctx.graph;

    Value<T> seq = x;
    for (const Layer& lay : layers_) {
      const std::int64_t C = seq.val().shape()[1];
      Value<T> wx = ctx.use(lay.wx);
      Value<T> wh = ctx.use(lay.wh);
      Value<T> b = ctx.use(lay.b);
      Value<T> h = g.leaf(Tensor<T>({B * F, hidden_}), false, "h0");
      Value<T> c = g.leaf(Tensor<T>({B * F, hidden_}), false, "c0");
      std::vector<Value<T>> outs;
      outs.reserve(static_cast<std::size_t>(Tn));
      for (std::int64_t t = 0; t < Tn; ++t) {
        Value<T> xt = ops::slice(seq, 2, t, 1);          // [B, C, 1, F]
        xt = ops::reshape(xt, {B, C, F});
        xt = ops::permute(xt, {0, 2, 1});                // [B, F, C]
        xt = ops::reshape(xt, {B * F, C});
        Value<T> gates =
            ops::add(ops::add(ops::matmul(xt, wx), ops::matmul(h, wh)), b);
        Value<T> gi = ops::sigmoid(ops::slice(gates, 1, 0, hidden_));
        Value<T> gf = ops::sigmoid(ops::slice(gates, 1, hidden_, hidden_));
        Value<T> gg = ops::tanh(ops::slice(gates, 1, 2 * hidden_, hidden_));
        Value<T> go = ops::sigmoid(ops::slice(gates, 1, 3 * hidden_, hidden_));
        c = ops::add(ops::mul(gf, c), ops::mul(gi, gg));
        h = ops::mul(go, ops::tanh(c));
        outs.push_back(ops::reshape(h, {B * F, hidden_, 1}));
      }
      Value<T> y = ops::concat(outs, 2);                 // [B*F, H, T]
      y = ops::reshape(y, {B, F, hidden_, Tn});
      seq = ops::permute(y, {0, 2, 3, 1});               // [B, H, T, F]
    }
    return proj_.forward(ctx, seq);
  }

 private:
  struct Layer {
    int wx = -1, wh = -1, b = -1;
  };
  std::vector<Layer> layers_;
  LinearLayer<T> proj_;
  std::int64_t hidden_ = 0;
};

// Complex recurrence from two real stacks combined by the multiplication
// rule: re = A(x_re) - B(x_im), im = A(x_im) + B(x_re).
template <std::floating_point T>
class ComplexLstmStack {
 public:
  ComplexLstmStack() = default;
  ComplexLstmStack(ParameterStore<T>& store, const std::string& name,
                   std::int64_t channels, std::int64_t hidden,
                   std::int64_t layers, Rng& rng)
      : a_(store, name + ".a", channels, hidden, layers, rng),
        b_(store, name + ".b", channels, hidden, layers, rng) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    Value<T> are = a_.forward(ctx, x.re);
    Value<T> aim = a_.forward(ctx, x.im);
    Value<T> bre = b_.forward(ctx, x.re);
    Value<T> bim = b_.forward(ctx, x.im);
    return {ops::sub(are, bim), ops::add(aim, bre)};
  }

 private:
  LstmStack<T> a_, b_;
};

// ---------------------------------------------------------------------------
// Bottleneck sequence stacks
// ---------------------------------------------------------------------------

inline std::pair<std::int64_t, std::int64_t> dilation_pair(
    std::int64_t layer, std::int64_t depth) {
  return {std::int64_t(1) << layer, std::int64_t(1) << (depth - 1 - layer)};
}

template <std::floating_point T>
class RealSequenceStack {
 public:
  RealSequenceStack() = default;
  RealSequenceStack(ParameterStore<T>& store, const std::string& name,
                    const ModelSettings& m, std::int64_t channels, Rng& rng) {
    if (m.swap_conformer_for_lstm) {
      lstm_ = LstmStack<T>(store, name + ".lstm", channels, m.lstm_hidden,
                           m.lstm_layers, rng);
      use_lstm_ = true;
    } else {
      for (std::int64_t l = 0; l < m.conformer_layers; ++l) {
        const auto [df, dg] = dilation_pair(l, m.conformer_layers);
        blocks_.emplace_back(store, name + ".block" + std::to_string(l), m,
                             channels, df, dg, rng);
      }
    }
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    if (use_lstm_) return lstm_.forward(ctx, x);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      Scope<T> scope(ctx.graph, "block" + std::to_string(l));
      x = blocks_[l].forward(ctx, x);
    }
    return x;
  }

 private:
  std::vector<RealConformerBlock<T>> blocks_;
  LstmStack<T> lstm_;
  bool use_lstm_ = false;
};

template <std::floating_point T>
class ComplexSequenceStack {
 public:
  ComplexSequenceStack() = default;
  ComplexSequenceStack(ParameterStore<T>& store, const std::string& name,
                       const ModelSettings& m, std::int64_t channels,
                       Rng& rng) {
    if (m.swap_conformer_for_lstm) {
      lstm_ = ComplexLstmStack<T>(store, name + ".lstm", channels,
                                  m.lstm_hidden, m.lstm_layers, rng);
      use_lstm_ = true;
    } else {
      for (std::int64_t l = 0; l < m.conformer_layers; ++l) {
        const auto [df, dg] = dilation_pair(l, m.conformer_layers);
        blocks_.emplace_back(store, name + ".block" + std::to_string(l), m,
                             channels, df, dg, rng);
      }
    }
  }

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    if (use_lstm_) return lstm_.forward(ctx, x);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      Scope<T> scope(ctx.graph, "block" + std::to_string(l));
      x = blocks_[l].forward(ctx, x);
    }
    return x;
  }

 private:
  std::vector<ComplexConformerBlock<T>> blocks_;
  ComplexLstmStack<T> lstm_;
  bool use_lstm_ = false;
};

}  // namespace uformer
