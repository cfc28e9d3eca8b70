#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uformer/config.hpp"
#include "uformer/conformer.hpp"
#include "uformer/layers.hpp"
#include "uformer/ops.hpp"

namespace uformer {

// Two-branch encoder/decoder over spectrogram maps laid out [B, C, T, F].
// The complex branch filters (re, im) pairs with complex-valued convolutions,
// the magnitude branch runs an ordinary real stack, and after every stage the
// branches leak bounded hints into each other (hybrid_fusion below). Gated
// skip paths (RealEncDecAttention / ComplexEncDecAttention) replace plain
// U-Net concatenation unless disable_encdec_attention asks for the classic
// skips.

// -----------------------------------------------------------------------
// Branch fusion
// -----------------------------------------------------------------------

template <std::floating_point T>
struct FusedPair {
  CValue<T> cplx;
  Value<T> mag;
};

// Parameter-free exchange between the branches. Both complex planes gain a
// sigmoid view of the magnitude map, the magnitude map gains a sigmoid view
// of the complex modulus. Each update reads the other branch's incoming
// value, so the two sides commute and neither sees its own correction.
template <std::floating_point T>
FusedPair<T> hybrid_fusion(CValue<T> c, Value<T> m) {
  Value<T> from_mag = ops::sigmoid(m);
  Value<T> modulus =
      ops::sqrt(ops::add(ops::square(c.re), ops::square(c.im)));
  return {{ops::add(c.re, from_mag), ops::add(c.im, from_mag)},
          ops::add(m, ops::sigmoid(modulus))};
}

// -----------------------------------------------------------------------
// Skip alignment
// -----------------------------------------------------------------------

// Crops x to [.., .., t, f] by dropping trailing steps. Tolerates a one step
// overhang per axis; anything larger means the encoder and decoder walked
// different geometries and is reported instead of silently cropped.
template <std::floating_point T>
Value<T> crop_to(Value<T> x, std::int64_t t, std::int64_t f) {
  const Shape& s = x.shape();
  const std::int64_t dt = s[2] - t, df = s[3] - f;
  require<ShapeError>(dt >= 0 && dt <= 1 && df >= 0 && df <= 1,
                      "skip tensors out of alignment: have " + shape_str(s) +
                          ", want time " + std::to_string(t) + " freq " +
                          std::to_string(f));
  if (dt > 0) x = ops::slice(x, 2, 0, t);
  if (df > 0) x = ops::slice(x, 3, 0, f);
  return x;
}

inline std::pair<std::int64_t, std::int64_t> common_extent(const Shape& a,
                                                           const Shape& b) {
  return {std::min(a[2], b[2]), std::min(a[3], b[3])};
}

// -----------------------------------------------------------------------
// Encoder-decoder attention
// -----------------------------------------------------------------------

// Gated skip: G = sigmoid(We * E + Wd * D), skip = sigmoid(Wa * G) .. D,
// returned as concat(D, skip) ready for the decoder convolution. All three
// convolutions use the small (2, 3) kernel, look one step back in time and
// one bin to each side in frequency, so the gate never consults the future.
template <std::floating_point T>
class RealEncDecAttention {
 public:
  RealEncDecAttention() = default;
  RealEncDecAttention(ParameterStore<T>& store, const std::string& name,
                      std::int64_t enc_ch, std::int64_t dec_ch,
                      std::int64_t hidden, const ModelSettings& m, Rng& rng) {
    const ConvGeom g = geometry(m);
    we_ = Conv2dLayer<T>(store, name + ".we", enc_ch, hidden, m.eda_kernel_t,
                         m.eda_kernel_f, g, rng);
    wd_ = Conv2dLayer<T>(store, name + ".wd", dec_ch, hidden, m.eda_kernel_t,
                         m.eda_kernel_f, g, rng);
    wa_ = Conv2dLayer<T>(store, name + ".wa", hidden, dec_ch, m.eda_kernel_t,
                         m.eda_kernel_f, g, rng);
  }

  static ConvGeom geometry(const ModelSettings& m) {
    ConvGeom g;
    g.pad_t0 = m.eda_kernel_t - 1;
    g.pad_f0 = (m.eda_kernel_f - 1) / 2;
    g.pad_f1 = m.eda_kernel_f / 2;
    return g;
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> e, Value<T> d) const {
    const auto [t, f] = common_extent(e.shape(), d.shape());
    e = crop_to(e, t, f);
    d = crop_to(d, t, f);
    Value<T> g =
        ops::sigmoid(ops::add(we_.forward(ctx, e), wd_.forward(ctx, d)));
    Value<T> gate = ops::sigmoid(wa_.forward(ctx, g));
    return ops::concat<T>({d, ops::mul(gate, d)}, 1);
  }

 private:
  Conv2dLayer<T> we_, wd_, wa_;
};

// Complex variant. The gate is steered by real convolutions over the stacked
// (re, im) planes and a single real mask scales both planes, keeping the
// skip's phase intact.
template <std::floating_point T>
class ComplexEncDecAttention {
 public:
  ComplexEncDecAttention() = default;
  ComplexEncDecAttention(ParameterStore<T>& store, const std::string& name,
                         std::int64_t enc_ch, std::int64_t dec_ch,
                         std::int64_t hidden, const ModelSettings& m,
                         Rng& rng) {
    const ConvGeom g = RealEncDecAttention<T>::geometry(m);
    we_ = Conv2dLayer<T>(store, name + ".we", 2 * enc_ch, hidden,
                         m.eda_kernel_t, m.eda_kernel_f, g, rng);
    wd_ = Conv2dLayer<T>(store, name + ".wd", 2 * dec_ch, hidden,
                         m.eda_kernel_t, m.eda_kernel_f, g, rng);
    wa_ = Conv2dLayer<T>(store, name + ".wa", hidden, dec_ch, m.eda_kernel_t,
                         m.eda_kernel_f, g, rng);
  }

  CValue<T> forward(RunContext<T>& ctx, CValue<T> e, CValue<T> d) const {
    const auto [t, f] = common_extent(e.re.shape(), d.re.shape());
    CValue<T> ea{crop_to(e.re, t, f), crop_to(e.im, t, f)};
    CValue<T> da{crop_to(d.re, t, f), crop_to(d.im, t, f)};
    Value<T> es = ops::concat<T>({ea.re, ea.im}, 1);
    Value<T> ds = ops::concat<T>({da.re, da.im}, 1);
    Value<T> g =
        ops::sigmoid(ops::add(we_.forward(ctx, es), wd_.forward(ctx, ds)));
    Value<T> gate = ops::sigmoid(wa_.forward(ctx, g));
    return {ops::concat<T>({da.re, ops::mul(gate, da.re)}, 1),
            ops::concat<T>({da.im, ops::mul(gate, da.im)}, 1)};
  }

 private:
  Conv2dLayer<T> we_, wd_, wa_;
};

// -----------------------------------------------------------------------
// Encoder / decoder stages
// -----------------------------------------------------------------------

// Strided conv, batch norm, PReLU. Frequency is halved by the stride (the
// asymmetric pad keeps the bin count a clean power-of-two ladder), time is
// preserved and the kernel only reaches backwards.
template <std::floating_point T>
class RealEncoderLayer {
 public:
  RealEncoderLayer() = default;
  RealEncoderLayer(ParameterStore<T>& store, const std::string& name,
                   std::int64_t ci, std::int64_t co, const ModelSettings& m,
                   Rng& rng)
      : conv_(store, name + ".conv", ci, co, m.kernel_t, m.kernel_f,
              geometry(m), rng),
        bn_(store, name + ".bn", co),
        act_(store, name + ".act", co) {}

  static ConvGeom geometry(const ModelSettings& m) {
    ConvGeom g;
    g.stride_f = m.stride_f;
    g.pad_t0 = m.kernel_t - 1;
    g.pad_f0 = m.freq_pad_left;
    g.pad_f1 = m.freq_pad_right;
    return g;
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x) const {
    return act_.forward(ctx, bn_.forward(ctx, conv_.forward(ctx, x)));
  }

 private:
  Conv2dLayer<T> conv_;
  BatchNormLayer<T> bn_;
  PReLULayer<T> act_;
};

template <std::floating_point T>
class ComplexEncoderLayer {
 public:
  ComplexEncoderLayer() = default;
  ComplexEncoderLayer(ParameterStore<T>& store, const std::string& name,
                      std::int64_t ci, std::int64_t co, const ModelSettings& m,
                      Rng& rng)
      : conv_(store, name + ".conv", ci, co, m.kernel_t, m.kernel_f,
              RealEncoderLayer<T>::geometry(m), rng),
        bn_(store, name + ".bn", co),
        act_(store, name + ".act", co) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x) const {
    return act_.forward(ctx, bn_.forward(ctx, conv_.forward(ctx, x)));
  }

 private:
  ComplexConv2d<T> conv_;
  ComplexBatchNorm<T> bn_;
  ComplexPReLU<T> act_;
};

// Transposed conv, batch norm, PReLU. The caller passes the exact output
// extent recorded on the way down; the stride-2 transpose alone cannot tell
// 2n from 2n+1 bins apart. In causal mode the transpose is the adjoint of a
// forward-looking conv, which scatters every input frame onto the present
// and the past only.
template <std::floating_point T>
class RealDecoderLayer {
 public:
  RealDecoderLayer() = default;
  RealDecoderLayer(ParameterStore<T>& store, const std::string& name,
                   std::int64_t ci, std::int64_t co, const ModelSettings& m,
                   Rng& rng)
      : deconv_(store, name + ".deconv", ci, co, m.kernel_t, m.kernel_f,
                geometry(m), rng),
        bn_(store, name + ".bn", co),
        act_(store, name + ".act", co) {}

  static ConvGeom geometry(const ModelSettings& m) {
    ConvGeom g;
    g.stride_f = m.stride_f;
    g.pad_f0 = m.freq_pad_left;
    g.pad_f1 = m.freq_pad_right;
    if (m.causal) {
      g.pad_t1 = m.kernel_t - 1;
    } else {
      g.pad_t0 = m.kernel_t - 1;
    }
    return g;
  }

  Value<T> forward(RunContext<T>& ctx, Value<T> x, std::int64_t out_t,
                   std::int64_t out_f) const {
    return act_.forward(
        ctx, bn_.forward(ctx, deconv_.forward(ctx, x, out_t, out_f)));
  }

 private:
  ConvT2dLayer<T> deconv_;
  BatchNormLayer<T> bn_;
  PReLULayer<T> act_;
};

template <std::floating_point T>
class ComplexDecoderLayer {
 public:
  ComplexDecoderLayer() = default;
  ComplexDecoderLayer(ParameterStore<T>& store, const std::string& name,
                      std::int64_t ci, std::int64_t co, const ModelSettings& m,
                      Rng& rng)
      : deconv_(store, name + ".deconv", ci, co, m.kernel_t, m.kernel_f,
                RealDecoderLayer<T>::geometry(m), rng),
        bn_(store, name + ".bn", co),
        act_(store, name + ".act", co) {}

  CValue<T> forward(RunContext<T>& ctx, CValue<T> x, std::int64_t out_t,
                    std::int64_t out_f) const {
    return act_.forward(
        ctx, bn_.forward(ctx, deconv_.forward(ctx, x, out_t, out_f)));
  }

 private:
  ComplexConvT2d<T> deconv_;
  ComplexBatchNorm<T> bn_;
  ComplexPReLU<T> act_;
};

// -----------------------------------------------------------------------
// Full model
// -----------------------------------------------------------------------

// Raw head outputs. The mask nonlinearities and spectrum arithmetic live in
// reconstruct.hpp; the network itself stops at one complex and one real map
// per frame and bin, matching the input resolution. Ablated branches leave
// the corresponding field invalid.
template <std::floating_point T>
struct UformerOutput {
  CValue<T> cplx;
  Value<T> mag;
};

template <std::floating_point T>
class Uformer {
 public:
  Uformer(ParameterStore<T>& store, const UformerConfig& cfg, Rng& rng)
      : m_(cfg.model) {
    const auto& ch = m_.enc_channels;
    const std::int64_t depth = static_cast<std::int64_t>(ch.size());
    require<ConfigError>(depth >= 1, "enc_channels must not be empty");
    has_cplx_ = m_.branch != Branch::magnitude_only;
    has_mag_ = m_.branch != Branch::complex_only;

    // Stage widths. Decoder stage j climbs back to the geometry the encoder
    // saw at depth - 1 - j, so its output width and its skip mate's width are
    // both ch[depth - 1 - j]; its own input is the previous stage's output.
    std::vector<std::int64_t> dec_in(depth), dec_out(depth), mate(depth);
    for (std::int64_t j = 0; j < depth; ++j) {
      dec_out[j] = ch[depth - 1 - j];
      mate[j] = ch[depth - 1 - j];
      dec_in[j] = j == 0 ? ch[depth - 1] : dec_out[j - 1];
    }

    if (has_cplx_) {
      std::int64_t ci = 1;
      for (std::int64_t i = 0; i < depth; ++i) {
        cplx_enc_.emplace_back(store, "cplx.enc" + std::to_string(i), ci,
                               ch[i], m_, rng);
        ci = ch[i];
      }
      cplx_bottleneck_ = ComplexSequenceStack<T>(store, "cplx.bottleneck", m_,
                                                 ch[depth - 1], rng);
      for (std::int64_t j = 0; j < depth; ++j) {
        std::int64_t width = 2 * dec_in[j];
        if (m_.disable_encdec_attention) {
          width = dec_in[j] + mate[j];
        } else {
          cplx_eda_.emplace_back(store, "cplx.eda" + std::to_string(j),
                                 mate[j], dec_in[j], m_.eda_hidden_cplx, m_,
                                 rng);
        }
        cplx_dec_.emplace_back(store, "cplx.dec" + std::to_string(j), width,
                               dec_out[j], m_, rng);
      }
      ConvGeom unit;
      cplx_head_ = ComplexConv2d<T>(store, "cplx.head", ch[0], 1, 1, 1, unit,
                                    rng);
    }

    if (has_mag_) {
      std::int64_t ci = 1;
      for (std::int64_t i = 0; i < depth; ++i) {
        mag_enc_.emplace_back(store, "mag.enc" + std::to_string(i), ci, ch[i],
                              m_, rng);
        ci = ch[i];
      }
      mag_bottleneck_ = RealSequenceStack<T>(store, "mag.bottleneck", m_,
                                             ch[depth - 1], rng);
      for (std::int64_t j = 0; j < depth; ++j) {
        std::int64_t width = 2 * dec_in[j];
        if (m_.disable_encdec_attention) {
          width = dec_in[j] + mate[j];
        } else {
          mag_eda_.emplace_back(store, "mag.eda" + std::to_string(j), mate[j],
                                dec_in[j], m_.eda_hidden_real, m_, rng);
        }
        mag_dec_.emplace_back(store, "mag.dec" + std::to_string(j), width,
                              dec_out[j], m_, rng);
      }
      ConvGeom unit;
      mag_head_ = Conv2dLayer<T>(store, "mag.head", ch[0], 1, 1, 1, unit, rng);
    }
  }

  const ModelSettings& settings() const { return m_; }

  // spec carries the raw (re, im) planes, mag the compressed magnitude, all
  // [B, 1, T, F]. A branch an ablation removed ignores its input and leaves
  // its output field invalid.
  UformerOutput<T> forward(RunContext<T>& ctx, CValue<T> spec,
                           Value<T> mag) const {
    const bool fuse = has_cplx_ && has_mag_;
    const std::int64_t depth = static_cast<std::int64_t>(m_.enc_channels.size());

    // Geometry of each stage's input, consulted on the way back up.
    std::vector<std::pair<std::int64_t, std::int64_t>> extent(depth);

    CValue<T> c = spec;
    Value<T> r = mag;
    std::vector<CValue<T>> c_skip(depth);
    std::vector<Value<T>> r_skip(depth);
    for (std::int64_t i = 0; i < depth; ++i) {
      Scope<T> scope(ctx.graph, "enc" + std::to_string(i));
      if (has_cplx_) {
        extent[i] = {c.re.shape()[2], c.re.shape()[3]};
        c = cplx_enc_[i].forward(ctx, c);
      }
      if (has_mag_) {
        extent[i] = {r.shape()[2], r.shape()[3]};
        r = mag_enc_[i].forward(ctx, r);
      }
      if (fuse) {
        FusedPair<T> fused = hybrid_fusion(c, r);
        c = fused.cplx;
        r = fused.mag;
      }
      if (has_cplx_) c_skip[i] = c;
      if (has_mag_) r_skip[i] = r;
    }

    {
      Scope<T> scope(ctx.graph, "bottleneck");
      if (has_cplx_) c = cplx_bottleneck_.forward(ctx, c);
      if (has_mag_) r = mag_bottleneck_.forward(ctx, r);
    }

    for (std::int64_t j = 0; j < depth; ++j) {
      Scope<T> scope(ctx.graph, "dec" + std::to_string(j));
      const std::int64_t stage = depth - 1 - j;
      const auto [out_t, out_f] = extent[stage];
      if (has_cplx_) {
        CValue<T> in;
        if (m_.disable_encdec_attention) {
          const auto [t, f] = common_extent(c.re.shape(),
                                            c_skip[stage].re.shape());
          in = {ops::concat<T>({crop_to(c.re, t, f),
                                crop_to(c_skip[stage].re, t, f)}, 1),
                ops::concat<T>({crop_to(c.im, t, f),
                                crop_to(c_skip[stage].im, t, f)}, 1)};
        } else {
          in = cplx_eda_[j].forward(ctx, c_skip[stage], c);
        }
        c = cplx_dec_[j].forward(ctx, in, out_t, out_f);
      }
      if (has_mag_) {
        Value<T> in;
        if (m_.disable_encdec_attention) {
          const auto [t, f] = common_extent(r.shape(), r_skip[stage].shape());
          in = ops::concat<T>(
              {crop_to(r, t, f), crop_to(r_skip[stage], t, f)}, 1);
        } else {
          in = mag_eda_[j].forward(ctx, r_skip[stage], r);
        }
        r = mag_dec_[j].forward(ctx, in, out_t, out_f);
      }
      if (fuse) {
        FusedPair<T> fused = hybrid_fusion(c, r);
        c = fused.cplx;
        r = fused.mag;
      }
    }

    UformerOutput<T> out;
    {
      Scope<T> scope(ctx.graph, "head");
      if (has_cplx_) out.cplx = cplx_head_.forward(ctx, c);
      if (has_mag_) out.mag = mag_head_.forward(ctx, r);
    }
    return out;
  }

 private:
  ModelSettings m_;
  bool has_cplx_ = true, has_mag_ = true;

  std::vector<ComplexEncoderLayer<T>> cplx_enc_;
  ComplexSequenceStack<T> cplx_bottleneck_;
  std::vector<ComplexEncDecAttention<T>> cplx_eda_;
  std::vector<ComplexDecoderLayer<T>> cplx_dec_;
  ComplexConv2d<T> cplx_head_;

  std::vector<RealEncoderLayer<T>> mag_enc_;
  RealSequenceStack<T> mag_bottleneck_;
  std::vector<RealEncDecAttention<T>> mag_eda_;
  std::vector<RealDecoderLayer<T>> mag_dec_;
  Conv2dLayer<T> mag_head_;
};

}  // namespace uformer
