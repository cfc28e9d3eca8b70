#pragma once

#include <vector>

#include "uformer/config.hpp"
#include "uformer/stft.hpp"
#include "uformer/unet.hpp"

namespace uformer {

// Turning raw head outputs into an enhanced spectrum. The complex head is
// read in polar form: its modulus, squashed through tanh, scales the noisy
// magnitude, and its angle is added to the noisy phase. The magnitude head
// contributes a classic sigmoid ratio mask. Both bounded masks can only
// attenuate, never amplify, which keeps the estimate inside the mixture's
// envelope.

// Leaves fed to the network. re/im carry the raw spectrum; mag carries the
// power-law compressed magnitude the network trains on. All [B, 1, T, F].
template <std::floating_point T>
struct ModelInputs {
  Tensor<T> re, im, mag;
};

template <std::floating_point T>
ModelInputs<T> make_batch_inputs(const std::vector<Spectrogram<T>>& items,
                                 double compression) {
  require<ValueError>(!items.empty(), "empty spectrogram batch");
  const std::int64_t B = static_cast<std::int64_t>(items.size());
  const std::int64_t Tn = items[0].frames(), F = items[0].bins();
  ModelInputs<T> in{Tensor<T>({B, 1, Tn, F}), Tensor<T>({B, 1, Tn, F}),
                    Tensor<T>({B, 1, Tn, F})};
  for (std::int64_t b = 0; b < B; ++b) {
    const Spectrogram<T>& s = items[static_cast<std::size_t>(b)];
    require<ShapeError>(s.frames() == Tn && s.bins() == F,
                        "spectrogram batch is ragged");
    const Tensor<T> cmag = compress_magnitude(magnitude(s), compression);
    for (std::int64_t i = 0; i < Tn * F; ++i) {
      in.re[b * Tn * F + i] = s.re[i];
      in.im[b * Tn * F + i] = s.im[i];
      in.mag[b * Tn * F + i] = cmag[i];
    }
  }
  return in;
}

// Enhanced spectrum plus the magnitude estimates, all on the graph so the
// spectral losses can differentiate through the masking. mag is the estimate
// the resynthesis uses (the fused average in hybrid mode); mag_real is the
// magnitude branch's own masked output, which the magnitude L2 term targets,
// and stays invalid when that branch was ablated away.
template <std::floating_point T>
struct EnhancedSpectrum {
  Value<T> re, im;
  Value<T> mag;
  Value<T> mag_real;
};

// noisy holds the raw (uncompressed) spectrum the masks are applied to.
// Branches without a complex head keep the noisy phase; branches without a
// magnitude head use the complex path's magnitude alone; the hybrid averages
// the two magnitude estimates.
template <std::floating_point T>
EnhancedSpectrum<T> apply_masks(CValue<T> noisy, const UformerOutput<T>& heads,
                                Branch branch) {
  Value<T> x_mag = ops::sqrt(
      ops::add(ops::square(noisy.re), ops::square(noisy.im)));
  Value<T> x_pha = ops::atan2(noisy.im, noisy.re);

  Value<T> mag_c, pha;
  if (branch != Branch::magnitude_only) {
    require<ValueError>(heads.cplx.re.valid(), "missing complex head output");
    Value<T> mod = ops::sqrt(ops::add(ops::square(heads.cplx.re),
                                      ops::square(heads.cplx.im)));
    mag_c = ops::mul(x_mag, ops::tanh(mod));
    pha = ops::add(x_pha, ops::atan2(heads.cplx.im, heads.cplx.re));
  } else {
    pha = x_pha;
  }

  Value<T> mag_r;
  if (branch != Branch::complex_only) {
    require<ValueError>(heads.mag.valid(), "missing magnitude head output");
    mag_r = ops::mul(x_mag, ops::sigmoid(heads.mag));
  }

  Value<T> mag;
  switch (branch) {
    case Branch::hybrid:
      mag = ops::scale(ops::add(mag_c, mag_r), T(0.5));
      break;
    case Branch::complex_only:
      mag = mag_c;
      break;
    case Branch::magnitude_only:
      mag = mag_r;
      break;
  }
  return {ops::mul(mag, ops::cos(pha)), ops::mul(mag, ops::sin(pha)), mag,
          mag_r};
}

// One waveform in, one waveform out. Runs the model in eval mode without a
// tape, masks the mixture spectrum and resynthesises at the input length.
template <std::floating_point T>
std::vector<T> enhance(const Uformer<T>& model, ParameterStore<T>& store,
                       const UformerConfig& cfg, const std::vector<T>& wave) {
  const Spectrogram<T> spec = stft(wave, cfg.stft);
  const ModelInputs<T> in = make_batch_inputs<T>({spec},
                                                 cfg.model.compression);
  Graph<T> g;
  RunContext<T> ctx(g, store);
  ctx.train = false;
  ctx.no_grad = true;

  CValue<T> noisy{g.leaf(in.re, false), g.leaf(in.im, false)};
  UformerOutput<T> heads = model.forward(ctx, noisy, g.leaf(in.mag, false));
  EnhancedSpectrum<T> est = apply_masks(noisy, heads, cfg.model.branch);

  const std::int64_t Tn = spec.frames(), F = spec.bins();
  const std::int64_t len = static_cast<std::int64_t>(wave.size());
  Value<T> out = ops::istft(ops::reshape(est.re, {1, Tn, F}),
                            ops::reshape(est.im, {1, Tn, F}), cfg.stft, len);
  std::vector<T> y(static_cast<std::size_t>(len));
  for (std::int64_t i = 0; i < len; ++i) y[static_cast<std::size_t>(i)] =
      out.val()[i];
  return y;
}

}  // namespace uformer
