#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "uformer/fft.hpp"
#include "uformer/graph.hpp"
#include "uformer/tensor.hpp"

namespace uformer {

struct StftConfig {
  int sample_rate = 16000;
  std::int64_t fft_size = 512;
  std::int64_t win_length = 400;
  std::int64_t hop = 160;

  std::int64_t bins() const { return fft_size / 2 + 1; }

  void validate() const {
    require<ConfigError>(sample_rate > 0, "sample rate must be positive");
    require<ConfigError>(fft_size > 0 && (fft_size & (fft_size - 1)) == 0,
                         "fft_size must be a power of two");
    require<ConfigError>(win_length > 0 && win_length <= fft_size,
                         "win_length must be in (0, fft_size]");
    require<ConfigError>(hop > 0, "hop must be positive");
  }
};

// Periodic Hann window of length n.
inline std::vector<double> hann_window(std::int64_t n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(n)));
  return w;
}

inline std::int64_t stft_frames(std::int64_t len, const StftConfig& cfg) {
  require<ValueError>(len >= cfg.win_length,
                      "signal of " + std::to_string(len) +
                          " samples is shorter than the analysis window");
  return 1 + (len - cfg.win_length) / cfg.hop;
}

// Complex spectrogram, frames along rows: [T, F] with F = fft_size/2 + 1.
template <std::floating_point T>
struct Spectrogram {
  Tensor<T> re, im;
  StftConfig cfg;

  std::int64_t frames() const { return re.shape()[0]; }
  std::int64_t bins() const { return re.shape()[1]; }
};

template <std::floating_point T>
Spectrogram<T> stft(const std::vector<T>& wave, const StftConfig& cfg) {
  cfg.validate();
  const std::int64_t frames = stft_frames(static_cast<std::int64_t>(wave.size()), cfg);
  const std::int64_t F = cfg.bins();
  const auto win = hann_window(cfg.win_length);

  Spectrogram<T> spec;
  spec.cfg = cfg;
  spec.re = Tensor<T>({frames, F});
  spec.im = Tensor<T>({frames, F});
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size), 0.0);
  for (std::int64_t t = 0; t < frames; ++t) {
    const std::int64_t start = t * cfg.hop;
    for (std::int64_t n = 0; n < cfg.win_length; ++n)
      buf[static_cast<std::size_t>(n)] =
          static_cast<double>(wave[static_cast<std::size_t>(start + n)]) *
          win[static_cast<std::size_t>(n)];
    // Analysis frames are zero-padded at the end up to fft_size.
    std::fill(buf.begin() + cfg.win_length, buf.end(), 0.0);
    const auto bins = rfft(buf);
    for (std::int64_t k = 0; k < F; ++k) {
      spec.re[t * F + k] = static_cast<T>(bins[static_cast<std::size_t>(k)].real());
      spec.im[t * F + k] = static_cast<T>(bins[static_cast<std::size_t>(k)].imag());
    }
  }
  return spec;
}

namespace stft_detail {

// Weighted overlap-add denominator: sum of squared window values landing on
// each output sample. Samples the frames never touch stay zero.
inline std::vector<double> wola_denominator(std::int64_t frames,
                                            std::int64_t out_len,
                                            const StftConfig& cfg) {
  const auto win = hann_window(cfg.win_length);
  std::vector<double> den(static_cast<std::size_t>(out_len), 0.0);
  for (std::int64_t t = 0; t < frames; ++t)
    for (std::int64_t n = 0; n < cfg.win_length; ++n) {
      const std::int64_t i = t * cfg.hop + n;
      if (i >= out_len) break;
      den[static_cast<std::size_t>(i)] += win[static_cast<std::size_t>(n)] *
                                          win[static_cast<std::size_t>(n)];
    }
  return den;
}

inline std::vector<double> wola_inverse(std::int64_t frames,
                                        std::int64_t out_len,
                                        const StftConfig& cfg) {
  const auto den = wola_denominator(frames, out_len, cfg);
  const std::int64_t covered =
      std::min<std::int64_t>(out_len, (frames - 1) * cfg.hop + cfg.win_length);
  std::vector<double> inv(den.size(), 0.0);
  for (std::int64_t i = 0; i < out_len; ++i) {
    if (den[static_cast<std::size_t>(i)] > 1e-10) {
      inv[static_cast<std::size_t>(i)] = 1.0 / den[static_cast<std::size_t>(i)];
    } else if (i >= cfg.win_length && i < covered - cfg.win_length) {
      // A hole strictly inside the covered span means the window and hop
      // cannot tile the signal; the edges may legitimately taper to zero.
      throw SynthesisError(
          "window-sum vanishes at interior sample " + std::to_string(i) +
          "; hop " + std::to_string(cfg.hop) + " with window " +
          std::to_string(cfg.win_length) + " cannot resynthesise");
    }
  }
  return inv;
}

}  // namespace stft_detail

// Inverse STFT by weighted overlap-add, normalised by the squared-window
// sum. Imaginary parts of the DC and Nyquist bins are ignored.
template <std::floating_point T>
std::vector<T> istft(const Spectrogram<T>& spec, std::int64_t out_len) {
  const StftConfig& cfg = spec.cfg;
  cfg.validate();
  const std::int64_t frames = spec.frames();
  const std::int64_t F = cfg.bins();
  require<ShapeError>(spec.bins() == F, "spectrogram bins do not match config");
  const auto win = hann_window(cfg.win_length);
  const auto inv = stft_detail::wola_inverse(frames, out_len, cfg);

  std::vector<double> acc(static_cast<std::size_t>(out_len), 0.0);
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(F));
  for (std::int64_t t = 0; t < frames; ++t) {
    for (std::int64_t k = 0; k < F; ++k)
      bins[static_cast<std::size_t>(k)] = {
          static_cast<double>(spec.re[t * F + k]),
          static_cast<double>(spec.im[t * F + k])};
    const auto frame = irfft(bins, static_cast<std::size_t>(cfg.fft_size));
    for (std::int64_t n = 0; n < cfg.win_length; ++n) {
      const std::int64_t i = t * cfg.hop + n;
      if (i >= out_len) break;
      acc[static_cast<std::size_t>(i)] +=
          win[static_cast<std::size_t>(n)] * frame[static_cast<std::size_t>(n)];
    }
  }
  std::vector<T> out(static_cast<std::size_t>(out_len));
  for (std::int64_t i = 0; i < out_len; ++i)
    out[static_cast<std::size_t>(i)] = static_cast<T>(
        acc[static_cast<std::size_t>(i)] * inv[static_cast<std::size_t>(i)]);
  return out;
}

template <std::floating_point T>
Tensor<T> magnitude(const Spectrogram<T>& spec) {
  Tensor<T> mag(spec.re.shape());
  for (std::int64_t i = 0; i < mag.numel(); ++i)
    mag[i] = static_cast<T>(
        std::sqrt(static_cast<double>(spec.re[i]) * spec.re[i] +
                  static_cast<double>(spec.im[i]) * spec.im[i]));
  return mag;
}

// Power-law compression, applied to network inputs only. Exponent in (0, 1].
template <std::floating_point T>
Tensor<T> compress_magnitude(const Tensor<T>& mag, double exponent) {
  require<ValueError>(exponent > 0.0 && exponent <= 1.0,
                      "compression exponent must be in (0, 1]");
  Tensor<T> out(mag.shape());
  for (std::int64_t i = 0; i < mag.numel(); ++i) {
    require<ValueError>(mag[i] >= T(0),
                        "compress_magnitude input must be non-negative");
    out[i] = static_cast<T>(std::pow(static_cast<double>(mag[i]), exponent));
  }
  return out;
}

namespace ops {

// Differentiable inverse STFT over [B, T, F] (or [T, F]) real/imaginary
// inputs, producing [B, out_len] (or [out_len]) waveforms. The overlap-add
// pipeline is linear in the spectrogram, so the backward pass is its exact
// adjoint: window the incoming waveform gradient frame by frame and take a
// forward FFT with matching scale factors.
template <std::floating_point T>
Value<T> istft(Value<T> re, Value<T> im, const StftConfig& cfg,
               std::int64_t out_len) {
  Graph<T>& g = *re.graph;
  cfg.validate();
  const Tensor<T>& rv = re.val();
  const Tensor<T>& iv = im.val();
  require<ShapeError>(rv.shape() == iv.shape(),
                      "istft real/imaginary shapes differ");
  const bool batched = rv.rank() == 3;
  require<ShapeError>(batched || rv.rank() == 2,
                      "istft expects [T, F] or [B, T, F], got " +
                          shape_str(rv.shape()));
  const std::int64_t B = batched ? rv.shape()[0] : 1;
  const std::int64_t frames = rv.shape()[batched ? 1 : 0];
  const std::int64_t F = rv.shape()[batched ? 2 : 1];
  require<ShapeError>(F == cfg.bins(), "istft bin count does not match config");

  const auto win = hann_window(cfg.win_length);
  const auto inv = stft_detail::wola_inverse(frames, out_len, cfg);
  const std::int64_t N = cfg.fft_size;

  Shape out_shape = batched ? Shape{B, out_len} : Shape{out_len};
  Tensor<T> y(out_shape);
  {
    std::vector<std::complex<double>> bins(static_cast<std::size_t>(F));
    std::vector<double> acc;
    for (std::int64_t b = 0; b < B; ++b) {
      acc.assign(static_cast<std::size_t>(out_len), 0.0);
      const std::int64_t base = b * frames * F;
      for (std::int64_t t = 0; t < frames; ++t) {
        for (std::int64_t k = 0; k < F; ++k)
          bins[static_cast<std::size_t>(k)] = {
              static_cast<double>(rv[base + t * F + k]),
              static_cast<double>(iv[base + t * F + k])};
        const auto frame = irfft(bins, static_cast<std::size_t>(N));
        for (std::int64_t n = 0; n < cfg.win_length; ++n) {
          const std::int64_t i = t * cfg.hop + n;
          if (i >= out_len) break;
          acc[static_cast<std::size_t>(i)] +=
              win[static_cast<std::size_t>(n)] *
              frame[static_cast<std::size_t>(n)];
        }
      }
      for (std::int64_t i = 0; i < out_len; ++i)
        y[b * out_len + i] = static_cast<T>(acc[static_cast<std::size_t>(i)] *
                                            inv[static_cast<std::size_t>(i)]);
    }
  }
  const bool track = g.tracks({re, im});
  std::function<void()> bwd;
  if (track) {
    bwd = [&g, rid = re.id, iid = im.id, cfg, win, inv, B, frames, F, N,
           out_len, out_id = g.size()]() {
      const Tensor<T>& gy = g.grad(out_id);
      Tensor<T>* gre = g.node(rid).needs_grad ? &g.grad(rid) : nullptr;
      Tensor<T>* gim = g.node(iid).needs_grad ? &g.grad(iid) : nullptr;
      std::vector<std::complex<double>> seg(static_cast<std::size_t>(N));
      const double two_over_n = 2.0 / static_cast<double>(N);
      const double one_over_n = 1.0 / static_cast<double>(N);
      for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t base = b * frames * F;
        for (std::int64_t t = 0; t < frames; ++t) {
          std::fill(seg.begin(), seg.end(), std::complex<double>{});
          bool any = false;
          for (std::int64_t n = 0; n < cfg.win_length; ++n) {
            const std::int64_t i = t * cfg.hop + n;
            if (i >= out_len) break;
            const double a = static_cast<double>(gy[b * out_len + i]) *
                             inv[static_cast<std::size_t>(i)] *
                             win[static_cast<std::size_t>(n)];
            seg[static_cast<std::size_t>(n)] = {a, 0.0};
            any = any || a != 0.0;
          }
          if (!any) continue;
          fft_inplace(seg, false);
          for (std::int64_t k = 0; k < F; ++k) {
            const bool edge = (k == 0 || k == N / 2);
            const double s = edge ? one_over_n : two_over_n;
            if (gre)
              (*gre)[base + t * F + k] += static_cast<T>(
                  s * seg[static_cast<std::size_t>(k)].real());
            // DC and Nyquist imaginary parts are ignored by the forward, so
            // they receive no gradient.
            if (gim && !edge)
              (*gim)[base + t * F + k] += static_cast<T>(
                  s * seg[static_cast<std::size_t>(k)].imag());
          }
        }
      }
    };
  }
  return g.emplace(std::move(y), track, {re.id, im.id}, std::move(bwd),
                   "istft");
}

}  // namespace ops
}  // namespace uformer
