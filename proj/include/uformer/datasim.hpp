#pragma once

// Synthetic training data. A shoebox image-source simulator produces room
// impulse responses, a splitter separates the direct-plus-early part from
// the late tail, and a seeded sampler convolves speech with the response,
// adds noise at an exact SNR, and emits (noisy, target) pairs on the fly.
// Built-in colored-noise sources keep the whole pipeline self-contained;
// real corpora enter through the manifest loader in wav.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "uformer/common.hpp"
#include "uformer/config.hpp"
#include "uformer/fft.hpp"
#include "uformer/rng.hpp"

namespace uformer {

// Shoebox room with a single source and a single microphone. Distances are
// metres, times seconds. max_order caps the total number of wall bounces an
// image source may accumulate across all three axes.
struct RoomSpec {
  std::array<double, 3> dimensions{6.0, 5.0, 3.0};
  std::array<double, 3> source_pos{2.0, 3.0, 1.5};
  std::array<double, 3> mic_pos{4.0, 2.0, 1.2};
  double rt60 = 0.5;
  std::int64_t max_order = 20;
  double sample_rate = 16000.0;
  double sound_speed = 343.0;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      require<ConfigError>(dimensions[a] > 0.0, "room dimensions must be positive");
      require<ConfigError>(
          source_pos[a] > 0.0 && source_pos[a] < dimensions[a],
          "source must lie strictly inside the room");
      require<ConfigError>(mic_pos[a] > 0.0 && mic_pos[a] < dimensions[a],
                           "microphone must lie strictly inside the room");
    }
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = mic_pos[a] - source_pos[a];
      d2 += d * d;
    }
    require<ConfigError>(d2 > 0.0, "microphone coincides with the source");
    require<ConfigError>(rt60 > 0.0, "reverberation time must be positive");
    require<ConfigError>(max_order >= 0, "reflection order must be non-negative");
    require<ConfigError>(sample_rate > 0.0, "sample rate must be positive");
    require<ConfigError>(sound_speed > 0.0, "sound speed must be positive");
  }
};

// Uniform wall absorption that realizes the requested RT60 under Sabine's
// formula, RT60 = (24 ln10 / c) * V / (alpha * S). Values within rounding
// distance of 1 snap to exactly 1 so that the anechoic boundary case stays
// anechoic instead of leaving reflections at amplitude ~1e-8.
inline double sabine_absorption(const RoomSpec& spec) {
  const auto& l = spec.dimensions;
  const double volume = l[0] * l[1] * l[2];
  const double surface = 2.0 * (l[0] * l[1] + l[0] * l[2] + l[1] * l[2]);
  const double alpha = 24.0 * std::log(10.0) / spec.sound_speed * volume /
                       (surface * spec.rt60);
  require<ConfigError>(alpha <= 1.0 + 1e-9,
                       "requested RT60 is unreachable for this geometry "
                       "(Sabine absorption exceeds 1)");
  return std::abs(alpha - 1.0) <= 1e-9 ? 1.0 : alpha;
}

// Allen-Berkley image-source impulse response. Every mirror image of the
// source across the walls contributes a spike of amplitude
// beta^reflections / (4 pi d) at the nearest sample to d / c, where beta is
// the amplitude reflection coefficient -sqrt(1 - alpha). The sign flip per
// bounce matters: tens of late arrivals round onto the same sample, and
// with all-positive amplitudes they add coherently, growing an unphysical
// low-frequency tail that flattens the measured decay well past the
// requested RT60. Alternating polarity keeps those pileups incoherent and
// the Schroeder estimate converges as the order cap rises. The response is
// as long as the farthest image within the order budget requires.
template <class T>
std::vector<T> image_rir(const RoomSpec& spec) {
  spec.validate();
  const double alpha = sabine_absorption(spec);
  const double beta = -std::sqrt(1.0 - alpha);

  std::vector<double> beta_pow(static_cast<std::size_t>(spec.max_order) + 1);
  beta_pow[0] = 1.0;
  for (std::size_t r = 1; r < beta_pow.size(); ++r)
    beta_pow[r] = beta_pow[r - 1] * beta;

  // Per axis, an image is indexed by a mirror parity p in {0, 1} and a room
  // repetition m; it sits at (1 - 2p) * src + 2 m L and has crossed
  // |m - p| + |m| walls. The per-axis repetition range below is the widest
  // that can still satisfy the total order cap.
  struct AxisImage {
    std::int64_t refl;
    double pos;
  };
  std::array<std::vector<AxisImage>, 3> axis;
  const std::int64_t m_lim = (spec.max_order + 1) / 2;
  for (int a = 0; a < 3; ++a) {
    for (std::int64_t m = -m_lim; m <= m_lim; ++m) {
      for (std::int64_t p = 0; p <= 1; ++p) {
        const std::int64_t refl = std::abs(m - p) + std::abs(m);
        if (refl > spec.max_order) continue;
        axis[a].push_back({refl, (1.0 - 2.0 * static_cast<double>(p)) *
                                     spec.source_pos[a] +
                                 2.0 * static_cast<double>(m) *
                                     spec.dimensions[a]});
      }
    }
  }

  struct Arrival {
    std::int64_t delay;
    double amp;
  };
  std::vector<Arrival> arrivals;
  std::int64_t max_delay = 0;
  for (const auto& ix : axis[0]) {
    for (const auto& iy : axis[1]) {
      const std::int64_t rxy = ix.refl + iy.refl;
      if (rxy > spec.max_order) continue;
      const double dx = ix.pos - spec.mic_pos[0];
      const double dy = iy.pos - spec.mic_pos[1];
      for (const auto& iz : axis[2]) {
        const std::int64_t refl = rxy + iz.refl;
        if (refl > spec.max_order) continue;
        const double dz = iz.pos - spec.mic_pos[2];
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        const double amp = beta_pow[static_cast<std::size_t>(refl)] /
                           (4.0 * std::numbers::pi * d);
        if (amp == 0.0) continue;
        const auto delay = static_cast<std::int64_t>(
            std::llround(spec.sample_rate * d / spec.sound_speed));
        arrivals.push_back({delay, amp});
        max_delay = std::max(max_delay, delay);
      }
    }
  }

  std::vector<double> acc(static_cast<std::size_t>(max_delay) + 1, 0.0);
  for (const auto& a : arrivals) acc[static_cast<std::size_t>(a.delay)] += a.amp;
  std::vector<T> rir(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) rir[i] = static_cast<T>(acc[i]);
  return rir;
}

// Splits a response into its direct-plus-early part and the late tail. The
// onset is the first sample reaching 1% of the peak magnitude; everything
// before onset + window stays in `early`, the rest becomes `late`, and the
// two always sum back to the input exactly.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_early(
    const std::vector<T>& rir, double sample_rate,
    double window_seconds = 0.05) {
  require<ValueError>(!rir.empty(), "impulse response is empty");
  require<ValueError>(sample_rate > 0.0 && window_seconds > 0.0,
                      "split window must be positive");
  double peak = 0.0;
  for (const T& v : rir) peak = std::max(peak, std::abs(static_cast<double>(v)));
  require<ValueError>(peak > 0.0, "impulse response is identically zero");

  std::size_t onset = 0;
  while (std::abs(static_cast<double>(rir[onset])) < 0.01 * peak) ++onset;
  const auto window =
      static_cast<std::size_t>(std::llround(window_seconds * sample_rate));
  const std::size_t cut = std::min(rir.size(), onset + window);

  std::vector<T> early(rir.size(), T(0)), late(rir.size(), T(0));
  std::copy(rir.begin(), rir.begin() + static_cast<std::ptrdiff_t>(cut),
            early.begin());
  std::copy(rir.begin() + static_cast<std::ptrdiff_t>(cut), rir.end(),
            late.begin() + static_cast<std::ptrdiff_t>(cut));
  return {std::move(early), std::move(late)};
}

// Full linear convolution, length |x| + |h| - 1. Small problems run the
// direct quadratic loop; larger ones go through zero-padded transforms.
// The path depends only on the operand sizes, so repeated calls with the
// same shapes are bit-identical.
template <class T>
std::vector<T> convolve(const std::vector<T>& x, const std::vector<T>& h) {
  require<ValueError>(!x.empty() && !h.empty(),
                      "convolution operands must be nonempty");
  const std::size_t out_n = x.size() + h.size() - 1;
  constexpr std::size_t kDirectCostLimit = std::size_t{1} << 20;

  if (x.size() * h.size() <= kDirectCostLimit) {
    std::vector<double> acc(out_n, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = static_cast<double>(x[i]);
      for (std::size_t j = 0; j < h.size(); ++j)
        acc[i + j] += xi * static_cast<double>(h[j]);
    }
    std::vector<T> out(out_n);
    for (std::size_t i = 0; i < out_n; ++i) out[i] = static_cast<T>(acc[i]);
    return out;
  }

  std::size_t n = 1;
  while (n < out_n) n <<= 1;
  std::vector<double> a(n, 0.0), b(n, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = static_cast<double>(x[i]);
  for (std::size_t i = 0; i < h.size(); ++i) b[i] = static_cast<double>(h[i]);
  auto fa = rfft(a);
  const auto fb = rfft(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  const auto y = irfft(fa, n);
  std::vector<T> out(out_n);
  for (std::size_t i = 0; i < out_n; ++i) out[i] = static_cast<T>(y[i]);
  return out;
}

// Gain to apply to `noise` so that 10 log10(E_speech / E_scaled_noise)
// equals snr_db.
template <class T>
double noise_gain_for_snr(const std::vector<T>& speech,
                          const std::vector<T>& noise, double snr_db) {
  require<ShapeError>(speech.size() == noise.size(),
                      "speech and noise lengths differ");
  double es = 0.0, en = 0.0;
  for (const T& v : speech) es += static_cast<double>(v) * static_cast<double>(v);
  for (const T& v : noise) en += static_cast<double>(v) * static_cast<double>(v);
  require<ValueError>(es > 0.0, "speech has zero energy");
  require<ValueError>(en > 0.0, "noise has zero energy");
  return std::sqrt(es / (en * std::pow(10.0, snr_db / 10.0)));
}

template <class T>
std::vector<T> mix_at_snr(const std::vector<T>& speech,
                          const std::vector<T>& noise, double snr_db) {
  const double gain = noise_gain_for_snr(speech, noise, snr_db);
  std::vector<T> out(speech.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(speech[i]) +
                            gain * static_cast<double>(noise[i]));
  return out;
}

template <class T>
std::vector<T> white_noise(std::int64_t n, Rng& rng) {
  require<ValueError>(n >= 0, "sample count must be non-negative");
  std::vector<T> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<T>(rng.normal());
  return out;
}

// Three leaky integrators with staggered time constants sum to a good
// approximation of a 1/f power spectrum across the audio band (the classic
// economy pink filter).
template <class T>
std::vector<T> pink_noise(std::int64_t n, Rng& rng) {
  require<ValueError>(n >= 0, "sample count must be non-negative");
  std::vector<T> out(static_cast<std::size_t>(n));
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (auto& v : out) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + 0.0990460 * w;
    b1 = 0.96300 * b1 + 0.2965164 * w;
    b2 = 0.57000 * b2 + 1.0526913 * w;
    v = static_cast<T>(0.25 * (b0 + b1 + b2 + 0.1848 * w));
  }
  return out;
}

// Colored-noise stand-in for speech: white noise through a two-pole
// resonator with a randomly placed formant-like peak, shaped by a slow
// syllabic amplitude modulation, normalized to peak 0.5. Crude, but it has
// the spectral tilt and envelope dynamics the rest of the pipeline cares
// about, and it needs no external corpus.
template <class T>
std::vector<T> synthetic_speech(std::int64_t n, double sample_rate, Rng& rng) {
  require<ValueError>(n >= 0, "sample count must be non-negative");
  require<ValueError>(sample_rate > 0.0, "sample rate must be positive");
  const double f0 = rng.uniform(300.0, 900.0);
  const double bandwidth = rng.uniform(80.0, 160.0);
  const double am_rate = rng.uniform(2.0, 4.0);
  const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const double r = std::exp(-std::numbers::pi * bandwidth / sample_rate);
  const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * f0 / sample_rate);
  const double a2 = -r * r;

  std::vector<double> acc(static_cast<std::size_t>(n));
  double y1 = 0.0, y2 = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double y = a1 * y1 + a2 * y2 + rng.normal();
    y2 = y1;
    y1 = y;
    const double t = static_cast<double>(i) / sample_rate;
    const double env =
        0.25 + 0.75 * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * am_rate * t +
                                            am_phase));
    acc[i] = y * env;
    peak = std::max(peak, std::abs(acc[i]));
  }
  const double scale = peak > 0.0 ? 0.5 / peak : 1.0;
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out[i] = static_cast<T>(acc[i] * scale);
  return out;
}

enum class SourceKind { speech, noise };

template <class T>
struct Corpus {
  std::vector<std::vector<T>> clips;
  bool empty() const { return clips.empty(); }
};

// Cyclic chunk extraction. Clips shorter than the request simply loop: the
// wrap keeps every corpus usable regardless of clip length, at the cost of
// periodic content, which is fine for noise beds and test fixtures.
template <class T>
std::vector<T> chunk_from(const std::vector<T>& clip, std::int64_t n,
                          std::int64_t start) {
  require<ValueError>(!clip.empty(), "clip is empty");
  require<ValueError>(n >= 0 && start >= 0,
                      "chunk length and offset must be non-negative");
  const auto len = static_cast<std::int64_t>(clip.size());
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] =
        clip[static_cast<std::size_t>((start + i) % len)];
  return out;
}

template <class T>
Corpus<T> synthetic_corpus(SourceKind kind, std::int64_t clips,
                           std::int64_t samples_per_clip, double sample_rate,
                           std::uint64_t seed) {
  require<ValueError>(clips > 0 && samples_per_clip > 0,
                      "corpus needs at least one clip of positive length");
  Corpus<T> corpus;
  for (std::int64_t k = 0; k < clips; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    if (kind == SourceKind::speech) {
      corpus.clips.push_back(
          synthetic_speech<T>(samples_per_clip, sample_rate, rng));
    } else if (k % 2 == 0) {
      corpus.clips.push_back(white_noise<T>(samples_per_clip, rng));
    } else {
      corpus.clips.push_back(pink_noise<T>(samples_per_clip, rng));
    }
  }
  return corpus;
}

// One training mixture. `target` is the dereverberation target: speech
// convolved with the direct-plus-early response only, no noise.
template <class T>
struct MixtureSample {
  std::vector<T> noisy;
  std::vector<T> target;
  double snr_db = 0.0;
  double rt60 = 0.0;
  std::uint64_t seed = 0;
};

// Intermediate products of one mixture, exposed so the arithmetic can be
// audited: noisy - reverb must equal noise_gain * noise exactly.
template <class T>
struct MixtureParts {
  std::vector<T> reverb;
  std::vector<T> target;
  std::vector<T> noisy;
  double noise_gain = 0.0;
};

// Renders one mixture from explicit ingredients. sample_batch drives this
// with drawn parameters; callers with their own rooms and SNRs (and tests)
// use it directly. Convolution tails are cut at the speech length so all
// outputs align sample for sample.
template <class T>
MixtureParts<T> render_mixture(const std::vector<T>& speech,
                               const std::vector<T>& noise,
                               const RoomSpec& spec, double snr_db,
                               double early_seconds) {
  require<ShapeError>(speech.size() == noise.size(),
                      "speech and noise lengths differ");
  const auto rir = image_rir<T>(spec);
  const auto [early, late] = split_early(rir, spec.sample_rate, early_seconds);

  MixtureParts<T> parts;
  parts.reverb = convolve(speech, rir);
  parts.reverb.resize(speech.size());
  parts.target = convolve(speech, early);
  parts.target.resize(speech.size());

  parts.noise_gain = noise_gain_for_snr(parts.reverb, noise, snr_db);
  parts.noisy.resize(speech.size());
  for (std::size_t i = 0; i < speech.size(); ++i)
    parts.noisy[i] = static_cast<T>(static_cast<double>(parts.reverb[i]) +
                                    parts.noise_gain *
                                        static_cast<double>(noise[i]));
  return parts;
}

// Draws `count` mixtures. Each item runs on its own stream derived from the
// batch seed, so results are reproducible and items could be rendered in
// parallel without changing them. Rooms vary in size around living-room
// scale with source and microphone at least half a metre from any wall.
template <class T>
std::vector<MixtureSample<T>> sample_batch(const Corpus<T>& speech,
                                           const Corpus<T>& noise,
                                           const DataSettings& cfg,
                                           double sample_rate,
                                           std::int64_t count,
                                           std::uint64_t seed) {
  require<ValueError>(!speech.empty() && !noise.empty(),
                      "sampler needs at least one speech and one noise clip");
  require<ValueError>(count >= 0, "batch size must be non-negative");
  require<ValueError>(sample_rate > 0.0, "sample rate must be positive");
  const auto n = static_cast<std::int64_t>(
      std::llround(cfg.chunk_seconds * sample_rate));
  require<ValueError>(n >= 1, "chunk is shorter than one sample");

  std::vector<MixtureSample<T>> batch;
  batch.reserve(static_cast<std::size_t>(count));
  for (std::int64_t k = 0; k < count; ++k) {
    const std::uint64_t item_seed = derive_seed(seed, static_cast<std::uint64_t>(k));
    Rng rng(item_seed);

    auto draw_chunk = [&](const Corpus<T>& corpus) {
      const auto idx = static_cast<std::size_t>(rng.uniform_int(
          0, static_cast<std::int64_t>(corpus.clips.size()) - 1));
      const auto& clip = corpus.clips[idx];
      const auto start =
          rng.uniform_int(0, static_cast<std::int64_t>(clip.size()) - 1);
      return chunk_from(clip, n, start);
    };
    const auto s = draw_chunk(speech);
    const auto nz = draw_chunk(noise);

    RoomSpec spec;
    spec.dimensions = {rng.uniform(4.0, 8.0), rng.uniform(3.0, 6.0),
                       rng.uniform(2.4, 3.5)};
    auto draw_point = [&] {
      std::array<double, 3> p;
      for (int a = 0; a < 3; ++a)
        p[a] = rng.uniform(0.5, spec.dimensions[a] - 0.5);
      return p;
    };
    spec.source_pos = draw_point();
    spec.mic_pos = draw_point();
    auto apart = [&] {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double d = spec.mic_pos[a] - spec.source_pos[a];
        d2 += d * d;
      }
      return d2 > 0.3 * 0.3;
    };
    while (!apart()) spec.mic_pos = draw_point();
    spec.rt60 = rng.uniform(cfg.rt60_min, cfg.rt60_max);
    spec.max_order = cfg.rir_max_order;
    spec.sample_rate = sample_rate;

    const double snr = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
    auto parts = render_mixture(s, nz, spec, snr, cfg.early_ms / 1000.0);

    MixtureSample<T> item;
    item.noisy = std::move(parts.noisy);
    item.target = std::move(parts.target);
    item.snr_db = snr;
    item.rt60 = spec.rt60;
    item.seed = item_seed;
    batch.push_back(std::move(item));
  }
  return batch;
}

}  // namespace uformer
