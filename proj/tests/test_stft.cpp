#include <gtest/gtest.h>

#include <numbers>

#include "test_util.hpp"
#include "uformer/stft.hpp"

using namespace uformer;
using testutil::expect_grads_match;
using testutil::rand_tensor;
using testutil::weighted_sum;
namespace op = uformer::ops;

namespace {

StftConfig default_cfg() { return {}; }

StftConfig tiny_cfg() {
  StftConfig c;
  c.fft_size = 64;
  c.win_length = 64;
  c.hop = 16;
  return c;
}

std::vector<float> noise(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return x;
}

TEST(Fft, RoundTripAndKnownSpectrum) {
  // Impulse transforms to an all-ones spectrum.
  std::vector<double> x(64, 0.0);
  x[0] = 1.0;
  auto bins = rfft(x);
  ASSERT_EQ(bins.size(), 33u);
  for (const auto& b : bins) {
    EXPECT_NEAR(b.real(), 1.0, 1e-12);
    EXPECT_NEAR(b.imag(), 0.0, 1e-12);
  }
  // Random round trip.
  Rng rng(5);
  std::vector<double> y(128);
  for (auto& v : y) v = rng.uniform(-1.0, 1.0);
  auto back = irfft(rfft(y), 128);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(back[i], y[i], 1e-12);

  EXPECT_THROW(rfft(std::vector<double>(48, 0.0)), ValueError);
}

TEST(Fft, IrfftIgnoresDcAndNyquistImaginaries) {
  Rng rng(6);
  std::vector<std::complex<double>> bins(33);
  for (auto& b : bins) b = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  auto clean = bins;
  clean[0].imag(0.0);
  clean[32].imag(0.0);
  auto a = irfft(bins, 64);
  auto b = irfft(clean, 64);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(Stft, FrameCountFormula) {
  const auto cfg = default_cfg();
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const std::int64_t len = rng.uniform_int(cfg.win_length, 80000);
    EXPECT_EQ(stft_frames(len, cfg), 1 + (len - cfg.win_length) / cfg.hop);
  }
  EXPECT_EQ(stft_frames(400, cfg), 1);
  EXPECT_EQ(stft_frames(559, cfg), 1);
  EXPECT_EQ(stft_frames(560, cfg), 2);
  EXPECT_THROW(stft_frames(399, cfg), ValueError);
}

TEST(Stft, OneKilohertzSinePeaksAtBin32) {
  const auto cfg = default_cfg();
  std::vector<float> x(16000);
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] = static_cast<float>(
        std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(n) /
                 16000.0));
  auto spec = stft(x, cfg);
  // 1000 Hz / (16000 / 512) = bin 32 exactly.
  for (std::int64_t t = 0; t < spec.frames(); ++t) {
    std::int64_t best = 0;
    double best_mag = -1.0;
    for (std::int64_t k = 0; k < spec.bins(); ++k) {
      const double re = spec.re[t * spec.bins() + k];
      const double im = spec.im[t * spec.bins() + k];
      const double mag = re * re + im * im;
      if (mag > best_mag) {
        best_mag = mag;
        best = k;
      }
    }
    EXPECT_EQ(best, 32) << "frame " << t;
  }
}

TEST(Stft, ZeroSignalGivesZeroSpectrogram) {
  auto spec = stft(std::vector<float>(1600, 0.0f), default_cfg());
  for (std::int64_t i = 0; i < spec.re.numel(); ++i) {
    EXPECT_EQ(spec.re[i], 0.0f);
    EXPECT_EQ(spec.im[i], 0.0f);
  }
}

TEST(Stft, LinearityOverSignals) {
  const auto cfg = tiny_cfg();
  auto a = noise(400, 1), b = noise(400, 2);
  std::vector<float> mix(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 2.0f * a[i] - 0.5f * b[i];
  auto sa = stft(a, cfg), sb = stft(b, cfg), sm = stft(mix, cfg);
  for (std::int64_t i = 0; i < sm.re.numel(); ++i) {
    EXPECT_NEAR(sm.re[i], 2.0f * sa.re[i] - 0.5f * sb.re[i], 1e-4);
    EXPECT_NEAR(sm.im[i], 2.0f * sa.im[i] - 0.5f * sb.im[i], 1e-4);
  }
}

TEST(Stft, ParsevalPerFrame) {
  const auto cfg = default_cfg();
  auto x = noise(2000, 3);
  auto spec = stft(x, cfg);
  const auto win = hann_window(cfg.win_length);
  for (std::int64_t t = 0; t < spec.frames(); ++t) {
    double time_energy = 0.0;
    for (std::int64_t n = 0; n < cfg.win_length; ++n) {
      const double v = win[static_cast<std::size_t>(n)] *
                       static_cast<double>(
                           x[static_cast<std::size_t>(t * cfg.hop + n)]);
      time_energy += v * v;
    }
    double freq_energy = 0.0;
    for (std::int64_t k = 0; k < spec.bins(); ++k) {
      const double re = spec.re[t * spec.bins() + k];
      const double im = spec.im[t * spec.bins() + k];
      const double scale = (k == 0 || k == cfg.fft_size / 2) ? 1.0 : 2.0;
      freq_energy += scale * (re * re + im * im);
    }
    freq_energy /= static_cast<double>(cfg.fft_size);
    EXPECT_NEAR(freq_energy, time_energy,
                0.01 * std::max(time_energy, 1e-12));
  }
}

TEST(Stft, RoundTripInteriorIsExact) {
  for (const std::int64_t len : {16000l, 64000l}) {
    const auto cfg = default_cfg();
    auto x = noise(len, 10 + static_cast<std::uint64_t>(len));
    auto spec = stft(x, cfg);
    auto back = istft(spec, len);
    ASSERT_EQ(back.size(), x.size());
    const std::int64_t covered = (spec.frames() - 1) * cfg.hop + cfg.win_length;
    double max_err = 0.0;
    for (std::int64_t i = cfg.win_length; i < covered - cfg.win_length; ++i)
      max_err = std::max(max_err,
                         std::abs(static_cast<double>(back[static_cast<std::size_t>(i)]) -
                                  static_cast<double>(x[static_cast<std::size_t>(i)])));
    EXPECT_LE(max_err, 1e-6);
  }
}

TEST(Stft, RoundTripDoublePrecision) {
  const auto cfg = tiny_cfg();
  Rng rng(11);
  std::vector<double> x(800);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  auto spec = stft(x, cfg);
  auto back = istft(spec, 800);
  const std::int64_t covered = (spec.frames() - 1) * cfg.hop + cfg.win_length;
  for (std::int64_t i = cfg.win_length; i < covered - cfg.win_length; ++i)
    EXPECT_NEAR(back[static_cast<std::size_t>(i)],
                x[static_cast<std::size_t>(i)], 1e-12);
}

TEST(Istft, HopWiderThanWindowIsRejected) {
  StftConfig cfg;
  cfg.fft_size = 64;
  cfg.win_length = 32;
  cfg.hop = 48;  // leaves holes between frames
  std::vector<float> x(400, 0.5f);
  auto spec = stft(x, cfg);
  EXPECT_THROW(istft(spec, 400), SynthesisError);
}

TEST(Magnitude, MatchesHypotenuse) {
  Spectrogram<double> spec;
  spec.cfg = tiny_cfg();
  spec.re = Tensor<double>({1, 3}, {3.0, 0.0, -1.0});
  spec.im = Tensor<double>({1, 3}, {4.0, 0.0, 1.0});
  auto mag = magnitude(spec);
  EXPECT_DOUBLE_EQ(mag[0], 5.0);
  EXPECT_DOUBLE_EQ(mag[1], 0.0);
  EXPECT_NEAR(mag[2], std::sqrt(2.0), 1e-15);
}

TEST(Compress, PowerLawAndDomain) {
  Tensor<double> mag({3}, {4.0, 0.0, 9.0});
  auto half = compress_magnitude(mag, 0.5);
  EXPECT_DOUBLE_EQ(half[0], 2.0);
  EXPECT_DOUBLE_EQ(half[1], 0.0);
  EXPECT_DOUBLE_EQ(half[2], 3.0);
  auto ident = compress_magnitude(mag, 1.0);
  for (std::int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(ident[i], mag[i]);
  Tensor<double> bad({1}, {-0.1});
  EXPECT_THROW(compress_magnitude(bad, 0.5), ValueError);
  EXPECT_THROW(compress_magnitude(mag, 0.0), ValueError);
  EXPECT_THROW(compress_magnitude(mag, 1.5), ValueError);
}

// ---------------------------------------------------------------------------
// Differentiable istft
// ---------------------------------------------------------------------------

TEST(IstftOp, MatchesPlainIstft) {
  const auto cfg = tiny_cfg();
  auto x = noise(160, 12);
  auto spec = stft(x, cfg);
  auto ref = istft(spec, 160);

  Graph<float> g;
  Value<float> re = g.leaf(spec.re, false);
  Value<float> im = g.leaf(spec.im, false);
  Value<float> y = op::istft(re, im, cfg, 160);
  ASSERT_EQ(y.val().shape(), (Shape{160}));
  for (std::int64_t i = 0; i < 160; ++i)
    EXPECT_NEAR(y.val()[i], ref[static_cast<std::size_t>(i)], 1e-6);
}

TEST(IstftOp, BatchedMatchesPerItem) {
  const auto cfg = tiny_cfg();
  Rng rng(13);
  const std::int64_t T = 4, F = cfg.bins(), L = 3 * 16 + 64;
  Tensor<double> re = rand_tensor({2, T, F}, rng);
  Tensor<double> im = rand_tensor({2, T, F}, rng);

  Graph<double> g;
  Value<double> yb =
      op::istft(g.leaf(re, false), g.leaf(im, false), cfg, L);
  ASSERT_EQ(yb.val().shape(), (Shape{2, L}));
  for (std::int64_t b = 0; b < 2; ++b) {
    Tensor<double> re1({T, F}), im1({T, F});
    for (std::int64_t i = 0; i < T * F; ++i) {
      re1[i] = re[b * T * F + i];
      im1[i] = im[b * T * F + i];
    }
    Value<double> y1 =
        op::istft(g.leaf(re1, false), g.leaf(im1, false), cfg, L);
    for (std::int64_t i = 0; i < L; ++i)
      EXPECT_DOUBLE_EQ(yb.val()[b * L + i], y1.val()[i]);
  }
}

TEST(IstftOpGrad, AdjointMatchesFiniteDifferences) {
  const auto cfg = tiny_cfg();
  Rng rng(14);
  const std::int64_t T = 3, F = cfg.bins(), L = 2 * 16 + 64;
  auto re = rand_tensor({T, F}, rng);
  auto im = rand_tensor({T, F}, rng);
  // The op is linear, so a generous step costs no truncation error and
  // keeps the central difference clear of float cancellation.
  expect_grads_match(
      [cfg, L](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::istft(in[0], in[1], cfg, L));
      },
      {re, im}, 1e-3, 1e-6);
}

TEST(IstftOpGrad, DcAndNyquistImaginariesGetZeroGradient) {
  const auto cfg = tiny_cfg();
  Rng rng(15);
  const std::int64_t T = 2, F = cfg.bins(), L = 80;
  Graph<double> g;
  Value<double> re = g.leaf(rand_tensor({T, F}, rng), true);
  Value<double> im = g.leaf(rand_tensor({T, F}, rng), true);
  Value<double> y = op::istft(re, im, cfg, L);
  g.backward(weighted_sum(y));
  const Tensor<double>& gim = g.grad(im.id);
  for (std::int64_t t = 0; t < T; ++t) {
    EXPECT_EQ(gim[t * F + 0], 0.0);
    EXPECT_EQ(gim[t * F + F - 1], 0.0);
  }
  // Interior bins do receive gradient.
  double nonzero = 0.0;
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t k = 1; k < F - 1; ++k)
      nonzero += std::abs(gim[t * F + k]);
  EXPECT_GT(nonzero, 0.0);
}

}  // namespace
