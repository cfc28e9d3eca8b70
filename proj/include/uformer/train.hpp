#pragma once

// Training loop: sample a fresh simulated batch, run the model, take the
// hybrid loss, clip, and apply Adam. A fixed dev split drawn up front drives
// the plateau-halving learning rate rule. Every random draw descends from
// the configured seed through fixed derivation lanes, so a run is a pure
// function of (seed, config, corpora) on a single thread.

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uformer/checkpoint.hpp"
#include "uformer/config.hpp"
#include "uformer/datasim.hpp"
#include "uformer/loss.hpp"
#include "uformer/optim.hpp"
#include "uformer/reconstruct.hpp"
#include "uformer/unet.hpp"

namespace uformer {

// Full objective for one batch of simulated mixtures, on the caller's tape.
// The reference bundle carries the dry-early target waveform, its raw
// spectrum, and its uncompressed magnitude; the estimate bundle carries the
// masked resynthesis and the magnitude branch's own output, which stays
// invalid (dropping that term) when the branch is ablated.
template <std::floating_point T>
Value<T> batch_objective(RunContext<T>& ctx, const Uformer<T>& model,
                         const UformerConfig& cfg,
                         const std::vector<MixtureSample<T>>& batch) {
  require<ValueError>(!batch.empty(), "empty training batch");
  const std::int64_t B = static_cast<std::int64_t>(batch.size());
  const std::int64_t L = static_cast<std::int64_t>(batch[0].noisy.size());

  std::vector<Spectrogram<T>> mix_specs;
  std::vector<Spectrogram<T>> ref_specs;
  mix_specs.reserve(batch.size());
  ref_specs.reserve(batch.size());
  for (const auto& item : batch) {
    require<ShapeError>(static_cast<std::int64_t>(item.noisy.size()) == L &&
                            item.noisy.size() == item.target.size(),
                        "ragged training batch");
    mix_specs.push_back(stft(item.noisy, cfg.stft));
    ref_specs.push_back(stft(item.target, cfg.stft));
  }

  const ModelInputs<T> in =
      make_batch_inputs(mix_specs, cfg.model.compression);
  const std::int64_t Tn = mix_specs[0].frames(), F = mix_specs[0].bins();

  Tensor<T> ref_re({B, 1, Tn, F}), ref_im({B, 1, Tn, F});
  Tensor<T> ref_mag({B, 1, Tn, F});
  Tensor<T> ref_wave({B, L});
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = ref_specs[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < Tn * F; ++i) {
      ref_re[b * Tn * F + i] = s.re[i];
      ref_im[b * Tn * F + i] = s.im[i];
      ref_mag[b * Tn * F + i] = std::sqrt(s.re[i] * s.re[i] +
                                          s.im[i] * s.im[i]);
    }
    const auto& w = batch[static_cast<std::size_t>(b)].target;
    for (std::int64_t i = 0; i < L; ++i)
      ref_wave[b * L + i] = w[static_cast<std::size_t>(i)];
  }

  Graph<T>& g = ctx.graph;
  CValue<T> noisy{g.leaf(in.re, false), g.leaf(in.im, false)};
  UformerOutput<T> heads = model.forward(ctx, noisy, g.leaf(in.mag, false));
  EnhancedSpectrum<T> est = apply_masks(noisy, heads, cfg.model.branch);

  Value<T> est_wave = ops::istft(ops::reshape(est.re, {B, Tn, F}),
                                 ops::reshape(est.im, {B, Tn, F}), cfg.stft,
                                 L);

  LossBundle<T> est_b{est_wave, {est.re, est.im}, est.mag_real};
  LossBundle<T> ref_b{g.leaf(ref_wave, false),
                      {g.leaf(ref_re, false), g.leaf(ref_im, false)},
                      g.leaf(ref_mag, false)};
  return hybrid_loss(est_b, ref_b, cfg.loss);
}

// Loss of one batch in eval mode, off the tape.
template <std::floating_point T>
double evaluate_batch(const Uformer<T>& model, ParameterStore<T>& store,
                      const UformerConfig& cfg,
                      const std::vector<MixtureSample<T>>& batch) {
  Graph<T> g;
  RunContext<T> ctx(g, store);
  ctx.train = false;
  ctx.no_grad = true;
  return static_cast<double>(batch_objective(ctx, model, cfg, batch).val()[0]);
}

struct EpochStats {
  std::int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double lr = 0.0;  // rate in force during the epoch
  double grad_norm_mean = 0.0, grad_norm_max = 0.0;  // before clipping
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;

  std::string to_text() const {
    std::ostringstream out;
    out << std::setprecision(6);
    for (const auto& e : epochs) {
      out << "epoch " << e.epoch << ": train " << e.train_loss << " dev "
          << e.dev_loss << " lr " << e.lr << " grad " << e.grad_norm_mean
          << "/" << e.grad_norm_max << " wall " << std::setprecision(2)
          << std::fixed << e.wall_seconds << "s\n";
      out << std::defaultfloat << std::setprecision(6);
    }
    return out.str();
  }

  std::string to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : epochs) {
      arr.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"dev_loss", e.dev_loss},
                     {"lr", e.lr},
                     {"grad_norm_mean", e.grad_norm_mean},
                     {"grad_norm_max", e.grad_norm_max},
                     {"wall_seconds", e.wall_seconds}});
    }
    return nlohmann::json{{"epochs", arr}}.dump(2);
  }
};

// Seed lanes. Lane 0 feeds the dev split; each training step e, s draws its
// data from lane 1 + e * steps + s and its dropout stream from a further
// derivation of that lane, so changing the step count never reshuffles what
// earlier steps saw.
inline std::uint64_t step_data_seed(std::uint64_t seed, std::int64_t epoch,
                                    std::int64_t steps, std::int64_t step) {
  return derive_seed(seed,
                     static_cast<std::uint64_t>(1 + epoch * steps + step));
}

template <std::floating_point T>
TrainReport train_loop(const Uformer<T>& model, ParameterStore<T>& store,
                       AdamState<T>& opt, const UformerConfig& cfg,
                       const Corpus<T>& speech, const Corpus<T>& noise,
                       const std::string& checkpoint_path = "",
                       std::ostream* log = nullptr) {
  const auto& tr = cfg.train;
  require<ConfigError>(tr.epochs > 0 && tr.steps_per_epoch > 0 &&
                           tr.batch_size > 0,
                       "training schedule must be positive");

  const std::int64_t rate = cfg.stft.sample_rate;
  const auto dev_batches = std::max<std::int64_t>(
      1, std::llround(tr.dev_fraction *
                      static_cast<double>(tr.steps_per_epoch)));
  const auto dev_items =
      sample_batch(speech, noise, cfg.data, rate,
                   dev_batches * tr.batch_size, derive_seed(tr.seed, 0));

  auto dev_loss = [&]() {
    double acc = 0.0;
    for (std::int64_t b = 0; b < dev_batches; ++b) {
      const std::vector<MixtureSample<T>> batch(
          dev_items.begin() + b * tr.batch_size,
          dev_items.begin() + (b + 1) * tr.batch_size);
      acc += evaluate_batch(model, store, cfg, batch);
    }
    return acc / static_cast<double>(dev_batches);
  };

  TrainReport report;
  double best_dev = std::numeric_limits<double>::infinity();
  for (std::int64_t e = 0; e < tr.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats stats;
    stats.epoch = e + 1;
    stats.lr = opt.lr;

    double loss_acc = 0.0, norm_acc = 0.0, norm_max = 0.0;
    for (std::int64_t s = 0; s < tr.steps_per_epoch; ++s) {
      const std::uint64_t lane =
          step_data_seed(tr.seed, e, tr.steps_per_epoch, s);
      const auto batch =
          sample_batch(speech, noise, cfg.data, rate, tr.batch_size, lane);

      Graph<T> g;
      RunContext<T> ctx(g, store);
      ctx.train = true;
      ctx.update_stats = true;
      ctx.dropout = cfg.model.dropout;
      ctx.bn_momentum = tr.bn_momentum;
      Rng drop_rng(derive_seed(lane, 1000003));
      ctx.rng = &drop_rng;

      store.zero_grads();
      Value<T> loss = batch_objective(ctx, model, cfg, batch);
      g.backward(loss);
      ctx.harvest_grads();

      const double norm = clip_gradients(store, tr.clip_norm);
      adam_step(store, opt);

      loss_acc += static_cast<double>(loss.val()[0]);
      norm_acc += norm;
      norm_max = std::max(norm_max, norm);
    }

    stats.train_loss = loss_acc / static_cast<double>(tr.steps_per_epoch);
    stats.grad_norm_mean =
        norm_acc / static_cast<double>(tr.steps_per_epoch);
    stats.grad_norm_max = norm_max;
    stats.dev_loss = dev_loss();
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    report.epochs.push_back(stats);

    if (stats.dev_loss < best_dev)
      best_dev = stats.dev_loss;
    else
      opt.lr *= 0.5;

    if (!checkpoint_path.empty())
      save_checkpoint(checkpoint_path, store, cfg, &opt);
    if (log) {
      TrainReport last;
      last.epochs.push_back(stats);
      *log << last.to_text() << std::flush;
    }
  }
  return report;
}

}  // namespace uformer
