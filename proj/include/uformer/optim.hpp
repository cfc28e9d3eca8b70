#pragma once

// Adam with global-norm gradient clipping and a plateau-halving learning
// rate rule. Moment buffers live outside the parameter store, indexed by
// slot, so the optimizer can be dropped or checkpointed without touching
// the model itself. All accumulator arithmetic runs in double regardless
// of the parameter precision.

#include <cmath>
#include <limits>
#include <vector>

#include "uformer/parameters.hpp"

namespace uformer {

template <std::floating_point T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;  // first moments, one per store slot
  std::vector<Tensor<T>> v;  // second moments, one per store slot
};

template <std::floating_point T>
AdamState<T> init_optimizer(const ParameterStore<T>& store, double lr) {
  require<ConfigError>(lr > 0.0, "learning rate must be positive");
  AdamState<T> state;
  state.lr = lr;
  state.m.reserve(store.size());
  state.v.reserve(store.size());
  for (const auto& slot : store) {
    state.m.emplace_back(slot.value.shape());
    state.v.emplace_back(slot.value.shape());
  }
  return state;
}

// Rescales all trainable gradients so their global L2 norm is at most
// max_norm, and returns the norm before clipping. A non-finite norm means
// the backward pass already blew up, which no rescaling can repair.
template <std::floating_point T>
double clip_gradients(ParameterStore<T>& store, double max_norm) {
  require<ValueError>(max_norm > 0.0, "clip threshold must be positive");
  const double norm = store.grad_norm();
  require<NumericError>(std::isfinite(norm),
                        "gradient norm is not finite; training diverged");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& slot : store) {
      if (!slot.trainable) continue;
      for (std::int64_t i = 0; i < slot.grad.numel(); ++i)
        slot.grad[i] = static_cast<T>(static_cast<double>(slot.grad[i]) *
                                      scale);
    }
  }
  return norm;
}

// One bias-corrected Adam update from the gradients currently in the store.
template <std::floating_point T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state) {
  require<ValueError>(state.m.size() == store.size() &&
                          state.v.size() == store.size(),
                      "optimizer state does not match the parameter store");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t s = 0; s < store.size(); ++s) {
    auto& slot = store.at(static_cast<int>(s));
    if (!slot.trainable) continue;
    auto& m = state.m[s];
    auto& v = state.v[s];
    for (std::int64_t i = 0; i < slot.value.numel(); ++i) {
      const double g = static_cast<double>(slot.grad[i]);
      const double mi =
          state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * static_cast<double>(v[i]) +
                        (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update =
          state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      slot.value[i] = static_cast<T>(static_cast<double>(slot.value[i]) -
                                     update);
    }
  }
}

// Learning rate after observing a stream of per-epoch dev losses: halve
// whenever an epoch fails to strictly improve on the best loss so far.
inline double lr_after(const std::vector<double>& dev_losses,
                       double initial_lr) {
  double lr = initial_lr;
  double best = std::numeric_limits<double>::infinity();
  for (const double loss : dev_losses) {
    if (loss < best)
      best = loss;
    else
      lr *= 0.5;
  }
  return lr;
}

}  // namespace uformer
