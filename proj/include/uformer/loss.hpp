#pragma once

#include <cmath>
#include <vector>

#include "uformer/config.hpp"
#include "uformer/ops.hpp"

namespace uformer {

// The four training objectives. Waveform losses accept [L] or [B, L],
// spectral losses [T, F] up to [B, 1, T, F]; a leading batch axis is
// averaged, everything else is summed as printed (the L2 terms divide by the
// bin count on top).

namespace loss_detail {

template <std::floating_point T>
void check_pair(const Value<T>& est, const Value<T>& ref) {
  require<ShapeError>(est.valid() && ref.valid(), "loss input is empty");
  require<ShapeError>(est.shape() == ref.shape(),
                      "loss operands disagree: " + shape_str(est.shape()) +
                          " vs " + shape_str(ref.shape()));
}

inline constexpr double kSiSnrEps = 1e-8;

}  // namespace loss_detail

// Negative scale-invariant SNR in decibels. The reference is rescaled by
// xi = <est, ref> / <ref, ref> so that the residual est - xi.ref is
// orthogonal to it; the epsilon only guards the perfect-reconstruction case
// where the residual vanishes.
template <std::floating_point T>
Value<T> si_snr_loss(Value<T> est, Value<T> ref) {
  loss_detail::check_pair(est, ref);
  const std::size_t rank = est.shape().size();
  require<ShapeError>(rank == 1 || rank == 2,
                      "si_snr_loss expects [L] or [B, L]");
  const std::int64_t B = rank == 2 ? est.shape()[0] : 1;
  const std::int64_t L = est.shape()[rank - 1];

  const T db_scale = static_cast<T>(-20.0 / std::log(10.0));
  Value<T> total;
  for (std::int64_t b = 0; b < B; ++b) {
    Value<T> e = est, r = ref;
    if (rank == 2) {
      e = ops::reshape(ops::slice(est, 0, b, 1), {L});
      r = ops::reshape(ops::slice(ref, 0, b, 1), {L});
    }
    bool silent = true;
    for (std::int64_t i = 0; i < L && silent; ++i)
      silent = r.val()[i] == T(0);
    require<ValueError>(!silent, "si_snr_loss reference is all zero");

    Value<T> xi = ops::div(ops::sum_all(ops::mul(e, r)),
                           ops::sum_all(ops::square(r)));
    Value<T> target = ops::mul(xi, r);
    Value<T> resid = ops::sub(e, target);
    Value<T> num = ops::sqrt(ops::sum_all(ops::square(target)));
    Value<T> den = ops::shift(ops::sqrt(ops::sum_all(ops::square(resid))),
                              static_cast<T>(loss_detail::kSiSnrEps));
    Value<T> item = ops::scale(ops::log(ops::div(num, den)), db_scale);
    total = total.valid() ? ops::add(total, item) : item;
  }
  return B > 1 ? ops::scale(total, T(1) / static_cast<T>(B)) : total;
}

// Sum of absolute sample differences, deliberately not normalised by length.
template <std::floating_point T>
Value<T> l1_time(Value<T> est, Value<T> ref) {
  loss_detail::check_pair(est, ref);
  const std::size_t rank = est.shape().size();
  require<ShapeError>(rank == 1 || rank == 2,
                      "l1_time expects [L] or [B, L]");
  const std::int64_t B = rank == 2 ? est.shape()[0] : 1;
  Value<T> sum = ops::sum_all(ops::abs(ops::sub(est, ref)));
  return B > 1 ? ops::scale(sum, T(1) / static_cast<T>(B)) : sum;
}

namespace loss_detail {

template <std::floating_point T>
Value<T> spectral_l2(Value<T> sq_sum, const Shape& shape) {
  const std::size_t rank = shape.size();
  require<ShapeError>(rank >= 2 && rank <= 4,
                      "spectral loss expects [T, F] up to [B, 1, T, F]");
  const std::int64_t B = rank >= 3 ? shape[0] : 1;
  const std::int64_t F = shape[rank - 1];
  return ops::scale(sq_sum, T(1) / static_cast<T>(B * F));
}

}  // namespace loss_detail

// Squared error summed over frames and bins, divided by the bin count.
template <std::floating_point T>
Value<T> l2_complex(CValue<T> est, CValue<T> ref) {
  loss_detail::check_pair(est.re, ref.re);
  loss_detail::check_pair(est.im, ref.im);
  Value<T> sq = ops::sum_all(
      ops::add(ops::square(ops::sub(est.re, ref.re)),
               ops::square(ops::sub(est.im, ref.im))));
  return loss_detail::spectral_l2(sq, est.re.shape());
}

template <std::floating_point T>
Value<T> l2_magnitude(Value<T> est, Value<T> ref) {
  loss_detail::check_pair(est, ref);
  Value<T> sq = ops::sum_all(ops::square(ops::sub(est, ref)));
  return loss_detail::spectral_l2(sq, est.shape());
}

// Everything the objective needs from one forward pass: the resynthesised
// waveform, the fused complex spectrum, and the magnitude branch's own
// estimate (invalid when that branch does not exist, which drops the zeta
// term).
template <std::floating_point T>
struct LossBundle {
  Value<T> wave;
  CValue<T> spec;
  Value<T> mag;
};

template <std::floating_point T>
Value<T> hybrid_loss(const LossBundle<T>& est, const LossBundle<T>& ref,
                     const LossSettings& w) {
  Value<T> total = ops::scale(si_snr_loss(est.wave, ref.wave),
                              static_cast<T>(w.alpha));
  total = ops::add(total, ops::scale(l1_time(est.wave, ref.wave),
                                     static_cast<T>(w.beta)));
  total = ops::add(total, ops::scale(l2_complex(est.spec, ref.spec),
                                     static_cast<T>(w.gamma)));
  if (est.mag.valid())
    total = ops::add(total, ops::scale(l2_magnitude(est.mag, ref.mag),
                                       static_cast<T>(w.zeta)));
  return total;
}

// Plain scale-invariant SNR in decibels, for reporting. Positive is good;
// this is the negation of si_snr_loss evaluated off the graph.
template <std::floating_point T>
double si_snr_db(const std::vector<T>& est, const std::vector<T>& ref) {
  require<ShapeError>(est.size() == ref.size() && !ref.empty(),
                      "si_snr_db length mismatch");
  double er = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    er += static_cast<double>(est[i]) * static_cast<double>(ref[i]);
    rr += static_cast<double>(ref[i]) * static_cast<double>(ref[i]);
  }
  require<ValueError>(rr > 0.0, "si_snr_db reference is all zero");
  const double xi = er / rr;
  double tp = 0.0, rp = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = xi * static_cast<double>(ref[i]);
    const double r = static_cast<double>(est[i]) - t;
    tp += t * t;
    rp += r * r;
  }
  return 20.0 *
         std::log10(std::sqrt(tp) /
                    (std::sqrt(rp) + loss_detail::kSiSnrEps));
}

}  // namespace uformer
