#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "uformer/parameters.hpp"

namespace uformer {

struct GradCheckReport {
  struct Entry {
    std::string name;
    std::int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
  };

  bool passed = true;
  std::int64_t checked = 0;
  std::int64_t refined = 0;
  Entry worst;
  std::vector<Entry> failures;       // first few offenders, with numbers
  std::vector<std::string> failed_names;  // every failing tensor, no cap

  std::string failures_text() const {
    std::ostringstream os;
    for (const Entry& e : failures)
      os << e.name << "[" << e.index << "] analytic " << e.analytic
         << " numeric " << e.numeric << " rel " << e.rel_err << "\n";
    return os.str();
  }
};

inline double gradcheck_rel_err(double analytic, double numeric) {
  const double scale =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

// Central finite-difference check of a scalar loss against the tape
// gradients of every trainable parameter in the store. Meant for double
// precision; float32 cannot resolve the default step against the default
// tolerance. `stride` thins the probe to every stride-th element of each
// tensor to keep large models tractable.
//
// A mismatch counts only if it also clears `abs_tol`. Some parameters have
// an exactly zero gradient (a bias that shifts every softmax logit equally,
// or one that batch norm subtracts right back out), and there the finite
// difference returns pure roundoff that no relative test can absorb.
//
// A probe that lands within `eps` of a kink (PReLU pivots exactly at zero,
// and batch norm parks many pre-activations there) straddles two slopes and
// the difference quotient is meaningless. Suspicious probes are retried
// with an eight times smaller step: a straddle clears up once the kink
// leaves the bracket, while a wrong derivative keeps disagreeing at every
// step size.
//
// The builder runs once per probe, so it must be deterministic: fixed
// dropout stream, no running-stat updates.
template <std::floating_point T>
GradCheckReport gradient_check(
    ParameterStore<T>& store,
    const std::function<Value<T>(RunContext<T>&)>& build_loss,
    double eps = 1e-4, double tol = 1e-3, std::int64_t stride = 1,
    const std::string& corrupt_name = "", double abs_tol = 1e-7) {
  require(eps > 0 && tol > 0 && stride >= 1, "bad gradient check settings");

  // Analytic pass.
  store.zero_grads();
  {
    Graph<T> g;
    RunContext<T> ctx{g, store};
    ctx.train = true;
    Value<T> loss = build_loss(ctx);
    require<ShapeError>(loss.val().numel() == 1,
                        "gradient check loss must be scalar");
    g.backward(loss);
    ctx.harvest_grads();
  }
  if (!corrupt_name.empty()) {
    const int slot = store.find(corrupt_name);
    require<ConfigError>(slot >= 0, "no parameter named " + corrupt_name);
    store.at(slot).grad[0] += T(1);
  }

  auto eval_loss = [&]() -> double {
    Graph<T> g;
    g.set_finite_checks(false);
    RunContext<T> ctx{g, store};
    ctx.train = true;
    ctx.no_grad = true;
    return static_cast<double>(build_loss(ctx).val()[0]);
  };

  GradCheckReport report;
  for (std::size_t s = 0; s < store.size(); ++s) {
    auto& slot = store.at(static_cast<int>(s));
    if (!slot.trainable) continue;
    for (std::int64_t i = 0; i < slot.value.numel(); i += stride) {
      const auto probe = [&](double step) -> double {
        const T saved = slot.value[i];
        slot.value[i] = saved + static_cast<T>(step);
        const double lp = eval_loss();
        slot.value[i] = saved - static_cast<T>(step);
        const double lm = eval_loss();
        slot.value[i] = saved;
        return (lp - lm) / (2.0 * step);
      };

      GradCheckReport::Entry e;
      e.name = slot.name;
      e.index = i;
      e.analytic = static_cast<double>(slot.grad[i]);
      e.numeric = probe(eps);
      e.rel_err = gradcheck_rel_err(e.analytic, e.numeric);
      ++report.checked;
      if (std::abs(e.analytic - e.numeric) <= abs_tol) continue;
      if (e.rel_err > tol) {
        e.numeric = probe(eps / 8.0);
        e.rel_err = gradcheck_rel_err(e.analytic, e.numeric);
        ++report.refined;
        if (std::abs(e.analytic - e.numeric) <= abs_tol) continue;
      }
      if (e.rel_err > report.worst.rel_err) report.worst = e;
      if (e.rel_err > tol) {
        report.passed = false;
        if (report.failures.size() < 16) report.failures.push_back(e);
        if (report.failed_names.empty() ||
            report.failed_names.back() != e.name)
          report.failed_names.push_back(e.name);
      }
    }
  }
  return report;
}

}  // namespace uformer
