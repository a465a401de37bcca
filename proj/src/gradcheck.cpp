#include "textscene/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "textscene/error.hpp"

namespace textscene {

namespace {

double evaluate(const LossBuilder& f) {
  ad::Tape tape;
  const double v = f(tape).item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& f, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  if (!(options.epsilon >= 1e-7 && options.epsilon <= 1e-3)) {
    throw UsageError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  }
  std::vector<bool> saved_flags;
  std::vector<std::vector<double>> saved_grads;
  for (auto* p : params) {
    saved_flags.push_back(p->requires_grad);
    saved_grads.push_back(p->grad);
    p->requires_grad = true;
    p->zero_grad();
  }
  {
    ad::Tape tape;
    auto loss = f(tape);
    if (!std::isfinite(loss.item())) {
      throw NumericalError("grad_check: loss evaluated to a non-finite value");
    }
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  const double eps = options.epsilon;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries_per_param > 0 && options.max_entries_per_param < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_param);
      std::sort(idx.begin(), idx.end());
    }
    double worst = 0.0;
    for (auto i : idx) {
      const double x0 = p.data[i];
      p.data[i] = x0 + eps;
      const double fp = evaluate(f);
      p.data[i] = x0 - eps;
      const double fm = evaluate(f);
      p.data[i] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
      ++result.entries_checked;
    }
    result.per_param.push_back(worst);
    result.max_relative_error = std::max(result.max_relative_error, worst);
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->requires_grad = saved_flags[k];
    params[k]->grad = std::move(saved_grads[k]);
  }
  return result;
}

}  // namespace textscene
