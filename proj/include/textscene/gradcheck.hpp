#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "textscene/autodiff.hpp"

namespace textscene {

struct GradCheckOptions {
  double epsilon = 1e-6;
  // Entries compared per parameter tensor, sampled without replacement.
  // Zero means every entry.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  // Relative error uses max(|analytic|, |numeric|, floor) as denominator so
  // that entries with vanishing gradient are judged on absolute error.
  double floor = 1e-7;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<double> per_param;  // worst error for each entry of `params`
  std::size_t entries_checked = 0;
};

// Builds a scalar loss on the given tape. Parameters must enter the graph via
// tape.leaf(param) so the checker can perturb them in place.
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

// Compares reverse-mode gradients with central differences
// (f(x + eps) - f(x - eps)) / (2 eps). Parameter values and grads are
// restored before returning.
GradCheckResult grad_check(const LossBuilder& f, std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace textscene
