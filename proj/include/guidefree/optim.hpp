#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "guidefree/rng.hpp"

namespace guidefree {

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  static AdamState fresh(std::size_t parameter_count, double learning_rate);
};

/// Bias-corrected adaptive-moment update, in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

/// Scalar loss with its gradient written into the second argument (sized
/// like the parameters, zeroed by the caller).
using LossWithGrad = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t probed = 0;
  std::size_t worst_index = 0;
};

/// Compares the analytic gradient against central differences on
/// probe_count randomly chosen coordinates. Relative error is
/// |a - n| / max(|a|, |n|, floor); the floor keeps round-off in
/// coordinates with vanishing gradient from dominating.
GradCheckReport grad_check(const LossWithGrad& loss, std::span<const double> params,
                           std::size_t probe_count, Rng& rng, double step = 1e-5,
                           double floor = 1e-6);

}  // namespace guidefree
