#include "guidefree/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "guidefree/tensor.hpp"

namespace guidefree {

AdamState AdamState::fresh(std::size_t parameter_count, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  s.first_moment.assign(parameter_count, 0.0);
  s.second_moment.assign(parameter_count, 0.0);
  return s;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

GradCheckReport grad_check(const LossWithGrad& loss, std::span<const double> params,
                           std::size_t probe_count, Rng& rng, double step, double floor) {
  std::vector<double> theta(params.begin(), params.end());
  std::vector<double> analytic(theta.size(), 0.0);
  std::vector<double> scratch(theta.size(), 0.0);
  loss(theta, analytic);

  // Sample distinct coordinates.
  std::vector<std::size_t> order(theta.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = std::min(probe_count, theta.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(theta.size() - i);
    std::swap(order[i], order[j]);
  }

  GradCheckReport report;
  report.probed = n;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = order[k];
    const double saved = theta[idx];
    theta[idx] = saved + step;
    std::fill(scratch.begin(), scratch.end(), 0.0);
    const double up = loss(theta, scratch);
    theta[idx] = saved - step;
    std::fill(scratch.begin(), scratch.end(), 0.0);
    const double down = loss(theta, scratch);
    theta[idx] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic[idx] - numeric) / std::max({std::abs(analytic[idx]), std::abs(numeric), floor});
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = idx;
    }
  }
  return report;
}

}  // namespace guidefree
