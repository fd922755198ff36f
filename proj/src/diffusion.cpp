#include "guidefree/diffusion.hpp"

#include <cmath>
#include <string>

namespace guidefree {

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max)) {
    throw std::invalid_argument("schedule needs 0 < sigma_min < sigma_max");
  }
  if (steps < 2) throw std::invalid_argument("schedule needs at least 2 sampling steps");
  if (!(rho > 0.0)) throw std::invalid_argument("schedule exponent rho must be positive");
  if (!(sigma_data > 0.0)) throw std::invalid_argument("sigma_data must be positive");
  const double lo = train_sigma_min.value_or(sigma_min);
  const double hi = train_sigma_max.value_or(sigma_max);
  if (!(lo > 0.0) || !(hi > lo) || !std::isfinite(hi)) {
    throw std::invalid_argument("training noise interval needs 0 < train_sigma_min < train_sigma_max");
  }
}

double NoiseSchedule::weight(Weighting w, double sigma) const {
  switch (w) {
    case Weighting::Constant:
      return 1.0;
    case Weighting::InverseVariance:
      return 1.0 / (sigma * sigma);
    case Weighting::EdmBalanced: {
      const double sd2 = sigma_data * sigma_data;
      return (sigma * sigma + sd2) / (sigma * sigma * sd2);
    }
  }
  return 1.0;
}

double NoiseSchedule::draw_sigma(Rng& rng) const {
  const double lo = std::log(train_sigma_min.value_or(sigma_min));
  const double hi = std::log(train_sigma_max.value_or(sigma_max));
  return std::exp(lo + (hi - lo) * rng.uniform());
}

void GuidanceSpec::validate() const {
  if (mode != GuidanceMode::None && !(gamma >= -1.0)) {
    throw std::invalid_argument("guidance strength must be >= -1");
  }
}

Tensor corrupt(const Tensor& x, std::span<const double> sigma, const Tensor& eps) {
  require_same_shape(x, eps, "corrupt");
  if (sigma.size() != x.rows()) throw ShapeError("corrupt: one noise level per row required");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) + sigma[r] * eps(r, c);
  }
  return out;
}

Tensor corrupt(const Tensor& x, double sigma, const Tensor& eps) {
  const std::vector<double> s(x.rows(), sigma);
  return corrupt(x, s, eps);
}

Tensor score_from_denoiser(const Tensor& d_out, const Tensor& x_t, std::span<const double> sigma) {
  require_same_shape(d_out, x_t, "score_from_denoiser");
  if (sigma.size() != x_t.rows()) throw ShapeError("score_from_denoiser: one noise level per row required");
  Tensor out = d_out;
  for (std::size_t r = 0; r < x_t.rows(); ++r) {
    if (!(sigma[r] > 0.0)) throw std::invalid_argument("score_from_denoiser: sigma must be positive");
    const double inv = 1.0 / (sigma[r] * sigma[r]);
    for (std::size_t c = 0; c < x_t.cols(); ++c) out(r, c) = (d_out(r, c) - x_t(r, c)) * inv;
  }
  return out;
}

Tensor guided_score(const Tensor& s_plus, const Tensor& s_minus, double gamma) {
  require_same_shape(s_plus, s_minus, "guided_score");
  Tensor out = s_plus;
  auto& v = out.values();
  const auto& m = s_minus.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] + gamma * (v[i] - m[i]);
  return out;
}

std::vector<double> sigma_grid(const NoiseSchedule& schedule) {
  schedule.validate();
  const int n = schedule.steps;
  const double inv_rho = 1.0 / schedule.rho;
  const double a = std::pow(schedule.sigma_max, inv_rho);
  const double b = std::pow(schedule.sigma_min, inv_rho);
  std::vector<double> grid(n);
  for (int i = 0; i < n - 1; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    grid[i] = std::pow(a + t * (b - a), schedule.rho);
  }
  grid[0] = schedule.sigma_max;
  grid[n - 1] = 0.0;
  return grid;
}

ScoreSource model_score_source(const DenoiserModel& model) {
  return [&model](const Tensor& x, double sigma, int class_id) {
    const std::vector<double> s(x.rows(), sigma);
    const std::vector<int> c(x.rows(), class_id);
    return score_from_denoiser(forward(model, x, s, c), x, s);
  };
}

ScoreSource world_score_source(const GaussianMixtureWorld& world) {
  return [&world](const Tensor& x, double sigma, int class_id) {
    if (x.cols() != 2) throw ShapeError("world scores are two-dimensional");
    Tensor out = Tensor::matrix(x.rows(), 2);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const Eigen::Vector2d p(x(r, 0), x(r, 1));
      const Eigen::Vector2d s = class_id == kNullClass ? noised_uncond_score(world, p, sigma)
                                                       : noised_cond_score(world, p, sigma, class_id);
      out(r, 0) = s(0);
      out(r, 1) = s(1);
    }
    return out;
  };
}

Tensor initial_latent(const NoiseSchedule& schedule, std::size_t n, std::size_t dim, Rng& rng) {
  Tensor x = Tensor::matrix(n, dim);
  for (double& v : x.values()) v = schedule.sigma_max * rng.normal();
  return x;
}

namespace {

using Drift = std::function<Tensor(const Tensor&, double)>;

Tensor integrate(const Drift& score, const NoiseSchedule& schedule, const Tensor& latent) {
  const std::vector<double> grid = sigma_grid(schedule);
  Tensor x = latent;
  auto& xv = x.values();
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double s0 = grid[i];
    const double s1 = grid[i + 1];
    const double h = s1 - s0;
    const Tensor g0 = score(x, s0);
    const auto& g0v = g0.values();
    // d = dx/dsigma = -sigma * score
    if (s1 == 0.0) {
      for (std::size_t k = 0; k < xv.size(); ++k) xv[k] += h * (-s0 * g0v[k]);
    } else {
      Tensor pred = x;
      auto& pv = pred.values();
      for (std::size_t k = 0; k < pv.size(); ++k) pv[k] += h * (-s0 * g0v[k]);
      const Tensor g1 = score(pred, s1);
      const auto& g1v = g1.values();
      for (std::size_t k = 0; k < xv.size(); ++k) xv[k] += h * 0.5 * ((-s0 * g0v[k]) + (-s1 * g1v[k]));
    }
    if (!x.all_finite()) {
      throw SamplingDiverged("non-finite sampler state at step " + std::to_string(i) + " (sigma " +
                             std::to_string(s0) + ")");
    }
  }
  return x;
}

}  // namespace

Tensor sample_ode_from(const ScoreSource& score, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                       int class_id, const Tensor& latent) {
  guidance.validate();
  if (guidance.mode == GuidanceMode::TwoScore) {
    throw std::invalid_argument("two-score guidance needs sample_ode_two_score");
  }
  if (guidance.mode == GuidanceMode::None) {
    return integrate([&](const Tensor& x, double s) { return score(x, s, class_id); }, schedule, latent);
  }
  const double gamma = guidance.gamma;
  return integrate(
      [&](const Tensor& x, double s) { return guided_score(score(x, s, class_id), score(x, s, kNullClass), gamma); },
      schedule, latent);
}

Tensor sample_ode(const ScoreSource& score, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                  int class_id, std::size_t n, Rng& rng, std::size_t dim) {
  const Tensor latent = initial_latent(schedule, n, dim, rng);
  return sample_ode_from(score, schedule, guidance, class_id, latent);
}

Tensor sample_ode_two_score(const std::function<Tensor(const Tensor&, double)>& plus,
                            const std::function<Tensor(const Tensor&, double)>& minus,
                            const NoiseSchedule& schedule, double gamma, const Tensor& latent) {
  return integrate([&](const Tensor& x, double s) { return guided_score(plus(x, s), minus(x, s), gamma); },
                   schedule, latent);
}

}  // namespace guidefree
