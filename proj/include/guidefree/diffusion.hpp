#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "guidefree/denoiser.hpp"
#include "guidefree/rng.hpp"
#include "guidefree/tensor.hpp"
#include "guidefree/worlds.hpp"

namespace guidefree {

enum class NoiseLaw { LogUniform };

enum class Weighting { Constant, InverseVariance, EdmBalanced };

/// Variance-exploding schedule: x_sigma = x + sigma * eps, sigma is the clock.
struct NoiseSchedule {
  double sigma_min = 0.02;
  double sigma_max = 10.0;
  NoiseLaw law = NoiseLaw::LogUniform;
  // Training noise-law interval; [sigma_min, sigma_max] when unset. The
  // sampling grid always spans [sigma_min, sigma_max].
  std::optional<double> train_sigma_min;
  std::optional<double> train_sigma_max;
  Weighting weighting = Weighting::EdmBalanced;              // denoising loss
  Weighting contrastive_weighting = Weighting::Constant;     // contrastive margins
  double sigma_data = 0.5;  // only read by EdmBalanced
  int steps = 64;
  double rho = 7.0;

  /// Throws std::invalid_argument unless 0 < sigma_min < sigma_max, steps >= 2,
  /// rho > 0, sigma_data > 0 and the training interval is positive and ordered.
  void validate() const;

  double weight(double sigma) const { return weight(weighting, sigma); }
  double contrastive_weight(double sigma) const { return weight(contrastive_weighting, sigma); }
  double weight(Weighting w, double sigma) const;
  /// log-uniform over the training interval.
  double draw_sigma(Rng& rng) const;

  bool operator==(const NoiseSchedule&) const = default;
};

enum class GuidanceMode { None, Cfg, TwoScore };

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::None;
  double gamma = 0.0;

  /// gamma, or 0 when mode is None.
  double effective_gamma() const { return mode == GuidanceMode::None ? 0.0 : gamma; }
  void validate() const;

  bool operator==(const GuidanceSpec&) const = default;
};

class SamplingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// x + sigma_i * eps_i row by row.
Tensor corrupt(const Tensor& x, std::span<const double> sigma, const Tensor& eps);
Tensor corrupt(const Tensor& x, double sigma, const Tensor& eps);

/// (d_out - x_t) / sigma_i^2 row by row; throws std::invalid_argument on sigma <= 0.
Tensor score_from_denoiser(const Tensor& d_out, const Tensor& x_t, std::span<const double> sigma);

/// s_plus + gamma * (s_plus - s_minus).
Tensor guided_score(const Tensor& s_plus, const Tensor& s_minus, double gamma);

/// N decreasing levels from sigma_max; the last entry is exactly 0.
std::vector<double> sigma_grid(const NoiseSchedule& schedule);

/// Score of the batch x at a shared noise level for one class id
/// (kNullClass requests the unconditional score).
using ScoreSource = std::function<Tensor(const Tensor& x, double sigma, int class_id)>;

/// Learned score: both channels come from the same model, the unconditional
/// one through the null embedding row.
ScoreSource model_score_source(const DenoiserModel& model);

/// Exact noised score of an analytic world.
ScoreSource world_score_source(const GaussianMixtureWorld& world);

/// Rows x ~ N(0, sigma_max^2 I).
Tensor initial_latent(const NoiseSchedule& schedule, std::size_t n, std::size_t dim, Rng& rng);

/// Probability-flow integration dx/dsigma = -sigma * s(x, sigma) along
/// sigma_grid: Heun per interval, Euler on the last step to sigma = 0.
/// The drift is the class score (None) or its CFG combination with the
/// null channel (Cfg); TwoScore is only valid in sample_ode_two_score.
/// Throws SamplingDiverged on a non-finite state.
Tensor sample_ode(const ScoreSource& score, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                  int class_id, std::size_t n, Rng& rng, std::size_t dim = 2);

/// As sample_ode but from a caller-supplied latent (shared-noise comparisons).
Tensor sample_ode_from(const ScoreSource& score, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                       int class_id, const Tensor& latent);

/// Generalised guidance with arbitrary positive and negative score fields:
/// drift s_plus + gamma (s_plus - s_minus).
Tensor sample_ode_two_score(const std::function<Tensor(const Tensor&, double)>& plus,
                            const std::function<Tensor(const Tensor&, double)>& minus,
                            const NoiseSchedule& schedule, double gamma, const Tensor& latent);

}  // namespace guidefree
