#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "guidefree/rng.hpp"
#include "guidefree/worlds.hpp"

namespace guidefree {

/// Probability vector over a finite support.
struct SimplexDist {
  std::vector<double> p;

  int support() const { return static_cast<int>(p.size()); }
  double sum() const;
};

double total_variation(const std::vector<double>& a, const std::vector<double>& b);
double total_variation(const SimplexDist& a, const SimplexDist& b);

class NotConverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Likelihood-ratio regularized optimum.

struct BisectionReport {
  double lambda = 0.0;
  int iterations = 0;
  double residual = 0.0;  // |A(lambda) - m|
  double target_mass = 1.0;  // m = 1 - delta * #{h <= 0}
  double lambda_lo = 0.0;
  double lambda_hi = 0.0;
  double mass_at_lo = 0.0;  // A(lambda_lo) >= m
  double mass_at_hi = 0.0;  // A(lambda_hi) <= m
  std::vector<std::pair<double, double>> trace;  // (lambda, A(lambda)) per midpoint
};

struct MclrSolution {
  SimplexDist dist;
  BisectionReport report;
  std::vector<double> h;
};

/// h = base(., c) + eta (p(.|c) - p(.)), base = p(.|c) unless given.
std::vector<double> mclr_target(const DiscreteProblem& problem, int c, double eta,
                                const ConditionalTable* base = nullptr);

/// A(lambda) = sum over h > 0 of max(h / lambda, delta).
double clipped_mass(const std::vector<double>& h, double lambda, double delta);

/// max(h / lambda*, delta) with A(lambda*) = 1 - delta #{h <= 0}; entries with
/// h <= 0 sit at delta. Geometric bisection on [1e-12, max(h) / delta], at
/// most 200 steps, then an exact solve on the active set.
/// Throws std::invalid_argument unless 0 < delta < 1/S and eta >= 0, and
/// NotConverged when the residual stays above 1e-12.
MclrSolution mclr_optimum(const DiscreteProblem& problem, int c, double eta, double delta,
                          const ConditionalTable* base = nullptr);

/// h+ renormalized; throws std::invalid_argument when h <= 0 everywhere.
SimplexDist mclr_optimum_limit(const DiscreteProblem& problem, int c, double eta,
                               const ConditionalTable* base = nullptr);

// ---------------------------------------------------------------------------
// Preference-based optimum.

/// p_ref (p(.|c) / p(.))^(1/beta) renormalized, with 0 (0/0) := 0.
SimplexDist ccdpo_optimum(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta);

enum class RewardFlag { Finite, PlusInfinity, MinusInfinity, Undefined };

struct RewardVector {
  std::vector<double> reward;
  std::vector<RewardFlag> flag;
};

/// log(p(x|c) / p(x)); -inf where only p(x|c) vanishes, NaN (Undefined)
/// where both vanish. p(x|c) > 0 with p(x) = 0 cannot occur for positive
/// priors and raises std::logic_error.
RewardVector dpo_optimal_reward(const DiscreteProblem& problem, int c);

// ---------------------------------------------------------------------------
// Exact population functionals on a full model table q(x|c).

/// sum_{x,c} coef(x,c) log q(x|c) + constant; coefficients with value 0
/// contribute nothing even where q = 0.
struct LogLinearObjective {
  ConditionalTable coef;
  double constant = 0.0;

  double value(const ConditionalTable& q) const;
};

/// E_{c, p(x|c)} log q(x|c) + eta E_{c, c~, x ~ p(.|c)} log(q(x|c) / q(x|c~)),
/// with c and c~ drawn independently from the priors. Built by enumerating
/// the expectation term by term.
LogLinearObjective likelihood_ratio_objective(const DiscreteProblem& problem, double eta);

/// -E_c KL(p_ref(.|c) || q(.|c)) + eta times the mismatch regularizer.
LogLinearObjective kl_likelihood_ratio_objective(const DiscreteProblem& problem, const ConditionalTable& p_ref,
                                                 double eta);

/// sum_x target(x) log q(x) as a one-column objective.
LogLinearObjective log_likelihood_objective(const std::vector<double>& target);

/// (eta/2) E[log q(x|c)/q(x|c~) + log q(y|c~)/q(y|c)] with x ~ p(.|c), y ~ p(.|c~); eta = 1.
double regularizer_symmetric(const DiscreteProblem& problem, const ConditionalTable& q);
/// E[log q(x|c)/q(x|c~)] with x ~ p(.|c).
double regularizer_mismatch(const DiscreteProblem& problem, const ConditionalTable& q);
/// E[log q(x|c)/q(y|c)] with x ~ p(.|c), y ~ p(.).
double regularizer_marginal(const DiscreteProblem& problem, const ConditionalTable& q);

struct BruteForceOptions {
  int restarts = 50;
  int iterations = 4000;
  double initial_step = 0.1;
  std::uint64_t seed = 1;
};

/// Maximizes a log-linear objective over tables whose columns lie on the
/// floored simplex {q >= delta, sum q = 1}: exponentiated-gradient ascent
/// on q - delta with Armijo backtracking, from Dirichlet restarts. Returns
/// the best final iterate.
ConditionalTable brute_force_table(const LogLinearObjective& objective, double delta,
                                   const BruteForceOptions& options = {});

/// One-column form of brute_force_table.
SimplexDist brute_force_simplex(const LogLinearObjective& objective, double delta,
                                const BruteForceOptions& options = {});

// ---------------------------------------------------------------------------
// Contrastive objectives over a positive table model.

enum class ContrastiveKind { CcDpo, Cca };

struct ContrastiveSpec {
  ContrastiveKind kind = ContrastiveKind::CcDpo;
  double beta = 1.0;
  std::optional<double> lambda;  // cca only; defaults to cca_normalizing_lambda
};

struct ContrastiveSolution {
  SimplexDist dist;
  double unnormalized_mass = 0.0;  // sum of the optimal positive table
  double lambda = 0.0;             // cca only
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// lambda with lambda^(1/beta) = sum_x p_ref(x|c) (p(x|c) / p(x))^(1/beta).
double cca_normalizing_lambda(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta);

/// Population preference objective for class c at log-table theta:
/// E_{c~, x_w ~ p(.|c), x_l ~ p(.|c~)} log sigmoid(beta (theta - log p_ref)(x_w) - beta (theta - log p_ref)(x_l)).
double ccdpo_population_objective(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta,
                                  const std::vector<double>& theta);

/// Population noise-contrastive objective at log-table theta:
/// E_{p(x|c)} log sigmoid(r) + lambda E_{p(x)} log sigmoid(-r), r = beta (theta - log p_ref).
double cca_population_objective(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta,
                                double lambda, const std::vector<double>& theta);

/// Maximizes the chosen population objective by enumeration: damped Newton
/// on the log-table (one coordinate pinned for the shift-invariant
/// preference objective, per-coordinate safeguarded Newton for the
/// separable noise-contrastive one). Entries with p(x|c) = 0 are 0.
/// Throws NotConverged if the gradient norm stays above 1e-10.
ContrastiveSolution brute_force_contrastive(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c,
                                            const ContrastiveSpec& spec, int iterations = 200);

// ---------------------------------------------------------------------------
// Guided score as the minimizer of an adaptively weighted objective.

struct GuidancePoint {
  double x_t = 0.0;
  double analytic = 0.0;     // (1 + eta) score_plus - eta score_minus
  double monte_carlo = 0.0;  // minimizer of the sampled quadratic
  double standard_error = 0.0;
  double weight_ratio = 0.0;         // p+_sigma(x_t) / p-_sigma(x_t)
  double weight_ratio_direct = 0.0;  // the same ratio through the per-class density path
  double deviation = 0.0;
  bool within = false;
};

struct GuidanceReport {
  double eta = 0.0;
  double sigma = 0.0;
  int class_id = 0;
  std::size_t mc_samples = 0;
  double se_multiple = 3.0;
  std::vector<GuidancePoint> points;
  double max_deviation = 0.0;
  double max_z = 0.0;
  bool passed = false;
};

/// At each grid point the weighted objective in s
///   (1+eta) p+(x_t) E_{x ~ p+(x|x_t)} |T - s|^2 - eta p-(x_t) w(x_t) E_{x ~ p-(x|x_t)} |T - s|^2,
/// with T = (x - x_t) / sigma^2, noised densities p+, p- and adaptive weight
/// w = p+ / p-, is a quadratic whose coefficients are estimated from exact
/// posterior draws. Its minimizer is compared with the analytic guided
/// score within se_multiple standard errors. The plus and minus draws come
/// from rng.fork(1) and rng.fork(2), the same streams at every grid point,
/// so errors are correlated across points; rng itself is not advanced.
GuidanceReport verify_guidance_pair(const std::vector<Component1d>& plus, const std::vector<Component1d>& minus,
                                    double eta, double sigma, const std::vector<double>& grid,
                                    std::size_t mc_samples, Rng& rng, double se_multiple = 3.0);

/// verify_guidance_pair with p+ = p(x|c) and p- = p(x) of a 1D world.
GuidanceReport verify_theorem3(const Mixture1dWorld& world, int class_id, double eta, double sigma,
                               const std::vector<double>& grid, std::size_t mc_samples, Rng& rng,
                               double se_multiple = 3.0);

/// Prior-weighted union of all class components.
std::vector<Component1d> marginal_components(const Mixture1dWorld& world);

/// n evenly spaced points on [lo, hi].
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace guidefree
