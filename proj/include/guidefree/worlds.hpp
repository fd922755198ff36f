#pragma once

#include <Eigen/Core>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "guidefree/rng.hpp"
#include "guidefree/tensor.hpp"

namespace guidefree {

class WorldError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Continuous 2D class-conditional Gaussian mixtures.

struct GaussianComponent {
  double weight = 1.0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();

  bool operator==(const GaussianComponent& o) const { return weight == o.weight && mean == o.mean && cov == o.cov; }
};

struct ClassMixture {
  std::vector<GaussianComponent> components;

  bool operator==(const ClassMixture&) const = default;
};

/// Ground-truth p(c) and p(x|c). Every p_sigma(x|c) stays a Gaussian
/// mixture with covariances Sigma + sigma^2 I, so densities and scores are
/// closed-form at every noise level.
struct GaussianMixtureWorld {
  std::vector<double> priors;
  std::vector<ClassMixture> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }

  /// Throws WorldError unless priors and component weights sum to 1 within
  /// 1e-12 and every covariance is symmetric positive definite.
  void validate() const;

  bool operator==(const GaussianMixtureWorld&) const = default;
};

/// Two classes, two components each, means on a circle of radius 2 and
/// covariance 0.25 I. Class 0 sits at angles {0, pi}, class 1 at
/// {separation, separation + pi}.
GaussianMixtureWorld default_world(double separation_radians = 0.6);

/// Single class holding one Gaussian component.
GaussianMixtureWorld single_gaussian_world(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov);

struct LabeledBatch {
  Tensor x;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// i.i.d. draws (c, x) ~ p(c) p(x|c).
LabeledBatch sample_labeled(const GaussianMixtureWorld& world, std::size_t n, Rng& rng);

/// Draws x ~ p(x|c) for a fixed class.
Tensor sample_class(const GaussianMixtureWorld& world, int c, std::size_t n, Rng& rng);

double log_cond_density(const GaussianMixtureWorld& world, const Eigen::Vector2d& x, double sigma, int c);
double log_marginal_density(const GaussianMixtureWorld& world, const Eigen::Vector2d& x, double sigma);

/// grad_x log p_sigma(x|c).
Eigen::Vector2d noised_cond_score(const GaussianMixtureWorld& world, const Eigen::Vector2d& x,
                                  double sigma, int c);
/// grad_x log p_sigma(x), p_sigma(x) = sum_c p(c) p_sigma(x|c).
Eigen::Vector2d noised_uncond_score(const GaussianMixtureWorld& world, const Eigen::Vector2d& x,
                                    double sigma);

/// Posterior mean E[x | x_t] under p(x|c) (class_id >= 0) or p(x) (kNullClass).
Eigen::Vector2d posterior_mean(const GaussianMixtureWorld& world, const Eigen::Vector2d& x_t,
                               double sigma, int class_id);

// ---------------------------------------------------------------------------
// One-dimensional class-conditional mixtures.

struct Component1d {
  double weight = 1.0;
  double mean = 0.0;
  double var = 1.0;
};

struct Mixture1dWorld {
  std::vector<double> priors;
  std::vector<std::vector<Component1d>> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  void validate() const;
};

/// Two classes, two components each, overlapping on the real line.
Mixture1dWorld default_world_1d();

double cond_density_1d(const Mixture1dWorld& world, double x, double sigma, int c);
double marginal_density_1d(const Mixture1dWorld& world, double x, double sigma);
double cond_score_1d(const Mixture1dWorld& world, double x, double sigma, int c);
double marginal_score_1d(const Mixture1dWorld& world, double x, double sigma);

// ---------------------------------------------------------------------------
// Finite sample spaces.

/// Column-stochastic table q(x|c) over S points and M classes.
struct ConditionalTable {
  int support = 0;
  int classes = 0;
  std::vector<double> values;  // values[x * classes + c]

  ConditionalTable() = default;
  ConditionalTable(int s, int m, double fill = 0.0)
      : support(s), classes(m), values(static_cast<std::size_t>(s) * m, fill) {}

  double& at(int x, int c) { return values[static_cast<std::size_t>(x) * classes + c]; }
  double at(int x, int c) const { return values[static_cast<std::size_t>(x) * classes + c]; }
  std::vector<double> column(int c) const;
  void set_column(int c, const std::vector<double>& col);

  /// Throws WorldError unless every column is a probability vector within tol.
  void validate_columns(double tol = 1e-12) const;

  bool operator==(const ConditionalTable&) const = default;
};

class DiscreteProblem {
 public:
  /// Validates the table and priors and derives p(x) = sum_c p(c) p(x|c).
  DiscreteProblem(ConditionalTable cond, std::vector<double> priors,
                  std::optional<ConditionalTable> reference = std::nullopt);

  /// Dirichlet(1, ..., 1) class columns; priors proportional to 0.5 + U(0, 1).
  static DiscreteProblem random(int support, int classes, Rng& rng);

  int support() const { return cond_.support; }
  int classes() const { return cond_.classes; }
  const ConditionalTable& cond() const { return cond_; }
  const std::vector<double>& priors() const { return priors_; }
  const std::vector<double>& marginal() const { return marginal_; }
  const std::optional<ConditionalTable>& reference() const { return reference_; }

  DiscreteProblem with_reference(ConditionalTable ref) const;

 private:
  ConditionalTable cond_;
  std::vector<double> priors_;
  std::vector<double> marginal_;
  std::optional<ConditionalTable> reference_;
};

/// (p(x|c), p(x)); throws std::out_of_range on bad indices.
std::pair<double, double> densities(const DiscreteProblem& problem, int x, int c);

/// p_ref = (1 - eta) p(x|c) + eta p(x), eta in [0, 1].
ConditionalTable mixture_ref(const DiscreteProblem& problem, double eta);

/// p_ref proportional to p(x|c)^(1 - 1/beta) p(x)^(1/beta), beta > 0. Entries
/// with p(x|c) = 0 and a negative exponent are set to 0.
ConditionalTable gamma_ref(const DiscreteProblem& problem, double beta);

/// Dirichlet(1, ..., 1) draw.
std::vector<double> dirichlet_ones(int n, Rng& rng);

}  // namespace guidefree
