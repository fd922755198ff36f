#include "guidefree/worlds.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace guidefree {

namespace {

constexpr double kSumTol = 1e-12;

void require_probability_vector(const std::vector<double>& p, const std::string& what) {
  if (p.empty()) throw WorldError(what + " is empty");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw WorldError(what + " has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kSumTol) throw WorldError(what + " does not sum to 1");
}

struct NoisedGaussian {
  double log_weight;
  Eigen::Vector2d mean;
  Eigen::Matrix2d precision;
  double log_norm;  // -log(2 pi) - 0.5 log det
};

NoisedGaussian noised(const GaussianComponent& comp, double log_prior, double sigma) {
  const Eigen::Matrix2d cov = comp.cov + sigma * sigma * Eigen::Matrix2d::Identity();
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  if (!(det > 0.0)) throw WorldError("noised covariance is degenerate");
  Eigen::Matrix2d inv;
  inv << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
  inv /= det;
  const double log_w = comp.weight > 0.0 ? std::log(comp.weight) + log_prior : -INFINITY;
  return {log_w, comp.mean, inv, -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det)};
}

double component_log_pdf(const NoisedGaussian& g, const Eigen::Vector2d& x) {
  const Eigen::Vector2d d = x - g.mean;
  return g.log_norm - 0.5 * d.dot(g.precision * d);
}

std::vector<NoisedGaussian> gather(const GaussianMixtureWorld& world, double sigma, int class_id) {
  if (sigma < 0.0) throw WorldError("noise level must be non-negative");
  std::vector<NoisedGaussian> out;
  const int m = world.num_classes();
  if (class_id >= m) throw std::out_of_range("class index out of range");
  for (int c = 0; c < m; ++c) {
    if (class_id >= 0 && c != class_id) continue;
    const double log_prior = class_id >= 0 ? 0.0 : (world.priors[c] > 0.0 ? std::log(world.priors[c]) : -INFINITY);
    for (const auto& comp : world.classes[c].components) out.push_back(noised(comp, log_prior, sigma));
  }
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  const double hi = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double a : v) s += std::exp(a - hi);
  return hi + std::log(s);
}

double mixture_log_density(const std::vector<NoisedGaussian>& parts, const Eigen::Vector2d& x) {
  std::vector<double> terms;
  terms.reserve(parts.size());
  for (const auto& g : parts) terms.push_back(g.log_weight + component_log_pdf(g, x));
  return log_sum_exp(terms);
}

Eigen::Vector2d mixture_score(const std::vector<NoisedGaussian>& parts, const Eigen::Vector2d& x) {
  std::vector<double> terms;
  terms.reserve(parts.size());
  for (const auto& g : parts) terms.push_back(g.log_weight + component_log_pdf(g, x));
  const double lse = log_sum_exp(terms);
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double r = std::exp(terms[k] - lse);
    if (r > 0.0) s += r * (parts[k].precision * (parts[k].mean - x));
  }
  return s;
}

int draw_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Round-off can leave acc slightly below 1; fall back to the last positive entry.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

Eigen::Vector2d draw_gaussian(const GaussianComponent& comp, Rng& rng) {
  const Eigen::Matrix2d chol = comp.cov.llt().matrixL();
  Eigen::Vector2d z;
  z(0) = rng.normal();
  z(1) = rng.normal();
  return comp.mean + chol * z;
}

Eigen::Vector2d draw_from_class(const GaussianMixtureWorld& world, int c, Rng& rng) {
  const auto& comps = world.classes[c].components;
  std::vector<double> w(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k) w[k] = comps[k].weight;
  return draw_gaussian(comps[draw_index(w, rng)], rng);
}

}  // namespace

void GaussianMixtureWorld::validate() const {
  if (classes.empty() || classes.size() != priors.size()) {
    throw WorldError("world needs one prior per class and at least one class");
  }
  require_probability_vector(priors, "class priors");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& comps = classes[c].components;
    std::vector<double> w;
    for (const auto& comp : comps) {
      w.push_back(comp.weight);
      const Eigen::Matrix2d& s = comp.cov;
      if (std::abs(s(0, 1) - s(1, 0)) > 1e-14 * std::max(1.0, s.cwiseAbs().maxCoeff())) {
        throw WorldError("component covariance of class " + std::to_string(c) + " is not symmetric");
      }
      if (!(s(0, 0) > 0.0) || !(s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0) > 0.0)) {
        throw WorldError("component covariance of class " + std::to_string(c) + " is not positive definite");
      }
      if (!comp.mean.allFinite()) throw WorldError("component mean is not finite");
    }
    require_probability_vector(w, "component weights of class " + std::to_string(c));
  }
}

GaussianMixtureWorld default_world(double separation_radians) {
  GaussianMixtureWorld world;
  world.priors = {0.5, 0.5};
  const double radius = 2.0;
  const Eigen::Matrix2d cov = 0.25 * Eigen::Matrix2d::Identity();
  for (int c = 0; c < 2; ++c) {
    ClassMixture mix;
    const double base = c == 0 ? 0.0 : separation_radians;
    for (int k = 0; k < 2; ++k) {
      const double angle = base + k * std::numbers::pi;
      mix.components.push_back({0.5, Eigen::Vector2d(radius * std::cos(angle), radius * std::sin(angle)), cov});
    }
    world.classes.push_back(std::move(mix));
  }
  world.validate();
  return world;
}

GaussianMixtureWorld single_gaussian_world(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov) {
  GaussianMixtureWorld world;
  world.priors = {1.0};
  world.classes.push_back(ClassMixture{{GaussianComponent{1.0, mean, cov}}});
  world.validate();
  return world;
}

LabeledBatch sample_labeled(const GaussianMixtureWorld& world, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_labeled needs n >= 1");
  LabeledBatch batch{Tensor::matrix(n, 2), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = draw_index(world.priors, rng);
    const Eigen::Vector2d x = draw_from_class(world, c, rng);
    batch.labels[i] = c;
    batch.x(i, 0) = x(0);
    batch.x(i, 1) = x(1);
  }
  return batch;
}

Tensor sample_class(const GaussianMixtureWorld& world, int c, std::size_t n, Rng& rng) {
  if (c < 0 || c >= world.num_classes()) throw std::out_of_range("class index out of range");
  Tensor out = Tensor::matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d x = draw_from_class(world, c, rng);
    out(i, 0) = x(0);
    out(i, 1) = x(1);
  }
  return out;
}

double log_cond_density(const GaussianMixtureWorld& world, const Eigen::Vector2d& x, double sigma, int c) {
  if (c < 0) throw std::out_of_range("class index out of range");
  return mixture_log_density(gather(world, sigma, c), x);
}

double log_marginal_density(const GaussianMixtureWorld& world, const Eigen::Vector2d& x, double sigma) {
  return mixture_log_density(gather(world, sigma, -1), x);
}

Eigen::Vector2d noised_cond_score(const GaussianMixtureWorld& world, const Eigen::Vector2d& x, double sigma,
                                  int c) {
  if (c < 0) throw std::out_of_range("class index out of range");
  return mixture_score(gather(world, sigma, c), x);
}

Eigen::Vector2d noised_uncond_score(const GaussianMixtureWorld& world, const Eigen::Vector2d& x, double sigma) {
  return mixture_score(gather(world, sigma, -1), x);
}

Eigen::Vector2d posterior_mean(const GaussianMixtureWorld& world, const Eigen::Vector2d& x_t, double sigma,
                               int class_id) {
  const Eigen::Vector2d s = class_id >= 0 ? noised_cond_score(world, x_t, sigma, class_id)
                                          : noised_uncond_score(world, x_t, sigma);
  return x_t + sigma * sigma * s;
}

// ---------------------------------------------------------------------------

void Mixture1dWorld::validate() const {
  if (classes.empty() || classes.size() != priors.size()) {
    throw WorldError("world needs one prior per class and at least one class");
  }
  require_probability_vector(priors, "class priors");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<double> w;
    for (const auto& comp : classes[c]) {
      if (!(comp.var > 0.0)) throw WorldError("component variance must be positive");
      w.push_back(comp.weight);
    }
    require_probability_vector(w, "component weights of class " + std::to_string(c));
  }
}

Mixture1dWorld default_world_1d() {
  Mixture1dWorld world;
  world.priors = {0.5, 0.5};
  world.classes = {
      {{0.6, -1.0, 0.25}, {0.4, 1.5, 0.5}},
      {{0.5, 1.0, 0.3}, {0.5, -2.0, 0.4}},
  };
  world.validate();
  return world;
}

namespace {

double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

// (density, derivative of density) of one class at noise level sigma.
std::pair<double, double> class_density_1d(const std::vector<Component1d>& comps, double x, double sigma) {
  double p = 0.0;
  double dp = 0.0;
  for (const auto& comp : comps) {
    const double var = comp.var + sigma * sigma;
    const double f = comp.weight * normal_pdf(x, comp.mean, var);
    p += f;
    dp += f * (comp.mean - x) / var;
  }
  return {p, dp};
}

void check_class_1d(const Mixture1dWorld& world, int c) {
  if (c < 0 || c >= world.num_classes()) throw std::out_of_range("class index out of range");
}

}  // namespace

double cond_density_1d(const Mixture1dWorld& world, double x, double sigma, int c) {
  check_class_1d(world, c);
  return class_density_1d(world.classes[c], x, sigma).first;
}

double marginal_density_1d(const Mixture1dWorld& world, double x, double sigma) {
  double p = 0.0;
  for (int c = 0; c < world.num_classes(); ++c) p += world.priors[c] * class_density_1d(world.classes[c], x, sigma).first;
  return p;
}

double cond_score_1d(const Mixture1dWorld& world, double x, double sigma, int c) {
  check_class_1d(world, c);
  const auto [p, dp] = class_density_1d(world.classes[c], x, sigma);
  if (!(p > 0.0)) throw WorldError("class density vanishes at the evaluation point");
  return dp / p;
}

double marginal_score_1d(const Mixture1dWorld& world, double x, double sigma) {
  double p = 0.0;
  double dp = 0.0;
  for (int c = 0; c < world.num_classes(); ++c) {
    const auto [pc, dpc] = class_density_1d(world.classes[c], x, sigma);
    p += world.priors[c] * pc;
    dp += world.priors[c] * dpc;
  }
  if (!(p > 0.0)) throw WorldError("marginal density vanishes at the evaluation point");
  return dp / p;
}

// ---------------------------------------------------------------------------

std::vector<double> ConditionalTable::column(int c) const {
  if (c < 0 || c >= classes) throw std::out_of_range("class index out of range");
  std::vector<double> col(support);
  for (int x = 0; x < support; ++x) col[x] = at(x, c);
  return col;
}

void ConditionalTable::set_column(int c, const std::vector<double>& col) {
  if (c < 0 || c >= classes) throw std::out_of_range("class index out of range");
  if (static_cast<int>(col.size()) != support) throw WorldError("column length differs from support size");
  for (int x = 0; x < support; ++x) at(x, c) = col[x];
}

void ConditionalTable::validate_columns(double tol) const {
  if (support <= 0 || classes <= 0 || values.size() != static_cast<std::size_t>(support) * classes) {
    throw WorldError("table shape is inconsistent");
  }
  for (int c = 0; c < classes; ++c) {
    double total = 0.0;
    for (int x = 0; x < support; ++x) {
      const double v = at(x, c);
      if (!(v >= 0.0) || !std::isfinite(v)) throw WorldError("table has a negative or non-finite entry");
      total += v;
    }
    if (std::abs(total - 1.0) > tol) throw WorldError("column " + std::to_string(c) + " does not sum to 1");
  }
}

DiscreteProblem::DiscreteProblem(ConditionalTable cond, std::vector<double> priors,
                                 std::optional<ConditionalTable> reference)
    : cond_(std::move(cond)), priors_(std::move(priors)), reference_(std::move(reference)) {
  cond_.validate_columns();
  if (static_cast<int>(priors_.size()) != cond_.classes) throw WorldError("need one prior per class");
  require_probability_vector(priors_, "class priors");
  if (reference_) {
    if (reference_->support != cond_.support || reference_->classes != cond_.classes) {
      throw WorldError("reference table shape differs from the problem");
    }
    reference_->validate_columns();
  }
  marginal_.assign(cond_.support, 0.0);
  for (int x = 0; x < cond_.support; ++x) {
    for (int c = 0; c < cond_.classes; ++c) marginal_[x] += priors_[c] * cond_.at(x, c);
  }
}

std::vector<double> dirichlet_ones(int n, Rng& rng) {
  std::vector<double> v(n);
  double total = 0.0;
  for (double& e : v) {
    e = rng.exponential();
    total += e;
  }
  for (double& e : v) e /= total;
  return v;
}

DiscreteProblem DiscreteProblem::random(int support, int classes, Rng& rng) {
  if (support < 1 || classes < 1) throw WorldError("support and class count must be positive");
  ConditionalTable table(support, classes);
  for (int c = 0; c < classes; ++c) table.set_column(c, dirichlet_ones(support, rng));
  std::vector<double> priors(classes);
  double total = 0.0;
  for (double& p : priors) {
    p = 0.5 + rng.uniform();
    total += p;
  }
  for (double& p : priors) p /= total;
  return DiscreteProblem(std::move(table), std::move(priors));
}

DiscreteProblem DiscreteProblem::with_reference(ConditionalTable ref) const {
  return DiscreteProblem(cond_, priors_, std::move(ref));
}

std::pair<double, double> densities(const DiscreteProblem& problem, int x, int c) {
  if (x < 0 || x >= problem.support()) throw std::out_of_range("support index out of range");
  if (c < 0 || c >= problem.classes()) throw std::out_of_range("class index out of range");
  return {problem.cond().at(x, c), problem.marginal()[x]};
}

ConditionalTable mixture_ref(const DiscreteProblem& problem, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("leakage must lie in [0, 1]");
  ConditionalTable out(problem.support(), problem.classes());
  for (int x = 0; x < problem.support(); ++x) {
    for (int c = 0; c < problem.classes(); ++c) {
      out.at(x, c) = (1.0 - eta) * problem.cond().at(x, c) + eta * problem.marginal()[x];
    }
  }
  return out;
}

ConditionalTable gamma_ref(const DiscreteProblem& problem, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  const double cond_exp = 1.0 - 1.0 / beta;
  const double marg_exp = 1.0 / beta;
  ConditionalTable out(problem.support(), problem.classes());
  for (int c = 0; c < problem.classes(); ++c) {
    double total = 0.0;
    for (int x = 0; x < problem.support(); ++x) {
      const double p = problem.cond().at(x, c);
      const double pbar = problem.marginal()[x];
      double v = 0.0;
      if (!(p == 0.0 && cond_exp < 0.0)) v = std::pow(p, cond_exp) * std::pow(pbar, marg_exp);
      out.at(x, c) = v;
      total += v;
    }
    if (!(total > 0.0)) throw WorldError("gamma-powered reference column " + std::to_string(c) + " is all zero");
    for (int x = 0; x < problem.support(); ++x) out.at(x, c) /= total;
  }
  return out;
}

}  // namespace guidefree
