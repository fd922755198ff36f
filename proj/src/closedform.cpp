#include "guidefree/closedform.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>

namespace guidefree {

namespace {

constexpr double kResidualTol = 1e-12;
constexpr int kMaxBisection = 200;

void check_class(const DiscreteProblem& problem, int c) {
  if (c < 0 || c >= problem.classes()) throw std::out_of_range("class index out of range");
}

double log_sigmoid(double z) {
  // log sigmoid(z) = -softplus(-z)
  return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

double SimplexDist::sum() const {
  double s = 0.0;
  for (double v : p) s += v;
  return s;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("total_variation: supports differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

double total_variation(const SimplexDist& a, const SimplexDist& b) { return total_variation(a.p, b.p); }

// ---------------------------------------------------------------------------

std::vector<double> mclr_target(const DiscreteProblem& problem, int c, double eta, const ConditionalTable* base) {
  check_class(problem, c);
  if (base && (base->support != problem.support() || base->classes != problem.classes())) {
    throw std::invalid_argument("base table shape differs from the problem");
  }
  std::vector<double> h(problem.support());
  for (int x = 0; x < problem.support(); ++x) {
    const double p = problem.cond().at(x, c);
    const double b = base ? base->at(x, c) : p;
    h[x] = b + eta * (p - problem.marginal()[x]);
  }
  return h;
}

double clipped_mass(const std::vector<double>& h, double lambda, double delta) {
  double a = 0.0;
  for (double v : h) {
    if (v > 0.0) a += std::max(v / lambda, delta);
  }
  return a;
}

MclrSolution mclr_optimum(const DiscreteProblem& problem, int c, double eta, double delta,
                          const ConditionalTable* base) {
  const int s = problem.support();
  if (!(delta > 0.0) || !(delta * s < 1.0)) throw std::invalid_argument("floor must satisfy 0 < delta < 1/S");
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");
  MclrSolution sol;
  sol.h = mclr_target(problem, c, eta, base);
  const auto& h = sol.h;

  int negative = 0;
  double h_max = 0.0;
  for (double v : h) {
    if (v <= 0.0) ++negative;
    h_max = std::max(h_max, v);
  }
  if (!(h_max > 0.0)) throw std::invalid_argument("h is non-positive on the whole support");
  const double m = 1.0 - delta * negative;

  BisectionReport& rep = sol.report;
  rep.target_mass = m;
  double lo = std::min(1e-12, 0.5 * h_max / delta);
  double hi = h_max / delta;
  while (clipped_mass(h, lo, delta) < m) lo *= 1e-3;  // only for h_max below ~1e-12
  rep.lambda_lo = lo;
  rep.lambda_hi = hi;
  rep.mass_at_lo = clipped_mass(h, lo, delta);
  rep.mass_at_hi = clipped_mass(h, hi, delta);

  double lambda = hi;
  double residual = std::abs(rep.mass_at_hi - m);
  for (int it = 0; it < kMaxBisection && residual > kResidualTol; ++it) {
    lambda = std::sqrt(lo * hi);
    const double a = clipped_mass(h, lambda, delta);
    rep.trace.emplace_back(lambda, a);
    rep.iterations = it + 1;
    residual = std::abs(a - m);
    if (a >= m) {
      lo = lambda;
    } else {
      hi = lambda;
    }
  }

  // Exact normalizer on the active set {h > lambda delta}.
  double active_sum = 0.0;
  int clipped = 0;
  for (double v : h) {
    if (v > lambda * delta) {
      active_sum += v;
    } else if (v > 0.0) {
      ++clipped;
    }
  }
  const double exact = active_sum / (m - delta * clipped);
  if (exact > 0.0 && std::isfinite(exact)) {
    bool same_set = true;
    for (double v : h) {
      if (v > 0.0 && ((v > lambda * delta) != (v > exact * delta))) same_set = false;
    }
    const double exact_residual = std::abs(clipped_mass(h, exact, delta) - m);
    if (same_set && exact_residual <= residual) {
      lambda = exact;
      residual = exact_residual;
    }
  }
  rep.lambda = lambda;
  rep.residual = residual;
  if (residual > kResidualTol) {
    throw NotConverged("normalizer bisection did not reach residual 1e-12 (residual " + sci(residual) + ")");
  }
  sol.dist.p.resize(s);
  for (int x = 0; x < s; ++x) sol.dist.p[x] = h[x] > 0.0 ? std::max(h[x] / lambda, delta) : delta;
  return sol;
}

SimplexDist mclr_optimum_limit(const DiscreteProblem& problem, int c, double eta, const ConditionalTable* base) {
  const std::vector<double> h = mclr_target(problem, c, eta, base);
  SimplexDist d{std::vector<double>(h.size())};
  double total = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    d.p[i] = std::max(h[i], 0.0);
    total += d.p[i];
  }
  if (!(total > 0.0)) throw std::invalid_argument("h is non-positive on the whole support");
  for (double& v : d.p) v /= total;
  return d;
}

// ---------------------------------------------------------------------------

SimplexDist ccdpo_optimum(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta) {
  check_class(problem, c);
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (p_ref.support != problem.support() || p_ref.classes != problem.classes()) {
    throw std::invalid_argument("reference table shape differs from the problem");
  }
  SimplexDist d{std::vector<double>(problem.support(), 0.0)};
  double total = 0.0;
  for (int x = 0; x < problem.support(); ++x) {
    const double p = problem.cond().at(x, c);
    const double pbar = problem.marginal()[x];
    if (pbar == 0.0 || p == 0.0) continue;
    d.p[x] = p_ref.at(x, c) * std::pow(p / pbar, 1.0 / beta);
    total += d.p[x];
  }
  if (!(total > 0.0) || !std::isfinite(total)) throw std::invalid_argument("preference optimum is not normalizable");
  for (double& v : d.p) v /= total;
  return d;
}

RewardVector dpo_optimal_reward(const DiscreteProblem& problem, int c) {
  check_class(problem, c);
  RewardVector r{std::vector<double>(problem.support()), std::vector<RewardFlag>(problem.support())};
  for (int x = 0; x < problem.support(); ++x) {
    const double p = problem.cond().at(x, c);
    const double pbar = problem.marginal()[x];
    if (p > 0.0 && pbar > 0.0) {
      r.reward[x] = std::log(p / pbar);
      r.flag[x] = RewardFlag::Finite;
    } else if (p == 0.0 && pbar > 0.0) {
      r.reward[x] = -std::numeric_limits<double>::infinity();
      r.flag[x] = RewardFlag::MinusInfinity;
    } else if (p == 0.0) {
      r.reward[x] = std::numeric_limits<double>::quiet_NaN();
      r.flag[x] = RewardFlag::Undefined;
    } else {
      throw std::logic_error("p(x|c) > 0 with p(x) = 0 contradicts positive class priors");
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

double LogLinearObjective::value(const ConditionalTable& q) const {
  if (q.support != coef.support || q.classes != coef.classes) throw std::invalid_argument("table shape mismatch");
  double v = constant;
  for (std::size_t i = 0; i < coef.values.size(); ++i) v += xlogy(coef.values[i], q.values[i]);
  return v;
}

LogLinearObjective likelihood_ratio_objective(const DiscreteProblem& problem, double eta) {
  const int s = problem.support();
  const int m = problem.classes();
  const auto& pc = problem.priors();
  LogLinearObjective obj{ConditionalTable(s, m, 0.0), 0.0};
  for (int c = 0; c < m; ++c) {
    for (int x = 0; x < s; ++x) obj.coef.at(x, c) += pc[c] * problem.cond().at(x, c);
  }
  for (int c = 0; c < m; ++c) {
    for (int ct = 0; ct < m; ++ct) {
      for (int x = 0; x < s; ++x) {
        const double mass = eta * pc[c] * pc[ct] * problem.cond().at(x, c);
        obj.coef.at(x, c) += mass;
        obj.coef.at(x, ct) -= mass;
      }
    }
  }
  return obj;
}

LogLinearObjective kl_likelihood_ratio_objective(const DiscreteProblem& problem, const ConditionalTable& p_ref,
                                                 double eta) {
  LogLinearObjective obj = likelihood_ratio_objective(problem, eta);
  const auto& pc = problem.priors();
  // Remove the likelihood term and put -KL(p_ref || q) in its place.
  for (int c = 0; c < problem.classes(); ++c) {
    for (int x = 0; x < problem.support(); ++x) {
      obj.coef.at(x, c) += pc[c] * (p_ref.at(x, c) - problem.cond().at(x, c));
      obj.constant -= pc[c] * xlogy(p_ref.at(x, c), p_ref.at(x, c));
    }
  }
  return obj;
}

LogLinearObjective log_likelihood_objective(const std::vector<double>& target) {
  LogLinearObjective obj{ConditionalTable(static_cast<int>(target.size()), 1, 0.0), 0.0};
  obj.coef.values = target;
  return obj;
}

double regularizer_symmetric(const DiscreteProblem& problem, const ConditionalTable& q) {
  const auto& pc = problem.priors();
  const auto& p = problem.cond();
  double total = 0.0;
  for (int c = 0; c < problem.classes(); ++c) {
    for (int ct = 0; ct < problem.classes(); ++ct) {
      for (int x = 0; x < problem.support(); ++x) {
        for (int y = 0; y < problem.support(); ++y) {
          const double mass = pc[c] * pc[ct] * p.at(x, c) * p.at(y, ct);
          if (mass == 0.0) continue;
          total += mass * (std::log(q.at(x, c) / q.at(x, ct)) + std::log(q.at(y, ct) / q.at(y, c)));
        }
      }
    }
  }
  return 0.5 * total;
}

double regularizer_mismatch(const DiscreteProblem& problem, const ConditionalTable& q) {
  const auto& pc = problem.priors();
  double total = 0.0;
  for (int c = 0; c < problem.classes(); ++c) {
    for (int ct = 0; ct < problem.classes(); ++ct) {
      for (int x = 0; x < problem.support(); ++x) {
        const double mass = pc[c] * pc[ct] * problem.cond().at(x, c);
        if (mass == 0.0) continue;
        total += mass * std::log(q.at(x, c) / q.at(x, ct));
      }
    }
  }
  return total;
}

double regularizer_marginal(const DiscreteProblem& problem, const ConditionalTable& q) {
  const auto& pc = problem.priors();
  double total = 0.0;
  for (int c = 0; c < problem.classes(); ++c) {
    for (int x = 0; x < problem.support(); ++x) {
      for (int y = 0; y < problem.support(); ++y) {
        const double mass = pc[c] * problem.cond().at(x, c) * problem.marginal()[y];
        if (mass == 0.0) continue;
        total += mass * std::log(q.at(x, c) / q.at(y, c));
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------

namespace {

struct AscentState {
  ConditionalTable r;  // q - delta, columns sum to 1 - S delta
  double value = -std::numeric_limits<double>::infinity();
};

ConditionalTable floored(const ConditionalTable& r, double delta) {
  ConditionalTable q = r;
  for (double& v : q.values) v += delta;
  return q;
}

// One multiplicative step per column: r <- r exp(t g) rescaled to `mass`.
ConditionalTable mirror_step(const ConditionalTable& r, const ConditionalTable& grad, double t, double mass) {
  ConditionalTable out = r;
  for (int c = 0; c < r.classes; ++c) {
    double g_max = -std::numeric_limits<double>::infinity();
    for (int x = 0; x < r.support; ++x) {
      if (r.at(x, c) > 0.0) g_max = std::max(g_max, grad.at(x, c));
    }
    double total = 0.0;
    for (int x = 0; x < r.support; ++x) {
      const double v = r.at(x, c) > 0.0 ? r.at(x, c) * std::exp(t * (grad.at(x, c) - g_max)) : 0.0;
      out.at(x, c) = v;
      total += v;
    }
    for (int x = 0; x < r.support; ++x) out.at(x, c) *= mass / total;
  }
  return out;
}

AscentState ascend(const LogLinearObjective& obj, double delta, ConditionalTable r, const BruteForceOptions& opt) {
  const double mass = 1.0 - delta * r.support;
  AscentState st{std::move(r), 0.0};
  st.value = obj.value(floored(st.r, delta));
  double t = opt.initial_step;
  int stalled = 0;
  for (int it = 0; it < opt.iterations && stalled < 25; ++it) {
    const ConditionalTable q = floored(st.r, delta);
    ConditionalTable grad = obj.coef;
    for (std::size_t i = 0; i < grad.values.size(); ++i) grad.values[i] /= q.values[i];
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      const ConditionalTable cand = mirror_step(st.r, grad, t, mass);
      const double v = obj.value(floored(cand, delta));
      double lin = 0.0;
      for (std::size_t i = 0; i < grad.values.size(); ++i) lin += grad.values[i] * (cand.values[i] - st.r.values[i]);
      if (v >= st.value + 1e-4 * lin && std::isfinite(v)) {
        const double gain = v - st.value;
        stalled = gain <= 1e-15 * (1.0 + std::abs(st.value)) ? stalled + 1 : 0;
        st.r = cand;
        st.value = v;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    t = std::min(t * 2.0, 1e8);
  }
  return st;
}

}  // namespace

ConditionalTable brute_force_table(const LogLinearObjective& objective, double delta,
                                   const BruteForceOptions& options) {
  const int s = objective.coef.support;
  const int m = objective.coef.classes;
  if (!(delta >= 0.0) || !(delta * s < 1.0)) throw std::invalid_argument("floor must satisfy 0 <= delta < 1/S");
  if (options.restarts < 1) throw std::invalid_argument("at least one restart required");
  const double mass = 1.0 - delta * s;
  const Rng root(options.seed);
  AscentState best;
  for (int k = 0; k < options.restarts; ++k) {
    Rng rng = root.fork(static_cast<std::uint64_t>(k));
    ConditionalTable r(s, m);
    for (int c = 0; c < m; ++c) {
      std::vector<double> col = dirichlet_ones(s, rng);
      for (double& v : col) v *= mass;
      r.set_column(c, col);
    }
    AscentState st = ascend(objective, delta, std::move(r), options);
    if (st.value > best.value) best = std::move(st);
  }
  return floored(best.r, delta);
}

SimplexDist brute_force_simplex(const LogLinearObjective& objective, double delta, const BruteForceOptions& options) {
  if (objective.coef.classes != 1) throw std::invalid_argument("brute_force_simplex expects a one-column objective");
  return SimplexDist{brute_force_table(objective, delta, options).values};
}

// ---------------------------------------------------------------------------

double cca_normalizing_lambda(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta) {
  check_class(problem, c);
  double total = 0.0;
  for (int x = 0; x < problem.support(); ++x) {
    const double p = problem.cond().at(x, c);
    const double pbar = problem.marginal()[x];
    if (p == 0.0 || pbar == 0.0) continue;
    total += p_ref.at(x, c) * std::pow(p / pbar, 1.0 / beta);
  }
  return std::pow(total, beta);
}

namespace {

// Log-density ratio log(q / p_ref); -inf where q = 0.
double log_ratio(const std::vector<double>& theta, const ConditionalTable& p_ref, int x, int c) {
  return theta[x] - std::log(p_ref.at(x, c));
}

// Weight of the pair (x_w, x_l) under E_{c~} p(x_w|c) p(x_l|c~).
ConditionalTable pair_weights(const DiscreteProblem& problem, int c) {
  const int s = problem.support();
  ConditionalTable w(s, s, 0.0);
  for (int ct = 0; ct < problem.classes(); ++ct) {
    for (int xw = 0; xw < s; ++xw) {
      for (int xl = 0; xl < s; ++xl) {
        w.at(xw, xl) += problem.priors()[ct] * problem.cond().at(xw, c) * problem.cond().at(xl, ct);
      }
    }
  }
  return w;
}

ContrastiveSolution finish_table(const std::vector<double>& theta, const std::vector<bool>& active) {
  ContrastiveSolution sol;
  sol.dist.p.assign(theta.size(), 0.0);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < theta.size(); ++x) {
    if (active[x]) hi = std::max(hi, theta[x]);
  }
  double total = 0.0;
  double raw = 0.0;
  for (std::size_t x = 0; x < theta.size(); ++x) {
    if (!active[x]) continue;
    sol.dist.p[x] = std::exp(theta[x] - hi);
    total += sol.dist.p[x];
    raw += std::exp(theta[x]);
  }
  for (double& v : sol.dist.p) v /= total;
  sol.unnormalized_mass = raw;
  return sol;
}

ContrastiveSolution solve_ccdpo(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta,
                                int iterations) {
  const int s = problem.support();
  std::vector<bool> active(s);
  std::vector<int> free_idx;
  int pinned = -1;
  for (int x = 0; x < s; ++x) {
    active[x] = problem.cond().at(x, c) > 0.0 && p_ref.at(x, c) > 0.0;
    if (!active[x]) continue;
    if (pinned < 0) {
      pinned = x;
    } else {
      free_idx.push_back(x);
    }
  }
  if (pinned < 0) throw std::invalid_argument("preference objective has an empty support");
  const ConditionalTable w = pair_weights(problem, c);
  std::vector<double> theta(s, -std::numeric_limits<double>::infinity());
  for (int x = 0; x < s; ++x) {
    if (active[x]) theta[x] = std::log(p_ref.at(x, c)) - std::log(p_ref.at(pinned, c));
  }
  const int n = static_cast<int>(free_idx.size());

  auto value_of = [&](const std::vector<double>& th) {
    double v = 0.0;
    for (int a = 0; a < s; ++a) {
      if (!active[a]) continue;
      for (int b = 0; b < s; ++b) {
        if (!active[b] || w.at(a, b) == 0.0) continue;
        v += w.at(a, b) * log_sigmoid(beta * (log_ratio(th, p_ref, a, c) - log_ratio(th, p_ref, b, c)));
      }
    }
    return v;
  };

  ContrastiveSolution out;
  double gnorm = 0.0;
  int it = 0;
  for (; it < iterations; ++it) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(s);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(s, s);
    for (int a = 0; a < s; ++a) {
      if (!active[a]) continue;
      for (int b = 0; b < s; ++b) {
        if (!active[b] || w.at(a, b) == 0.0) continue;
        const double z = beta * (log_ratio(theta, p_ref, a, c) - log_ratio(theta, p_ref, b, c));
        const double gz = w.at(a, b) * beta * sigmoid(-z);
        g(a) += gz;
        g(b) -= gz;
        const double hz = w.at(a, b) * beta * beta * sigmoid(z) * sigmoid(-z);
        hess(a, a) -= hz;
        hess(b, b) -= hz;
        hess(a, b) += hz;
        hess(b, a) += hz;
      }
    }
    Eigen::VectorXd gr(n);
    Eigen::MatrixXd hr(n, n);
    for (int i = 0; i < n; ++i) {
      gr(i) = g(free_idx[i]);
      for (int j = 0; j < n; ++j) hr(i, j) = hess(free_idx[i], free_idx[j]);
    }
    gnorm = n > 0 ? gr.cwiseAbs().maxCoeff() : 0.0;
    if (gnorm < 1e-13) break;
    const Eigen::VectorXd step = (-hr).ldlt().solve(gr);
    const double f0 = value_of(theta);
    double t = 1.0;
    std::vector<double> cand = theta;
    for (int tries = 0; tries < 60; ++tries) {
      cand = theta;
      for (int i = 0; i < n; ++i) cand[free_idx[i]] += t * step(i);
      // The slack admits steps whose gain is below round-off near the optimum.
      if (value_of(cand) >= f0 + 1e-4 * t * gr.dot(step) - 1e-14 * (1.0 + std::abs(f0))) break;
      t *= 0.5;
    }
    theta = cand;
  }
  if (gnorm > 1e-10) throw NotConverged("preference oracle gradient norm " + sci(gnorm));
  out = finish_table(theta, active);
  out.iterations = it;
  out.gradient_norm = gnorm;
  return out;
}

// Maximizes p log sigmoid(z) + lambda pbar log sigmoid(-z) over z by
// bracketed Newton on the decreasing derivative.
double solve_nce_coordinate(double p, double lambda_pbar, int iterations, int* used, double* grad_out) {
  auto deriv = [&](double z) { return p * sigmoid(-z) - lambda_pbar * sigmoid(z); };
  double lo = -1.0;
  double hi = 1.0;
  while (deriv(lo) < 0.0) lo *= 2.0;
  while (deriv(hi) > 0.0) hi *= 2.0;
  double z = 0.5 * (lo + hi);
  int it = 0;
  double d = deriv(z);
  for (; it < iterations && std::abs(d) > 1e-15 * (p + lambda_pbar); ++it) {
    if (d > 0.0) {
      lo = z;
    } else {
      hi = z;
    }
    const double curv = -sigmoid(z) * sigmoid(-z) * (p + lambda_pbar);
    double next = z - d / curv;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    z = next;
    d = deriv(z);
  }
  *used = std::max(*used, it);
  *grad_out = std::max(*grad_out, std::abs(d));
  return z;
}

ContrastiveSolution solve_cca(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta,
                              double lambda, int iterations) {
  const int s = problem.support();
  std::vector<bool> active(s);
  std::vector<double> theta(s, -std::numeric_limits<double>::infinity());
  int used = 0;
  double gnorm = 0.0;
  for (int x = 0; x < s; ++x) {
    const double p = problem.cond().at(x, c);
    active[x] = p > 0.0 && p_ref.at(x, c) > 0.0;
    if (!active[x]) continue;
    const double z = solve_nce_coordinate(p, lambda * problem.marginal()[x], iterations, &used, &gnorm);
    theta[x] = std::log(p_ref.at(x, c)) + z / beta;
  }
  // Gradient in theta is beta times the gradient in z.
  gnorm *= beta;
  if (gnorm > 1e-10) throw NotConverged("noise-contrastive oracle gradient norm " + sci(gnorm));
  ContrastiveSolution out = finish_table(theta, active);
  out.iterations = used;
  out.gradient_norm = gnorm;
  out.lambda = lambda;
  return out;
}

}  // namespace

double ccdpo_population_objective(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta,
                                  const std::vector<double>& theta) {
  check_class(problem, c);
  double v = 0.0;
  for (int ct = 0; ct < problem.classes(); ++ct) {
    for (int xw = 0; xw < problem.support(); ++xw) {
      for (int xl = 0; xl < problem.support(); ++xl) {
        const double mass = problem.priors()[ct] * problem.cond().at(xw, c) * problem.cond().at(xl, ct);
        if (mass == 0.0) continue;
        v += mass * log_sigmoid(beta * (log_ratio(theta, p_ref, xw, c) - log_ratio(theta, p_ref, xl, c)));
      }
    }
  }
  return v;
}

double cca_population_objective(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c, double beta,
                                double lambda, const std::vector<double>& theta) {
  check_class(problem, c);
  double v = 0.0;
  for (int x = 0; x < problem.support(); ++x) {
    const double r = beta * log_ratio(theta, p_ref, x, c);
    const double p = problem.cond().at(x, c);
    const double pbar = problem.marginal()[x];
    if (p > 0.0) v += p * log_sigmoid(r);
    if (pbar > 0.0) v += lambda * pbar * log_sigmoid(-r);
  }
  return v;
}

ContrastiveSolution brute_force_contrastive(const DiscreteProblem& problem, const ConditionalTable& p_ref, int c,
                                            const ContrastiveSpec& spec, int iterations) {
  check_class(problem, c);
  if (!(spec.beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (p_ref.support != problem.support() || p_ref.classes != problem.classes()) {
    throw std::invalid_argument("reference table shape differs from the problem");
  }
  if (spec.kind == ContrastiveKind::CcDpo) return solve_ccdpo(problem, p_ref, c, spec.beta, iterations);
  const double lambda = spec.lambda ? *spec.lambda : cca_normalizing_lambda(problem, p_ref, c, spec.beta);
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  return solve_cca(problem, p_ref, c, spec.beta, lambda, iterations);
}

// ---------------------------------------------------------------------------

namespace {

struct Posterior1d {
  double density = 0.0;  // noised mixture density at x_t
  double score = 0.0;
  std::vector<double> resp;
  std::vector<double> mean;
  std::vector<double> sd;
};

Posterior1d posterior_1d(const std::vector<Component1d>& comps, double x_t, double sigma) {
  const double s2 = sigma * sigma;
  Posterior1d post;
  std::vector<double> logs(comps.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double var = comps[k].var + s2;
    const double d = x_t - comps[k].mean;
    logs[k] = comps[k].weight > 0.0
                  ? std::log(comps[k].weight) - 0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * d * d / var
                  : -std::numeric_limits<double>::infinity();
    hi = std::max(hi, logs[k]);
  }
  if (!std::isfinite(hi)) throw std::invalid_argument("noised density vanishes at a grid point");
  double total = 0.0;
  for (double l : logs) total += std::exp(l - hi);
  post.density = std::exp(hi) * total;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double r = std::exp(logs[k] - hi) / total;
    const double var = comps[k].var + s2;
    post.resp.push_back(r);
    post.mean.push_back((comps[k].var * x_t + s2 * comps[k].mean) / var);
    post.sd.push_back(std::sqrt(comps[k].var * s2 / var));
    post.score += r * (comps[k].mean - x_t) / var;
  }
  return post;
}

double direct_density(const std::vector<Component1d>& comps, double x, double sigma) {
  double p = 0.0;
  for (const auto& comp : comps) {
    const double var = comp.var + sigma * sigma;
    p += comp.weight * std::exp(-0.5 * (x - comp.mean) * (x - comp.mean) / var) /
         std::sqrt(2.0 * std::numbers::pi * var);
  }
  return p;
}

// Mean and variance of the transition score T = (x - x_t)/sigma^2 under the posterior.
std::pair<double, double> transition_moments(const Posterior1d& post, double x_t, double sigma, std::size_t n,
                                             Rng& rng) {
  const double inv_s2 = 1.0 / (sigma * sigma);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double acc = post.resp[0];
    while (u >= acc && k + 1 < post.resp.size()) acc += post.resp[++k];
    const double x = post.mean[k] + post.sd[k] * rng.normal();
    const double t = (x - x_t) * inv_s2;
    const double delta = t - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (t - mean);
  }
  return {mean, n > 1 ? m2 / static_cast<double>(n - 1) : 0.0};
}

}  // namespace

std::vector<Component1d> marginal_components(const Mixture1dWorld& world) {
  std::vector<Component1d> out;
  for (int c = 0; c < world.num_classes(); ++c) {
    for (const auto& comp : world.classes[c]) out.push_back({world.priors[c] * comp.weight, comp.mean, comp.var});
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) return {};
  if (n == 1) return {lo};
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

GuidanceReport verify_guidance_pair(const std::vector<Component1d>& plus, const std::vector<Component1d>& minus,
                                    double eta, double sigma, const std::vector<double>& grid,
                                    std::size_t mc_samples, Rng& rng, double se_multiple) {
  if (!(sigma > 0.0)) throw std::invalid_argument("noise level must be positive");
  if (mc_samples < 2) throw std::invalid_argument("need at least two Monte-Carlo samples");
  GuidanceReport rep;
  rep.eta = eta;
  rep.sigma = sigma;
  rep.mc_samples = mc_samples;
  rep.se_multiple = se_multiple;
  rep.passed = true;
  const double n = static_cast<double>(mc_samples);
  for (double x_t : grid) {
    const Posterior1d pp = posterior_1d(plus, x_t, sigma);
    const Posterior1d pm = posterior_1d(minus, x_t, sigma);
    // Common random numbers: every grid point replays the same two streams.
    Rng draws_plus = rng.fork(1);
    Rng draws_minus = rng.fork(2);
    const auto [mean_p, var_p] = transition_moments(pp, x_t, sigma, mc_samples, draws_plus);
    const auto [mean_m, var_m] = transition_moments(pm, x_t, sigma, mc_samples, draws_minus);

    GuidancePoint pt;
    pt.x_t = x_t;
    pt.weight_ratio = pp.density / pm.density;
    pt.weight_ratio_direct = direct_density(plus, x_t, sigma) / direct_density(minus, x_t, sigma);
    pt.analytic = (1.0 + eta) * pp.score - eta * pm.score;

    // Quadratic a s^2 - 2 b s with density-weighted coefficients.
    const double wp = (1.0 + eta) * pp.density;
    const double wm = eta * pm.density * pt.weight_ratio;
    const double a = wp - wm;
    if (!(a > 0.0)) throw std::invalid_argument("weighted objective is not strictly convex at a grid point");
    const double b = wp * mean_p - wm * mean_m;
    pt.monte_carlo = b / a;
    pt.standard_error = std::sqrt(wp * wp * var_p / n + wm * wm * var_m / n) / a;
    pt.deviation = std::abs(pt.monte_carlo - pt.analytic);
    pt.within = pt.deviation <= se_multiple * pt.standard_error;
    rep.max_deviation = std::max(rep.max_deviation, pt.deviation);
    if (pt.standard_error > 0.0) rep.max_z = std::max(rep.max_z, pt.deviation / pt.standard_error);
    rep.passed = rep.passed && pt.within;
    rep.points.push_back(pt);
  }
  return rep;
}

GuidanceReport verify_theorem3(const Mixture1dWorld& world, int class_id, double eta, double sigma,
                               const std::vector<double>& grid, std::size_t mc_samples, Rng& rng,
                               double se_multiple) {
  world.validate();
  if (class_id < 0 || class_id >= world.num_classes()) throw std::out_of_range("class index out of range");
  GuidanceReport rep = verify_guidance_pair(world.classes[class_id], marginal_components(world), eta, sigma, grid,
                                            mc_samples, rng, se_multiple);
  rep.class_id = class_id;
  for (auto& pt : rep.points) {
    pt.weight_ratio_direct =
        cond_density_1d(world, pt.x_t, sigma, class_id) / marginal_density_1d(world, pt.x_t, sigma);
  }
  return rep;
}

}  // namespace guidefree
