#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "guidefree/closedform.hpp"
#include "guidefree/verify.hpp"

using namespace guidefree;

namespace {

DiscreteProblem canonical() {
  ConditionalTable t(3, 2);
  t.set_column(0, {0.7, 0.2, 0.1});
  t.set_column(1, {0.1, 0.2, 0.7});
  return DiscreteProblem(t, {0.5, 0.5});
}

// Maximizer of sum_x h(x) log q(x) over {q >= delta, sum q = 1} by trying
// each active-set size k on h sorted descending: the top k entries take
// h / lambda, the rest sit at delta.
std::vector<double> water_fill(const std::vector<double>& h, double delta) {
  const int s = static_cast<int>(h.size());
  std::vector<int> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return h[a] > h[b]; });
  for (int k = s; k >= 1; --k) {
    double top = 0.0;
    for (int i = 0; i < k; ++i) top += h[order[i]];
    if (top <= 0.0) continue;
    const double lambda = top / (1.0 - delta * (s - k));
    if (h[order[k - 1]] / lambda < delta) continue;
    if (k < s && h[order[k]] / lambda >= delta) continue;
    std::vector<double> q(s, delta);
    for (int i = 0; i < k; ++i) q[order[i]] = h[order[i]] / lambda;
    return q;
  }
  return {};
}

std::vector<double> normalized(std::vector<double> v) {
  const double t = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= t;
  return v;
}

}  // namespace

TEST_SUITE("closedform") {
  TEST_CASE("total variation") {
    CHECK(total_variation(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
    CHECK(total_variation(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75}) == 0.25);
    CHECK(total_variation(SimplexDist{{0.2, 0.8}}, SimplexDist{{0.2, 0.8}}) == 0.0);
  }

  TEST_CASE("mclr target and the canonical three-point optimum") {
    const DiscreteProblem p = canonical();
    const auto h = mclr_target(p, 0, 1.0);
    // p(x) = (0.4, 0.2, 0.4); h = 2 p(x|0) - p(x)
    CHECK(h[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(h[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(h[2] == doctest::Approx(-0.2).epsilon(1e-15));
    const SimplexDist lim = mclr_optimum_limit(p, 0, 1.0);
    CHECK(lim.p[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(lim.p[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(lim.p[2] == 0.0);
    const MclrSolution sol = mclr_optimum(p, 0, 1.0, 1e-9);
    CHECK(sol.dist.p[2] == 1e-9);
    CHECK(total_variation(sol.dist.p, {5.0 / 6.0, 1.0 / 6.0, 0.0}) < 1e-8);
  }

  TEST_CASE("floored optimum agrees with water filling") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
      const int s = 3 + static_cast<int>(rng.below(6));
      const int m = 2 + static_cast<int>(rng.below(2));
      const DiscreteProblem p = DiscreteProblem::random(s, m, rng);
      const double eta = std::array<double, 4>{0.0, 0.5, 1.0, 2.0}[rng.below(4)];
      const double delta = std::array<double, 3>{1e-9, 1e-4, 0.02}[rng.below(3)];
      for (int c = 0; c < m; ++c) {
        const MclrSolution sol = mclr_optimum(p, c, eta, delta);
        const auto expected = water_fill(mclr_target(p, c, eta), delta);
        REQUIRE(!expected.empty());
        CHECK(total_variation(sol.dist.p, expected) < 1e-12);
        CHECK(sol.dist.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(*std::min_element(sol.dist.p.begin(), sol.dist.p.end()) >= delta);
      }
    }
  }

  TEST_CASE("clipped mass is non-increasing in lambda") {
    const std::vector<double> h{0.5, 0.1, -0.3, 0.02};
    double prev = clipped_mass(h, 1e-3, 0.01);
    for (double l = 2e-3; l < 100.0; l *= 1.7) {
      const double a = clipped_mass(h, l, 0.01);
      CHECK(a <= prev);
      prev = a;
    }
    CHECK(clipped_mass(h, 1.0, 0.0) == doctest::Approx(0.62).epsilon(1e-15));
  }

  TEST_CASE("optimum argument checks") {
    const DiscreteProblem p = canonical();
    CHECK_THROWS_AS(mclr_optimum(p, 0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(mclr_optimum(p, 0, 1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(mclr_optimum(p, 0, -0.1, 1e-9), std::invalid_argument);
    ConditionalTable t(2, 2);
    t.set_column(0, {0.0, 1.0});
    t.set_column(1, {1.0, 0.0});
    const DiscreteProblem q(t, {0.5, 0.5});
    // h = (0, 1) + 1e9 ((0, 1) - (0.5, 0.5)) is positive only at x = 1
    CHECK(mclr_optimum_limit(q, 0, 1e9).p == std::vector<double>{0.0, 1.0});
  }

  TEST_CASE("eta zero returns the class conditional") {
    Rng rng(2);
    const DiscreteProblem p = DiscreteProblem::random(5, 3, rng);
    for (int c = 0; c < 3; ++c) {
      CHECK(total_variation(mclr_optimum_limit(p, c, 0.0).p, p.cond().column(c)) < 1e-15);
    }
  }

  TEST_CASE("ccdpo optimum in closed form") {
    const DiscreteProblem p = canonical();
    const SimplexDist q = ccdpo_optimum(p, p.cond(), 0, 1.0);
    const auto expected = normalized({0.49 / 0.4, 0.04 / 0.2, 0.01 / 0.4});
    CHECK(total_variation(q.p, expected) < 1e-15);
    // beta -> large recovers the reference
    CHECK(total_variation(ccdpo_optimum(p, p.cond(), 0, 1e12).p, p.cond().column(0)) < 1e-9);
  }

  TEST_CASE("dpo reward flags") {
    ConditionalTable t(3, 2);
    t.set_column(0, {0.5, 0.5, 0.0});
    t.set_column(1, {0.5, 0.0, 0.5});
    const DiscreteProblem p(t, {0.5, 0.5});
    const RewardVector r = dpo_optimal_reward(p, 0);
    CHECK(r.flag[0] == RewardFlag::Finite);
    CHECK(r.reward[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r.flag[1] == RewardFlag::Finite);
    CHECK(r.reward[1] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(r.flag[2] == RewardFlag::MinusInfinity);
  }

  TEST_CASE("preference and noise-contrastive optima coincide") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      const DiscreteProblem p = DiscreteProblem::random(4 + i % 4, 2, rng);
      ConditionalTable ref(p.support(), 2);
      for (int c = 0; c < 2; ++c) ref.set_column(c, dirichlet_ones(p.support(), rng));
      const double beta = std::array<double, 3>{0.5, 1.0, 2.0}[i % 3];
      const SimplexDist closed = ccdpo_optimum(p, ref, 1, beta);
      const auto a = brute_force_contrastive(p, ref, 1, {ContrastiveKind::CcDpo, beta, std::nullopt});
      const auto b = brute_force_contrastive(p, ref, 1, {ContrastiveKind::Cca, beta, std::nullopt});
      CHECK(total_variation(closed, a.dist) < 1e-9);
      CHECK(total_variation(closed, b.dist) < 1e-9);
      // the normalizing lambda makes the optimal table a distribution already
      CHECK(b.unnormalized_mass == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("the preference optimum is a local maximum of the population objective") {
    Rng rng(4);
    const DiscreteProblem p = DiscreteProblem::random(5, 2, rng);
    const ConditionalTable ref = mixture_ref(p, 0.3);
    const SimplexDist q = ccdpo_optimum(p, ref, 0, 1.5);
    std::vector<double> theta;
    for (double v : q.p) theta.push_back(std::log(v));
    const double best = ccdpo_population_objective(p, ref, 0, 1.5, theta);
    for (int x = 0; x < 5; ++x) {
      for (double step : {-1e-3, 1e-3}) {
        auto t = theta;
        t[x] += step;
        CHECK(ccdpo_population_objective(p, ref, 0, 1.5, t) < best);
      }
    }
  }

  TEST_CASE("reference constructions recover the class conditional") {
    Rng rng(5);
    const DiscreteProblem p = DiscreteProblem::random(6, 3, rng);
    for (double eta : {0.1, 0.3, 0.7}) {
      const ConditionalTable ref = mixture_ref(p, eta);
      for (int c = 0; c < 3; ++c) {
        CHECK(total_variation(mclr_optimum(p, c, eta, 1e-300, &ref).dist.p, p.cond().column(c)) < 1e-9);
      }
    }
    for (double beta : {0.5, 1.0, 2.0}) {
      const ConditionalTable ref = gamma_ref(p, beta);
      for (int c = 0; c < 3; ++c) CHECK(total_variation(ccdpo_optimum(p, ref, c, beta), SimplexDist{p.cond().column(c)}) < 1e-9);
    }
  }

  TEST_CASE("regularizer forms agree and vanish for class-blind tables") {
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
      const DiscreteProblem p = DiscreteProblem::random(3 + i % 5, 2 + i % 2, rng);
      ConditionalTable q(p.support(), p.classes());
      for (int c = 0; c < p.classes(); ++c) q.set_column(c, dirichlet_ones(p.support(), rng));
      const double a = regularizer_symmetric(p, q);
      CHECK(regularizer_mismatch(p, q) == doctest::Approx(a).epsilon(1e-12));
      CHECK(regularizer_marginal(p, q) == doctest::Approx(a).epsilon(1e-12));
      ConditionalTable blind(p.support(), p.classes());
      const auto col = dirichlet_ones(p.support(), rng);
      for (int c = 0; c < p.classes(); ++c) blind.set_column(c, col);
      CHECK(std::abs(regularizer_mismatch(p, blind)) < 1e-15);
    }
  }

  TEST_CASE("log-linear objective value") {
    const LogLinearObjective obj = log_likelihood_objective({0.25, 0.75, 0.0});
    ConditionalTable q(3, 1);
    q.set_column(0, {0.5, 0.5, 0.0});
    CHECK(obj.value(q) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  }

  TEST_CASE("brute-force simplex finds the maximum-likelihood point") {
    const std::vector<double> target{0.5, 0.3, 0.15, 0.05};
    const SimplexDist q = brute_force_simplex(log_likelihood_objective(target), 1e-9);
    CHECK(total_variation(q.p, target) < 1e-6);
    const SimplexDist floored = brute_force_simplex(log_likelihood_objective({0.9, 0.1, 0.0}), 0.01);
    CHECK(total_variation(floored.p, water_fill({0.9, 0.1, 0.0}, 0.01)) < 1e-6);
  }

  TEST_CASE("adaptive weighting recovers the guided score in one dimension") {
    const Mixture1dWorld w = default_world_1d();
    Rng rng(7);
    const auto grid = linspace(-3.0, 3.0, 7);
    const GuidanceReport r = verify_theorem3(w, 0, 1.0, 0.5, grid, 20000, rng);
    CHECK(r.passed);
    for (const auto& pt : r.points) {
      const double analytic = 2.0 * cond_score_1d(w, pt.x_t, 0.5, 0) - marginal_score_1d(w, pt.x_t, 0.5);
      CHECK(pt.analytic == doctest::Approx(analytic).epsilon(1e-12));
      CHECK(pt.weight_ratio == doctest::Approx(pt.weight_ratio_direct).epsilon(1e-12));
    }
    Rng again(7);
    const GuidanceReport r2 = verify_theorem3(w, 0, 1.0, 0.5, grid, 20000, again);
    CHECK(r2.max_z == r.max_z);
  }

  TEST_CASE("linspace") {
    CHECK(linspace(0.0, 1.0, 3) == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(linspace(-4.0, 4.0, 21).size() == 21);
  }

  TEST_CASE("verify suites pass and fail at zero tolerance") {
    VerifyOptions opt;
    opt.problems = 10;
    const SuiteReport all = run_verify("all", opt);
    CHECK(all.passed);
    opt.tolerance = 0.0;
    CHECK_FALSE(run_suite("theorem1", opt).passed);
    CHECK_THROWS_AS(run_suite("theorem9"), std::invalid_argument);
    VerifyOptions same;
    same.problems = 10;
    CHECK(run_verify("all", same).json == all.json);
  }
}
