#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>

#include "guidefree/diffusion.hpp"
#include "guidefree/worlds.hpp"

using namespace guidefree;

namespace {

struct Moments {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
};

Moments moments(const Tensor& x) {
  Moments m{Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()};
  const double n = static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) m.mean += Eigen::Vector2d(x(i, 0), x(i, 1));
  m.mean /= n;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Eigen::Vector2d d = Eigen::Vector2d(x(i, 0), x(i, 1)) - m.mean;
    m.cov += d * d.transpose();
  }
  m.cov /= n - 1.0;
  return m;
}

}  // namespace

TEST_SUITE("diffusion") {
  TEST_CASE("corrupt is exact") {
    Tensor x({1, 2}, std::vector<double>{1.0, 1.0});
    Tensor eps({1, 2}, std::vector<double>{0.5, -0.5});
    const Tensor out = corrupt(x, 2.0, eps);
    CHECK(out(0, 0) == 2.0);
    CHECK(out(0, 1) == 0.0);
    CHECK(corrupt(x, 0.0, eps) == x);
    CHECK(corrupt(x, 3.0, Tensor({1, 2}, 0.0)) == x);
    CHECK_THROWS_AS(corrupt(x, 1.0, Tensor({1, 3}, 0.0)), ShapeError);
  }

  TEST_CASE("score from denoiser") {
    Tensor xt({1, 2}, std::vector<double>{0.3, -0.4});
    const std::vector<double> s{0.5};
    const Tensor zero = score_from_denoiser(xt, xt, s);
    CHECK(zero(0, 0) == 0.0);
    CHECK(zero(0, 1) == 0.0);
    Tensor d = xt;
    d(0, 0) += 0.25;
    const Tensor one = score_from_denoiser(d, xt, s);
    CHECK(one(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(one(0, 1) == 0.0);
    CHECK_THROWS_AS(score_from_denoiser(xt, xt, std::vector<double>{0.0}), std::invalid_argument);
  }

  TEST_CASE("ideal denoiser recovers the analytic score") {
    const Eigen::Vector2d mu(0.5, -1.0);
    Eigen::Matrix2d cov;
    cov << 0.3, 0.1, 0.1, 0.2;
    const auto w = single_gaussian_world(mu, cov);
    const Eigen::Vector2d x(1.2, 0.4);
    for (double sigma : {0.1, 0.9, 4.0}) {
      // Gaussian posterior mean computed independently of the world code
      const Eigen::Matrix2d s = cov + sigma * sigma * Eigen::Matrix2d::Identity();
      const Eigen::Vector2d d = mu + cov * s.inverse() * (x - mu);
      Tensor dt({1, 2}, std::vector<double>{d(0), d(1)});
      Tensor xt({1, 2}, std::vector<double>{x(0), x(1)});
      const Tensor sc = score_from_denoiser(dt, xt, std::vector<double>{sigma});
      const Eigen::Vector2d exact = noised_cond_score(w, x, sigma, 0);
      CHECK(std::abs(sc(0, 0) - exact(0)) < 1e-10);
      CHECK(std::abs(sc(0, 1) - exact(1)) < 1e-10);
    }
  }

  TEST_CASE("guided score arithmetic and linearity") {
    Tensor sp({1, 2}, std::vector<double>{1.0, 0.0});
    Tensor sm({1, 2}, std::vector<double>{0.0, 1.0});
    CHECK(guided_score(sp, sm, 0.0) == sp);
    const Tensor g1 = guided_score(sp, sm, 1.0);
    CHECK(g1(0, 0) == 2.0);
    CHECK(g1(0, 1) == -1.0);
    const Tensor g = guided_score(sp, sm, 0.5);
    CHECK(g(0, 0) == 1.5);
    CHECK(g(0, 1) == -0.5);
    for (double gamma : {-1.0, 0.3, 7.0}) CHECK(guided_score(sp, sp, gamma) == sp);
    const Tensor a = guided_score(sp, sm, 0.3), b = guided_score(sp, sm, 0.9), c = guided_score(sp, sm, 0.6);
    for (int d = 0; d < 2; ++d) CHECK(0.5 * (a(0, d) + b(0, d)) == doctest::Approx(c(0, d)).epsilon(1e-15));
  }

  TEST_CASE("sigma grid") {
    NoiseSchedule s;
    s.steps = 2;
    const auto g2 = sigma_grid(s);
    CHECK(g2 == std::vector<double>{s.sigma_max, 0.0});

    s.rho = 1.0;
    s.steps = 3;
    s.sigma_min = 1.0;
    s.sigma_max = 3.0;
    const auto g3 = sigma_grid(s);
    CHECK(g3[0] == 3.0);
    CHECK(g3[1] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(g3[2] == 0.0);

    NoiseSchedule k;
    k.sigma_min = 0.02;
    k.sigma_max = 10.0;
    k.steps = 64;
    k.rho = 7.0;
    const auto g = sigma_grid(k);
    REQUIRE(g.size() == 64);
    CHECK(g.front() == 10.0);
    CHECK(g.back() == 0.0);
    for (std::size_t i = 0; i + 1 < g.size(); ++i) CHECK(g[i] > g[i + 1]);
    for (int i = 0; i < 63; ++i) {
      const double t = i / 63.0;
      const double direct = std::pow(std::pow(10.0, 1 / 7.0) + t * (std::pow(0.02, 1 / 7.0) - std::pow(10.0, 1 / 7.0)), 7.0);
      CHECK(g[i] == doctest::Approx(direct).epsilon(1e-13));
    }
  }

  TEST_CASE("schedule validation and the training noise interval") {
    NoiseSchedule s;
    s.sigma_min = 0.0;
    CHECK_THROWS(s.validate());
    s = NoiseSchedule{};
    s.steps = 1;
    CHECK_THROWS(s.validate());
    s = NoiseSchedule{};
    s.train_sigma_min = 2.0;
    s.train_sigma_max = 1.0;
    CHECK_THROWS(s.validate());
    s.train_sigma_min = 1.0;
    s.train_sigma_max = 4.0;
    CHECK_NOTHROW(s.validate());
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
      const double v = s.draw_sigma(rng);
      CHECK(v >= 1.0);
      CHECK(v <= 4.0);
    }
    CHECK(sigma_grid(s).front() == s.sigma_max);
  }

  TEST_CASE("weightings") {
    NoiseSchedule s;
    s.sigma_data = 0.5;
    CHECK(s.weight(Weighting::Constant, 3.0) == 1.0);
    CHECK(s.weight(Weighting::InverseVariance, 2.0) == 0.25);
    CHECK(s.weight(Weighting::EdmBalanced, 0.5) == doctest::Approx(8.0).epsilon(1e-15));
    CHECK(s.weight(2.0) == s.weight(Weighting::EdmBalanced, 2.0));
    CHECK(s.contrastive_weight(2.0) == 1.0);
  }

  TEST_CASE("sampler recovers a Gaussian and converges at second order") {
    // For N(mu, v I) the flow is affine: x(0) - mu = (x(sigma_max) - mu) sqrt(v / (v + sigma_max^2)).
    const Eigen::Vector2d mu(1.0, -0.5);
    const double v = 0.25;
    const auto w = single_gaussian_world(mu, v * Eigen::Matrix2d::Identity());
    const ScoreSource score = world_score_source(w);
    NoiseSchedule s;
    s.sigma_min = 0.002;
    s.sigma_max = 80.0;
    Rng latent_rng(17);
    const Tensor latent = initial_latent(s, 10000, 2, latent_rng);
    const double k = std::sqrt(v / (v + s.sigma_max * s.sigma_max));

    double prev_err = 1e300;
    for (int steps : {32, 64, 128}) {
      s.steps = steps;
      const Tensor x = sample_ode_from(score, s, GuidanceSpec{}, 0, latent);
      const Moments m = moments(x);
      if (steps == 128) {
        CHECK((m.mean - mu).cwiseAbs().maxCoeff() < 0.02);
        CHECK((m.cov - v * Eigen::Matrix2d::Identity()).norm() < 0.03);
      }
      double err = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (int d = 0; d < 2; ++d) err = std::max(err, std::abs(x(i, d) - (mu(d) + (latent(i, d) - mu(d)) * k)));
      }
      CHECK(err < prev_err);
      prev_err = err;
    }
  }

  TEST_CASE("zero guidance reproduces the unguided trajectory bit for bit") {
    const auto w = default_world(0.6);
    const ScoreSource score = world_score_source(w);
    NoiseSchedule s;
    s.steps = 16;
    Rng r1(5), r2(5);
    const Tensor a = sample_ode(score, s, GuidanceSpec{}, 1, 64, r1);
    const Tensor b = sample_ode(score, s, GuidanceSpec{GuidanceMode::Cfg, 0.0}, 1, 64, r2);
    CHECK(a == b);
    Rng r3(5);
    CHECK(sample_ode(score, s, GuidanceSpec{}, 1, 64, r3) == a);
  }

  TEST_CASE("two-score guidance equals cfg with the matching channels") {
    const auto w = default_world(0.6);
    const ScoreSource score = world_score_source(w);
    NoiseSchedule s;
    s.steps = 12;
    Rng rng(8);
    const Tensor latent = initial_latent(s, 32, 2, rng);
    const Tensor cfg = sample_ode_from(score, s, GuidanceSpec{GuidanceMode::Cfg, 1.5}, 0, latent);
    const Tensor two = sample_ode_two_score([&](const Tensor& x, double sg) { return score(x, sg, 0); },
                                            [&](const Tensor& x, double sg) { return score(x, sg, kNullClass); }, s, 1.5,
                                            latent);
    CHECK(cfg == two);
    CHECK_THROWS(sample_ode_from(score, s, GuidanceSpec{GuidanceMode::TwoScore, 1.0}, 0, latent));
    CHECK_THROWS(sample_ode_from(score, s, GuidanceSpec{GuidanceMode::Cfg, -2.0}, 0, latent));
  }

  TEST_CASE("non-finite state is reported") {
    const ScoreSource bad = [](const Tensor& x, double, int) {
      Tensor out = x;
      for (double& v : out.values()) v = std::numeric_limits<double>::infinity();
      return out;
    };
    NoiseSchedule s;
    s.steps = 4;
    Rng rng(1);
    CHECK_THROWS_AS(sample_ode(bad, s, GuidanceSpec{}, 0, 4, rng), SamplingDiverged);
  }
}
