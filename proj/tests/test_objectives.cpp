#include "doctest.h"

#include <cmath>
#include <functional>
#include <numbers>
#include <set>

#include "guidefree/objectives.hpp"
#include "guidefree/optim.hpp"

using namespace guidefree;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig cfg;
  cfg.hidden_layers = 2;
  cfg.width = 12;
  cfg.embed_dim = 4;
  return cfg;
}

LabeledBatch batch_of(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_labeled(default_world(0.6), n, rng);
}

// Probes a loss through a fresh copy of the model so each evaluation sees
// exactly the probed parameters.
GradCheckReport check_loss(const DenoiserModel& model, const std::function<LossValue(const DenoiserModel&)>& f,
                           std::size_t probes = 60) {
  const LossWithGrad fn = [&](std::span<const double> p, std::span<double> g) {
    DenoiserModel m = model;
    std::copy(p.begin(), p.end(), m.params().begin());
    const LossValue v = f(m);
    std::copy(v.grad.begin(), v.grad.end(), g.begin());
    return v.value;
  };
  Rng probe(99);
  return grad_check(fn, model.params(), probes, probe);
}

// Makes every embedding row equal, so the network ignores its class input.
DenoiserModel class_blind(DenoiserModel m) {
  const ParamBlock& e = m.embedding();
  for (std::size_t r = 1; r < e.rows; ++r) {
    for (std::size_t c = 0; c < e.cols; ++c) m.params()[e.offset + r * e.cols + c] = m.params()[e.offset + c];
  }
  return m;
}

NoiseSchedule schedule_with(Weighting contrastive) {
  NoiseSchedule s;
  s.contrastive_weighting = contrastive;
  return s;
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("approach 1 builds one mismatched tuple per sample") {
    LabeledBatch b{Tensor({4, 2}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7}), {0, 1, 1, 0}};
    Rng rng(1);
    const auto t = build_tuples(b, TupleApproach::PerSample, 1, NoiseSchedule{}, rng);
    REQUIRE(t.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(t[i].c == b.labels[i]);
      CHECK(t[i].c_tilde != t[i].c);
      CHECK(t[i].c_tilde == 1 - t[i].c);  // only one other label present
      CHECK(t[i].x == std::vector<double>{b.x(i, 0), b.x(i, 1)});
    }
  }

  TEST_CASE("approach 2 shares noise across the K mismatches of a sample") {
    LabeledBatch b{Tensor({4, 2}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7}), {0, 1, 2, 0}};
    Rng rng(2);
    const auto t = build_tuples(b, TupleApproach::MultiMismatch, 3, NoiseSchedule{}, rng);
    REQUIRE(t.size() == 12);
    for (std::size_t i = 0; i < 4; ++i) {
      for (int k = 0; k < 3; ++k) {
        const auto& a = t[3 * i + k];
        CHECK(a.c == b.labels[i]);
        CHECK(a.c_tilde != a.c);
        CHECK(a.sigma == t[3 * i].sigma);
        CHECK(a.eps == t[3 * i].eps);
      }
    }
    CHECK(t[0].sigma != t[3].sigma);
    const auto p = build_preference_tuples(b, TupleApproach::MultiMismatch, 3, NoiseSchedule{}, rng);
    REQUIRE(p.size() == 12);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i].eps == p[i - i % 3].eps);
  }

  TEST_CASE("tuples need two labels") {
    LabeledBatch b{Tensor({3, 2}, 0.0), {1, 1, 1}};
    Rng rng(3);
    CHECK_THROWS_AS(build_tuples(b, TupleApproach::PerSample, 1, NoiseSchedule{}, rng), std::invalid_argument);
    CHECK_THROWS_AS(build_preference_tuples(b, TupleApproach::PerSample, 1, NoiseSchedule{}, rng),
                    std::invalid_argument);
  }

  TEST_CASE("preference tuples pair a sample with another class") {
    const LabeledBatch b = batch_of(64, 4);
    Rng rng(4);
    const auto p = build_preference_tuples(b, TupleApproach::PerSample, 1, NoiseSchedule{}, rng);
    REQUIRE(p.size() == 64);
    for (std::size_t i = 0; i < p.size(); ++i) {
      bool found_other = false;
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (b.labels[j] != p[i].c && std::vector<double>{b.x(j, 0), b.x(j, 1)} == p[i].x_l) found_other = true;
      }
      CHECK(found_other);
    }
  }

  TEST_CASE("dsm of a constant denoiser matches its analytic expectation") {
    // D = b everywhere, so E w ||x - b||^2 = w (||mu - b||^2 + tr Sigma) for x ~ N(mu, Sigma).
    DenoiserModel m = DenoiserModel::zeros(small_config());
    const ParamBlock& head = m.bias(m.layer_count() - 1);
    m.params()[head.offset] = 0.2;
    m.params()[head.offset + 1] = -0.1;
    Eigen::Matrix2d cov;
    cov << 0.5, 0.1, 0.1, 0.3;
    const auto w = single_gaussian_world(Eigen::Vector2d(1.0, 2.0), cov);
    Rng rng(5);
    const std::size_t n = 20000;
    const LabeledBatch b = sample_labeled(w, n, rng);
    NoiseSchedule s;
    DsmTerms terms{b.x, Tensor::matrix(n, 2), std::vector<double>(n, 0.7), b.labels};
    for (double& e : terms.eps.values()) e = rng.normal();
    const double wt = s.weight(0.7);
    const LossValue v = dsm_loss(m, terms, s);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = wt * (std::pow(b.x(i, 0) - 0.2, 2) + std::pow(b.x(i, 1) + 0.1, 2));
      sq += d * d;
    }
    const double se = std::sqrt((sq / n - v.value * v.value) / n);
    const double expected = wt * (std::pow(1.0 - 0.2, 2) + std::pow(2.0 + 0.1, 2) + cov.trace());
    CHECK(std::abs(v.value - expected) < 3.0 * se);
  }

  TEST_CASE("full label dropout leaves the class rows without gradient") {
    Rng init(6);
    const DenoiserModel m(small_config(), init);
    const LabeledBatch b = batch_of(32, 6);
    Rng rng(7);
    const LossValue v = dsm_loss(m, b, NoiseSchedule{}, 1.0, rng);
    const ParamBlock& e = m.embedding();
    for (std::size_t i = 0; i < 2 * e.cols; ++i) CHECK(v.grad[e.offset + i] == 0.0);
    double null_row = 0.0;
    for (std::size_t i = 2 * e.cols; i < 3 * e.cols; ++i) null_row += std::abs(v.grad[e.offset + i]);
    CHECK(null_row > 0.0);
  }

  TEST_CASE("losses are means: duplicating every row or tuple changes nothing") {
    Rng init(8);
    const DenoiserModel m(small_config(), init);
    const DenoiserModel ref = [&] {
      Rng r(80);
      return DenoiserModel(small_config(), r);
    }();
    const NoiseSchedule s;
    const LabeledBatch b = batch_of(16, 8);
    Rng rng(9);
    const DsmTerms terms = draw_dsm_terms(b, s, 0.1, rng);
    DsmTerms twice{Tensor::matrix(32, 2), Tensor::matrix(32, 2), {}, {}};
    for (int k = 0; k < 2; ++k) {
      for (std::size_t i = 0; i < 16; ++i) {
        for (int d = 0; d < 2; ++d) {
          twice.x(16 * k + i, d) = terms.x(i, d);
          twice.eps(16 * k + i, d) = terms.eps(i, d);
        }
        twice.sigma.push_back(terms.sigma[i]);
        twice.class_id.push_back(terms.class_id[i]);
      }
    }
    CHECK(dsm_loss(m, twice, s).value == doctest::Approx(dsm_loss(m, terms, s).value).epsilon(1e-14));

    auto tuples = build_tuples(b, TupleApproach::PerSample, 1, s, rng);
    auto doubled = tuples;
    doubled.insert(doubled.end(), tuples.begin(), tuples.end());
    CHECK(mclr_loss(m, doubled, s).value == doctest::Approx(mclr_loss(m, tuples, s).value).epsilon(1e-14));

    auto pref = build_preference_tuples(b, TupleApproach::PerSample, 1, s, rng);
    auto pref2 = pref;
    pref2.insert(pref2.end(), pref.begin(), pref.end());
    CHECK(ccdpo_loss(m, ref, pref2, s, 0.5).value == doctest::Approx(ccdpo_loss(m, ref, pref, s, 0.5).value).epsilon(1e-14));
    CHECK(cca_loss(m, ref, pref2, s, 0.5, 2.0).value ==
          doctest::Approx(cca_loss(m, ref, pref, s, 0.5, 2.0).value).epsilon(1e-14));
  }

  TEST_CASE("losses are permutation invariant over tuples") {
    Rng init(10);
    const DenoiserModel m(small_config(), init);
    const DenoiserModel ref = [&] {
      Rng r(81);
      return DenoiserModel(small_config(), r);
    }();
    const NoiseSchedule s;
    const LabeledBatch b = batch_of(16, 10);
    Rng rng(11);
    auto tuples = build_tuples(b, TupleApproach::PerSample, 1, s, rng);
    auto rev = tuples;
    std::reverse(rev.begin(), rev.end());
    CHECK(mclr_loss(m, rev, s).value == doctest::Approx(mclr_loss(m, tuples, s).value).epsilon(1e-14));
    auto pref = build_preference_tuples(b, TupleApproach::PerSample, 1, s, rng);
    auto prev = pref;
    std::reverse(prev.begin(), prev.end());
    CHECK(ccdpo_loss(m, ref, prev, s, 1.0).value == doctest::Approx(ccdpo_loss(m, ref, pref, s, 1.0).value).epsilon(1e-14));
    CHECK(cca_loss(m, ref, prev, s, 1.0, 1.0).value ==
          doctest::Approx(cca_loss(m, ref, pref, s, 1.0, 1.0).value).epsilon(1e-14));
  }

  TEST_CASE("mclr vanishes for matching labels and for class-blind models") {
    Rng init(12);
    const DenoiserModel m(small_config(), init);
    const NoiseSchedule s;
    const LabeledBatch b = batch_of(16, 12);
    Rng rng(13);
    auto tuples = build_tuples(b, TupleApproach::MultiMismatch, 2, s, rng);
    auto same = tuples;
    for (auto& t : same) t.c_tilde = t.c;
    const LossValue z = mclr_loss(m, same, s);
    CHECK(z.value == 0.0);
    CHECK(std::all_of(z.grad.begin(), z.grad.end(), [](double g) { return std::abs(g) < 1e-12; }));
    CHECK(mclr_loss(class_blind(m), tuples, s).value == 0.0);
    CHECK(mclr_loss(m, {}, s).value == 0.0);
  }

  TEST_CASE("preference losses at the reference model") {
    Rng init(14);
    const DenoiserModel m(small_config(), init);
    const NoiseSchedule s;
    const LabeledBatch b = batch_of(16, 14);
    Rng rng(15);
    const auto pref = build_preference_tuples(b, TupleApproach::PerSample, 1, s, rng);
    CHECK(ccdpo_loss(m, m, pref, s, 1.0).value == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(cca_loss(m, m, pref, s, 1.0, 3.0).value == doctest::Approx(4.0 * std::numbers::ln2).epsilon(1e-15));

    Rng other(140);
    const DenoiserModel ref(small_config(), other);
    const LossValue flat = ccdpo_loss(m, ref, pref, s, 0.0);
    CHECK(flat.value == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(std::all_of(flat.grad.begin(), flat.grad.end(), [](double g) { return g == 0.0; }));
  }

  TEST_CASE("cca with lambda 0 ignores the dispreferred samples") {
    Rng init(16), r2(160);
    const DenoiserModel m(small_config(), init), ref(small_config(), r2);
    const NoiseSchedule s;
    const LabeledBatch b = batch_of(16, 16);
    Rng rng(17);
    auto pref = build_preference_tuples(b, TupleApproach::PerSample, 1, s, rng);
    const double base = cca_loss(m, ref, pref, s, 0.7, 0.0).value;
    for (auto& t : pref) t.x_l = {5.0, -5.0};
    CHECK(cca_loss(m, ref, pref, s, 0.7, 0.0).value == base);
    CHECK(cca_loss(m, ref, pref, s, 0.7, 1.0).value != base);
  }

  TEST_CASE("reference shape must match") {
    Rng init(18);
    const DenoiserModel m(small_config(), init);
    DenoiserConfig wide = small_config();
    wide.width = 13;
    Rng r2(19);
    const DenoiserModel ref(wide, r2);
    const LabeledBatch b = batch_of(8, 18);
    Rng rng(20);
    const auto pref = build_preference_tuples(b, TupleApproach::PerSample, 1, NoiseSchedule{}, rng);
    CHECK_THROWS(ccdpo_loss(m, ref, pref, NoiseSchedule{}, 1.0));
    CHECK_THROWS(cca_loss(m, ref, pref, NoiseSchedule{}, 1.0, 1.0));
  }

  TEST_CASE("combined objective: limits and linearity in beta_dsm") {
    Rng init(21);
    const DenoiserModel m(small_config(), init);
    const NoiseSchedule s;
    const LabeledBatch b = batch_of(16, 21);
    Rng rng(22);
    const DsmTerms terms = draw_dsm_terms(b, s, 0.0, rng);
    const auto tuples = build_tuples(b, TupleApproach::PerSample, 1, s, rng);
    const double mclr = mclr_loss(m, tuples, s).value;
    const double dsm = dsm_loss(m, terms, s).value;
    CHECK(dsm_plus_mclr_loss(m, terms, tuples, s, 0.0).value == mclr);
    CHECK(dsm_plus_mclr_loss(m, terms, {}, s, 2.5).value == doctest::Approx(2.5 * dsm).epsilon(1e-14));
    const double l1 = dsm_plus_mclr_loss(m, terms, tuples, s, 0.3).value;
    const double l2 = dsm_plus_mclr_loss(m, terms, tuples, s, 1.1).value;
    const double l12 = dsm_plus_mclr_loss(m, terms, tuples, s, 1.4).value;
    CHECK(l1 + l2 - l12 == doctest::Approx(mclr).epsilon(1e-12));
  }

  TEST_CASE("every loss passes the gradient check") {
    Rng init(23), r2(24);
    const DenoiserModel m(small_config(), init), ref(small_config(), r2);
    const LabeledBatch b = batch_of(16, 23);
    for (Weighting w : {Weighting::Constant, Weighting::EdmBalanced}) {
      const NoiseSchedule s = schedule_with(w);
      Rng rng(25);
      const DsmTerms terms = draw_dsm_terms(b, s, 0.2, rng);
      const auto tuples = build_tuples(b, TupleApproach::MultiMismatch, 2, s, rng);
      const auto pref = build_preference_tuples(b, TupleApproach::PerSample, 1, s, rng);
      CHECK(check_loss(m, [&](const DenoiserModel& x) { return dsm_loss(x, terms, s); }).max_relative_error < 1e-4);
      CHECK(check_loss(m, [&](const DenoiserModel& x) { return mclr_loss(x, tuples, s); }).max_relative_error < 1e-4);
      CHECK(check_loss(m, [&](const DenoiserModel& x) { return ccdpo_loss(x, ref, pref, s, 0.8); })
                .max_relative_error < 1e-4);
      CHECK(check_loss(m, [&](const DenoiserModel& x) { return cca_loss(x, ref, pref, s, 0.8, 1.7); })
                .max_relative_error < 1e-4);
      CHECK(check_loss(m, [&](const DenoiserModel& x) { return dsm_plus_mclr_loss(x, terms, tuples, s, 0.5); })
                .max_relative_error < 1e-4);
    }
  }

  TEST_CASE("train spec validation and names") {
    TrainSpec t;
    CHECK_NOTHROW(t.validate());
    t.approach = TupleApproach::MultiMismatch;
    t.k = 0;
    CHECK_THROWS(t.validate());
    t = TrainSpec{};
    t.objective = ObjectiveKind::Cca;
    t.lambda = 0.0;
    CHECK_THROWS(t.validate());
    t = TrainSpec{};
    t.objective = ObjectiveKind::CcDpo;
    t.beta = 0.0;
    CHECK_THROWS(t.validate());
    for (ObjectiveKind k : {ObjectiveKind::Dsm, ObjectiveKind::Mclr, ObjectiveKind::DsmMclr, ObjectiveKind::CcDpo,
                            ObjectiveKind::Cca}) {
      CHECK(objective_from_name(objective_name(k)) == k);
    }
    CHECK_THROWS(objective_from_name("sft"));
  }

  TEST_CASE("zero iterations return the initial model") {
    Rng init(26);
    const DenoiserModel m(small_config(), init);
    TrainSpec t;
    t.iterations = 0;
    Rng rng(27);
    std::vector<std::uint64_t> seen;
    const TrainResult r = train(t, default_world(), NoiseSchedule{}, m, rng,
                                [&](std::uint64_t it, const DenoiserModel&, double) { seen.push_back(it); });
    CHECK(r.model == m);
    CHECK(r.losses.empty());
    CHECK(seen == std::vector<std::uint64_t>{0});
  }

  TEST_CASE("training is deterministic and emits checkpoints on cadence") {
    Rng init(28);
    const DenoiserModel m(small_config(), init);
    for (ObjectiveKind k : {ObjectiveKind::Dsm, ObjectiveKind::Mclr, ObjectiveKind::DsmMclr, ObjectiveKind::CcDpo,
                            ObjectiveKind::Cca}) {
      TrainSpec t;
      t.objective = k;
      t.iterations = 25;
      t.checkpoint_every = 10;
      t.batch_size = 32;
      t.learning_rate = 1e-4;
      Rng a(29), b(29);
      std::vector<std::uint64_t> seen;
      const TrainResult ra = train(t, default_world(), NoiseSchedule{}, m, a,
                                   [&](std::uint64_t it, const DenoiserModel&, double) { seen.push_back(it); });
      const TrainResult rb = train(t, default_world(), NoiseSchedule{}, m, b);
      CHECK(ra.model == rb.model);
      CHECK(ra.losses == rb.losses);
      CHECK(ra.losses.size() == 25);
      CHECK(!(ra.model == m));
      CHECK(seen == std::vector<std::uint64_t>{0, 10, 20, 25});
    }
  }

  TEST_CASE("divergence reports the iteration") {
    Rng init(30);
    DenoiserModel m(small_config(), init);
    const ParamBlock& head = m.bias(m.layer_count() - 1);
    m.params()[head.offset] = std::numeric_limits<double>::infinity();
    TrainSpec t;
    t.iterations = 3;
    Rng rng(31);
    try {
      train(t, default_world(), NoiseSchedule{}, m, rng);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.iteration() == 1);
    }
  }

  TEST_CASE("sigma_data estimate of the default world") {
    // Per-coordinate variance of the circle layout: 0.25 + 4 * E[cos^2] averaged over both axes = 2.25.
    Rng rng(32);
    CHECK(estimate_sigma_data(default_world(0.6), 200000, rng) == doctest::Approx(1.5).epsilon(0.01));
  }
}

TEST_SUITE("training") {
  TEST_CASE("denoising loss halves over 5000 iterations on the default world") {
    Rng init(40);
    const DenoiserModel m(DenoiserConfig{}, init);
    TrainSpec t;
    t.iterations = 5000;
    t.checkpoint_every = 5000;
    NoiseSchedule s;
    Rng sd(41);
    s.sigma_data = estimate_sigma_data(default_world(), 100000, sd);
    Rng rng(42);
    const TrainResult r = train(t, default_world(), s, m, rng);
    auto window = [&](std::size_t end) {
      double v = 0.0;
      for (std::size_t i = end - 50; i < end; ++i) v += r.losses[i];
      return v / 50.0;
    };
    const double early = window(100);
    const double late = window(r.losses.size());
    MESSAGE("loss around iteration 100: " << early << ", final: " << late);
    CHECK(late <= 0.5 * early);
  }
}
