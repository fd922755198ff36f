#include "guidefree/verify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "guidefree/closedform.hpp"
#include "guidefree/worlds.hpp"
#include "json.hpp"

namespace guidefree {

using nlohmann::json;

namespace {

constexpr double kTheorem1Floor = 1e-9;
constexpr double kExactFloor = 1e-12;
constexpr double kOracleTol = 1e-5;
constexpr double kRecoveryTol = 1e-9;
constexpr double kIdentityTol = 1e-12;
constexpr double kSeMultiple = 3.0;

const double kEtas[] = {0.5, 1.0, 2.0};
const double kBetas[] = {0.5, 1.0, 2.0};

// Accumulates one check's cases and writes both the summary and JSON.
class Check {
 public:
  Check(std::string name, double tolerance, const VerifyOptions& opt)
      : summary_{std::move(name), 0, 0.0, opt.tolerance.value_or(tolerance), true} {}

  void add(double gap, json detail) {
    ++summary_.cases;
    const bool ok = gap < summary_.tolerance;
    summary_.passed = summary_.passed && ok;
    summary_.max_gap = std::max(summary_.max_gap, std::isnan(gap) ? INFINITY : gap);
    detail["gap"] = gap;
    detail["passed"] = ok;
    cases_.push_back(std::move(detail));
  }

  void fail(json detail) {
    ++summary_.cases;
    summary_.passed = false;
    detail["passed"] = false;
    cases_.push_back(std::move(detail));
  }

  const CheckSummary& summary() const { return summary_; }

  json to_json() const {
    return {{"name", summary_.name},     {"cases", summary_.cases},   {"max_gap", summary_.max_gap},
            {"tolerance", summary_.tolerance}, {"passed", summary_.passed}, {"details", cases_}};
  }

 private:
  CheckSummary summary_;
  json cases_ = json::array();
};

SuiteReport finish(const std::string& suite, const VerifyOptions& opt, const std::vector<const Check*>& checks,
                   json extra = json::object()) {
  SuiteReport rep;
  rep.suite = suite;
  rep.passed = true;
  json list = json::array();
  for (const Check* c : checks) {
    rep.checks.push_back(c->summary());
    rep.passed = rep.passed && c->summary().passed;
    list.push_back(c->to_json());
  }
  json root = {{"suite", suite}, {"seed", opt.seed}, {"passed", rep.passed}, {"checks", list}};
  if (opt.tolerance) root["tolerance_override"] = *opt.tolerance;
  for (auto& [k, v] : extra.items()) root[k] = v;
  rep.json = root.dump(2) + "\n";
  return rep;
}

struct Case {
  std::uint64_t seed;
  DiscreteProblem problem;
  double param;
};

// Replay: DiscreteProblem::random(S, M, Rng(case_seed)) after drawing S, M
// and the parameter from the same stream.
Case random_case(const VerifyOptions& opt, std::uint64_t salt, int index, const double* params) {
  const std::uint64_t case_seed = Rng(opt.seed).fork(salt).fork(static_cast<std::uint64_t>(index)).seed();
  Rng rng(case_seed);
  const int s = 3 + static_cast<int>(rng.below(6));
  const int m = 2 + static_cast<int>(rng.below(2));
  const double param = params[rng.below(3)];
  return {case_seed, DiscreteProblem::random(s, m, rng), param};
}

ConditionalTable random_table(int s, int m, Rng& rng) {
  ConditionalTable t(s, m);
  for (int c = 0; c < m; ++c) t.set_column(c, dirichlet_ones(s, rng));
  return t;
}

json case_json(const Case& k) {
  return {{"case_seed", k.seed},
          {"support", k.problem.support()},
          {"classes", k.problem.classes()},
          {"priors", k.problem.priors()},
          {"table", k.problem.cond().values}};
}

DiscreteProblem canonical_problem() {
  ConditionalTable t(3, 2);
  t.set_column(0, {0.7, 0.2, 0.1});
  t.set_column(1, {0.1, 0.2, 0.7});
  return DiscreteProblem(t, {0.5, 0.5});
}

// Entries are exactly delta or h / lambda within 1e-12; sums to 1 within 1e-12;
// the bracket holds and A is non-increasing in lambda along the trace.
bool clip_structure_ok(const MclrSolution& sol, double delta) {
  double sum = 0.0;
  for (std::size_t x = 0; x < sol.dist.p.size(); ++x) {
    const double v = sol.dist.p[x];
    sum += v;
    if (v < delta) return false;
    if (v != delta && std::abs(v - sol.h[x] / sol.report.lambda) > 1e-12) return false;
  }
  if (std::abs(sum - 1.0) > 1e-12) return false;
  const auto& r = sol.report;
  if (!(r.mass_at_lo >= r.target_mass && r.mass_at_hi <= r.target_mass)) return false;
  auto trace = r.trace;
  std::sort(trace.begin(), trace.end());
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].second > trace[i - 1].second) return false;
  }
  return true;
}

SuiteReport theorem1(const VerifyOptions& opt) {
  Check oracle("mclr_vs_oracle", kOracleTol, opt);
  Check structure("clip_structure", 0.5, opt);
  Check canonical("canonical_s3", kOracleTol, opt);
  for (int i = 0; i < opt.problems; ++i) {
    const Case k = random_case(opt, 1, i, kEtas);
    const LogLinearObjective obj = likelihood_ratio_objective(k.problem, k.param);
    const ConditionalTable table = brute_force_table(obj, kTheorem1Floor, {.seed = k.seed});
    for (int c = 0; c < k.problem.classes(); ++c) {
      json d = case_json(k);
      d["eta"] = k.param;
      d["class"] = c;
      try {
        const MclrSolution sol = mclr_optimum(k.problem, c, k.param, kTheorem1Floor);
        d["lambda"] = sol.report.lambda;
        d["residual"] = sol.report.residual;
        oracle.add(total_variation(sol.dist.p, table.column(c)), d);
        structure.add(clip_structure_ok(sol, kTheorem1Floor) ? 0.0 : 1.0, d);
      } catch (const std::exception& e) {
        d["error"] = e.what();
        oracle.fail(d);
      }
    }
  }
  const DiscreteProblem p = canonical_problem();
  const std::vector<double> expected{5.0 / 6.0, 1.0 / 6.0, 0.0};
  canonical.add(total_variation(mclr_optimum_limit(p, 0, 1.0).p, expected), {{"method", "limit"}, {"class", 0}});
  canonical.add(total_variation(mclr_optimum(p, 0, 1.0, kExactFloor).dist.p, expected),
                {{"method", "floored"}, {"delta", kExactFloor}, {"class", 0}});
  const SimplexDist brute =
      brute_force_simplex(log_likelihood_objective(mclr_target(p, 0, 1.0)), kTheorem1Floor, {.seed = opt.seed});
  canonical.add(total_variation(brute.p, expected), {{"method", "oracle"}, {"delta", kTheorem1Floor}, {"class", 0}});
  return finish("theorem1", opt, {&oracle, &structure, &canonical});
}

SuiteReport theorem2(const VerifyOptions& opt) {
  Check oracle("ccdpo_vs_oracle", kOracleTol, opt);
  for (int i = 0; i < opt.problems; ++i) {
    const Case k = random_case(opt, 2, i, kBetas);
    Rng ref_rng = Rng(k.seed).fork(1);
    const ConditionalTable ref = random_table(k.problem.support(), k.problem.classes(), ref_rng);
    for (int c = 0; c < k.problem.classes(); ++c) {
      json d = case_json(k);
      d["beta"] = k.param;
      d["class"] = c;
      try {
        const SimplexDist closed = ccdpo_optimum(k.problem, ref, c, k.param);
        const ContrastiveSolution brute =
            brute_force_contrastive(k.problem, ref, c, {ContrastiveKind::CcDpo, k.param, std::nullopt});
        d["newton_iterations"] = brute.iterations;
        oracle.add(total_variation(closed, brute.dist), d);
      } catch (const std::exception& e) {
        d["error"] = e.what();
        oracle.fail(d);
      }
    }
  }
  return finish("theorem2", opt, {&oracle});
}

SuiteReport equivalence(const VerifyOptions& opt) {
  Check pair("ccdpo_vs_cca", kOracleTol, opt);
  Check closed_gap("cca_vs_closed_form", kOracleTol, opt);
  Check reg("regularizer_identity", kIdentityTol, opt);
  for (int i = 0; i < opt.problems; ++i) {
    const Case k = random_case(opt, 3, i, kBetas);
    Rng ref_rng = Rng(k.seed).fork(1);
    const ConditionalTable ref = random_table(k.problem.support(), k.problem.classes(), ref_rng);
    for (int c = 0; c < k.problem.classes(); ++c) {
      json d = case_json(k);
      d["beta"] = k.param;
      d["class"] = c;
      try {
        const ContrastiveSolution a =
            brute_force_contrastive(k.problem, ref, c, {ContrastiveKind::CcDpo, k.param, std::nullopt});
        const ContrastiveSolution b =
            brute_force_contrastive(k.problem, ref, c, {ContrastiveKind::Cca, k.param, std::nullopt});
        d["lambda"] = b.lambda;
        d["cca_unnormalized_mass"] = b.unnormalized_mass;
        pair.add(total_variation(a.dist, b.dist), d);
        closed_gap.add(total_variation(ccdpo_optimum(k.problem, ref, c, k.param), b.dist), d);
      } catch (const std::exception& e) {
        d["error"] = e.what();
        pair.fail(d);
      }
    }
  }
  for (int i = 0; i < 20; ++i) {
    const Case k = random_case(opt, 4, i, kEtas);
    Rng q_rng = Rng(k.seed).fork(1);
    const ConditionalTable q = random_table(k.problem.support(), k.problem.classes(), q_rng);
    const double r_sym = regularizer_symmetric(k.problem, q);
    const double r_mis = regularizer_mismatch(k.problem, q);
    const double r_mar = regularizer_marginal(k.problem, q);
    json d = case_json(k);
    d["symmetric"] = r_sym;
    d["mismatch"] = r_mis;
    d["marginal"] = r_mar;
    reg.add(std::max({std::abs(r_sym - r_mis), std::abs(r_mis - r_mar), std::abs(r_sym - r_mar)}), d);
  }
  return finish("equivalence", opt, {&pair, &closed_gap, &reg});
}

SuiteReport corollaries(const VerifyOptions& opt) {
  Check mixture("mixture_ref_recovery", kRecoveryTol, opt);
  Check gamma("gamma_ref_recovery", kRecoveryTol, opt);
  Check limit("limit_vs_floored", kRecoveryTol, opt);
  Check identity("eta_zero_identity", kRecoveryTol, opt);
  const double mixture_etas[] = {0.1, 0.3, 0.7};
  for (int i = 0; i < 20; ++i) {
    const Case k = random_case(opt, 5, i, kEtas);
    for (int c = 0; c < k.problem.classes(); ++c) {
      const std::vector<double> truth = k.problem.cond().column(c);
      for (double eta : mixture_etas) {
        const ConditionalTable ref = mixture_ref(k.problem, eta);
        json d = case_json(k);
        d["eta"] = eta;
        d["class"] = c;
        mixture.add(total_variation(mclr_optimum(k.problem, c, eta, kExactFloor, &ref).dist.p, truth), d);
      }
      for (double beta : kBetas) {
        const ConditionalTable ref = gamma_ref(k.problem, beta);
        json d = case_json(k);
        d["beta"] = beta;
        d["class"] = c;
        gamma.add(total_variation(ccdpo_optimum(k.problem, ref, c, beta).p, truth), d);
      }
      json d = case_json(k);
      d["eta"] = k.param;
      d["class"] = c;
      limit.add(total_variation(mclr_optimum_limit(k.problem, c, k.param).p,
                                mclr_optimum(k.problem, c, k.param, kExactFloor).dist.p),
                d);
      json z = case_json(k);
      z["class"] = c;
      identity.add(total_variation(mclr_optimum(k.problem, c, 0.0, kTheorem1Floor).dist.p, truth), z);
    }
  }
  return finish("corollaries", opt, {&mixture, &gamma, &limit, &identity});
}

SuiteReport theorem3(const VerifyOptions& opt) {
  const Mixture1dWorld world = default_world_1d();
  const double se_multiple = opt.tolerance.value_or(kSeMultiple);
  const std::vector<double> grid = linspace(-4.0, 4.0, 21);
  const double sigmas[] = {0.1, 0.5, 2.0};
  const std::size_t mc = 100000;
  const int class_id = 0;

  CheckSummary within{"mc_within_se", 0, 0.0, se_multiple, true};
  Check ratio("weight_ratio_paths", kIdentityTol, opt);
  json runs = json::array();
  for (double sigma : sigmas) {
    for (double eta : kEtas) {
      Rng rng(opt.seed);
      const GuidanceReport rep = verify_theorem3(world, class_id, eta, sigma, grid, mc, rng, se_multiple);
      json pts = json::array();
      for (const auto& pt : rep.points) {
        pts.push_back({{"x_t", pt.x_t},
                       {"analytic", pt.analytic},
                       {"monte_carlo", pt.monte_carlo},
                       {"standard_error", pt.standard_error},
                       {"deviation", pt.deviation},
                       {"within", pt.within}});
        within.cases += 1;
        within.max_gap = std::max(within.max_gap, pt.standard_error > 0.0 ? pt.deviation / pt.standard_error : 0.0);
        ratio.add(std::abs(pt.weight_ratio - pt.weight_ratio_direct) / std::abs(pt.weight_ratio_direct),
                  {{"sigma", sigma}, {"eta", eta}, {"x_t", pt.x_t}});
      }
      within.passed = within.passed && rep.passed;
      runs.push_back({{"eta", eta},
                      {"sigma", sigma},
                      {"class", class_id},
                      {"mc_samples", mc},
                      {"max_deviation", rep.max_deviation},
                      {"max_z", rep.max_z},
                      {"passed", rep.passed},
                      {"points", pts}});
    }
  }
  SuiteReport out = finish("theorem3", opt, {&ratio}, {{"runs", runs}, {"se_multiple", se_multiple}});
  // The standard-error check is summarized as max |z| against se_multiple.
  out.checks.insert(out.checks.begin(), within);
  out.passed = out.passed && within.passed;
  json root = json::parse(out.json);
  root["passed"] = out.passed;
  root["checks"].insert(root["checks"].begin(), json{{"name", within.name},
                                                     {"cases", within.cases},
                                                     {"max_gap", within.max_gap},
                                                     {"tolerance", within.tolerance},
                                                     {"passed", within.passed}});
  out.json = root.dump(2) + "\n";
  return out;
}

}  // namespace

const CheckSummary* SuiteReport::find(const std::string& check) const {
  for (const auto& c : checks) {
    if (c.name == check) return &c;
  }
  return nullptr;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"theorem1", "theorem2", "theorem3", "equivalence", "corollaries"};
  return names;
}

SuiteReport run_suite(const std::string& suite, const VerifyOptions& options) {
  if (options.problems < 1) throw std::invalid_argument("verify needs at least one problem");
  if (suite == "theorem1") return theorem1(options);
  if (suite == "theorem2") return theorem2(options);
  if (suite == "theorem3") return theorem3(options);
  if (suite == "equivalence") return equivalence(options);
  if (suite == "corollaries") return corollaries(options);
  throw std::invalid_argument("unknown suite '" + suite +
                              "' (theorem1, theorem2, theorem3, equivalence, corollaries, all)");
}

SuiteReport run_verify(const std::string& suite, const VerifyOptions& options) {
  if (suite != "all") return run_suite(suite, options);
  SuiteReport all;
  all.suite = "all";
  all.passed = true;
  json suites = json::array();
  for (const auto& name : suite_names()) {
    SuiteReport r = run_suite(name, options);
    all.passed = all.passed && r.passed;
    for (auto& c : r.checks) {
      c.name = name + "." + c.name;
      all.checks.push_back(c);
    }
    suites.push_back(json::parse(r.json));
  }
  json root = {{"suite", "all"}, {"seed", options.seed}, {"passed", all.passed}, {"suites", suites}};
  all.json = root.dump(2) + "\n";
  return all;
}

}  // namespace guidefree
