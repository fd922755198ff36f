#include "guidefree/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "guidefree/optim.hpp"

namespace guidefree {

void TrainSpec::validate() const {
  if (approach == TupleApproach::MultiMismatch && k < 1) throw std::invalid_argument("approach 2 needs k >= 1");
  if (approach != TupleApproach::PerSample && approach != TupleApproach::MultiMismatch) {
    throw std::invalid_argument("tuple approach must be 1 or 2");
  }
  if ((objective == ObjectiveKind::CcDpo || objective == ObjectiveKind::Cca) && !(beta > 0.0)) {
    throw std::invalid_argument("beta must be positive");
  }
  if (objective == ObjectiveKind::Cca && !(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (objective == ObjectiveKind::DsmMclr && !(beta_dsm >= 0.0)) {
    throw std::invalid_argument("beta_dsm must be non-negative");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) throw std::invalid_argument("label dropout must lie in [0, 1]");
  if (checkpoint_every == 0) throw std::invalid_argument("checkpoint cadence must be positive");
}

std::string objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::Dsm:
      return "dsm";
    case ObjectiveKind::Mclr:
      return "mclr";
    case ObjectiveKind::DsmMclr:
      return "dsm+mclr";
    case ObjectiveKind::CcDpo:
      return "ccdpo";
    case ObjectiveKind::Cca:
      return "cca";
  }
  return "dsm";
}

ObjectiveKind objective_from_name(const std::string& name) {
  for (auto kind : {ObjectiveKind::Dsm, ObjectiveKind::Mclr, ObjectiveKind::DsmMclr, ObjectiveKind::CcDpo,
                    ObjectiveKind::Cca}) {
    if (objective_name(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown objective '" + name + "'");
}

namespace {

std::vector<double> row_copy(const Tensor& t, std::size_t r) {
  const auto s = t.row(r);
  return {s.begin(), s.end()};
}

std::vector<double> normal_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& e : v) e = rng.normal();
  return v;
}

// Positions j with labels[j] != c, for every class present.
std::vector<std::vector<std::size_t>> mismatch_pools(const LabeledBatch& batch) {
  int max_label = 0;
  for (int c : batch.labels) max_label = std::max(max_label, c);
  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(max_label) + 1);
  bool two_labels = false;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.labels[i] != batch.labels[0]) two_labels = true;
  }
  if (!two_labels) throw std::invalid_argument("tuple construction needs at least two distinct labels");
  for (int c = 0; c <= max_label; ++c) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      if (batch.labels[j] != c) pools[c].push_back(j);
    }
  }
  return pools;
}

int repeats(TupleApproach approach, int k) { return approach == TupleApproach::PerSample ? 1 : k; }

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Noised inputs x + sigma * eps for a list of clean rows sharing per-row noise.
struct Stack {
  Tensor clean;
  Tensor noised;
  std::vector<double> sigma;
  std::vector<int> class_id;
};

Stack make_stack(std::size_t rows, std::size_t dim) {
  return {Tensor::matrix(rows, dim), Tensor::matrix(rows, dim), std::vector<double>(rows),
          std::vector<int>(rows)};
}

void put_row(Stack& s, std::size_t r, std::span<const double> x, std::span<const double> eps, double sigma,
             int class_id) {
  if (x.size() != s.clean.cols() || eps.size() != s.clean.cols()) throw ShapeError("tuple dimension mismatch");
  for (std::size_t d = 0; d < x.size(); ++d) {
    s.clean(r, d) = x[d];
    s.noised(r, d) = x[d] + sigma * eps[d];
  }
  s.sigma[r] = sigma;
  s.class_id[r] = class_id;
}

void require_compatible(const DenoiserModel& model, const DenoiserModel& ref) {
  if (!(model.config() == ref.config())) throw ShapeError("reference model shape differs from the trained model");
}

std::size_t tuple_dim(const std::vector<ContrastiveTuple>& t) { return t.empty() ? 0 : t.front().x.size(); }
std::size_t tuple_dim(const std::vector<PreferenceTuple>& t) { return t.empty() ? 0 : t.front().x_w.size(); }

// Shared evaluation for the two preference losses. Rows [0, n) hold the
// preferred sample, rows [n, 2n) the dispreferred one; both at class c.
struct PreferencePass {
  Stack stack;
  Tensor out;
  ForwardCache cache;
  std::vector<double> delta;  // per row
  std::vector<double> weight;  // per tuple
};

PreferencePass preference_pass(const DenoiserModel& model, const DenoiserModel& ref_model,
                               const std::vector<PreferenceTuple>& tuples, const NoiseSchedule& schedule) {
  require_compatible(model, ref_model);
  const std::size_t n = tuples.size();
  PreferencePass p{make_stack(2 * n, tuple_dim(tuples)), {}, {}, std::vector<double>(2 * n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = tuples[i];
    put_row(p.stack, i, t.x_w, t.eps, t.sigma, t.c);
    put_row(p.stack, n + i, t.x_l, t.eps, t.sigma, t.c);
    p.weight[i] = schedule.contrastive_weight(t.sigma);
  }
  p.out = forward(model, p.stack.noised, p.stack.sigma, p.stack.class_id, &p.cache);
  const Tensor ref_out = forward(ref_model, p.stack.noised, p.stack.sigma, p.stack.class_id);
  for (std::size_t r = 0; r < 2 * n; ++r) {
    p.delta[r] = sq_dist(p.stack.clean.row(r), p.out.row(r)) - sq_dist(p.stack.clean.row(r), ref_out.row(r));
  }
  return p;
}

// Backpropagates per-row coefficients g_r through d delta_r / d D = 2 (D - x).
LossValue finish_preference(const DenoiserModel& model, const PreferencePass& p, double value,
                            const std::vector<double>& dloss_ddelta) {
  LossValue result{value, std::vector<double>(model.parameter_count(), 0.0)};
  Tensor upstream = Tensor::matrix(p.out.rows(), p.out.cols());
  for (std::size_t r = 0; r < p.out.rows(); ++r) {
    for (std::size_t d = 0; d < p.out.cols(); ++d) {
      upstream(r, d) = dloss_ddelta[r] * 2.0 * (p.out(r, d) - p.stack.clean(r, d));
    }
  }
  backward(model, p.cache, upstream, result.grad);
  return result;
}

}  // namespace

std::vector<ContrastiveTuple> build_tuples(const LabeledBatch& batch, TupleApproach approach, int k,
                                           const NoiseSchedule& schedule, Rng& rng) {
  const auto pools = mismatch_pools(batch);
  const int reps = repeats(approach, k);
  if (reps < 1) throw std::invalid_argument("approach 2 needs k >= 1");
  std::vector<ContrastiveTuple> out;
  out.reserve(batch.size() * reps);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int c = batch.labels[i];
    const double sigma = schedule.draw_sigma(rng);
    const std::vector<double> eps = normal_vector(batch.x.cols(), rng);
    const auto& pool = pools[c];
    for (int r = 0; r < reps; ++r) {
      const std::size_t j = pool[rng.below(pool.size())];
      out.push_back({row_copy(batch.x, i), c, batch.labels[j], sigma, eps});
    }
  }
  return out;
}

std::vector<PreferenceTuple> build_preference_tuples(const LabeledBatch& batch, TupleApproach approach, int k,
                                                     const NoiseSchedule& schedule, Rng& rng) {
  const auto pools = mismatch_pools(batch);
  const int reps = repeats(approach, k);
  if (reps < 1) throw std::invalid_argument("approach 2 needs k >= 1");
  std::vector<PreferenceTuple> out;
  out.reserve(batch.size() * reps);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int c = batch.labels[i];
    const double sigma = schedule.draw_sigma(rng);
    const std::vector<double> eps = normal_vector(batch.x.cols(), rng);
    const auto& pool = pools[c];
    for (int r = 0; r < reps; ++r) {
      const std::size_t j = pool[rng.below(pool.size())];
      out.push_back({row_copy(batch.x, i), row_copy(batch.x, j), c, sigma, eps});
    }
  }
  return out;
}

DsmTerms draw_dsm_terms(const LabeledBatch& batch, const NoiseSchedule& schedule, double dropout_p, Rng& rng) {
  const std::size_t n = batch.size();
  DsmTerms terms{batch.x, Tensor::matrix(n, batch.x.cols()), std::vector<double>(n), batch.labels};
  for (std::size_t i = 0; i < n; ++i) {
    terms.sigma[i] = schedule.draw_sigma(rng);
    for (std::size_t d = 0; d < batch.x.cols(); ++d) terms.eps(i, d) = rng.normal();
    if (dropout_p > 0.0 && rng.uniform() < dropout_p) terms.class_id[i] = kNullClass;
  }
  return terms;
}

LossValue dsm_loss(const DenoiserModel& model, const DsmTerms& terms, const NoiseSchedule& schedule) {
  const std::size_t n = terms.x.rows();
  LossValue result{0.0, std::vector<double>(model.parameter_count(), 0.0)};
  if (n == 0) return result;
  const Tensor x_t = corrupt(terms.x, terms.sigma, terms.eps);
  ForwardCache cache;
  const Tensor out = forward(model, x_t, terms.sigma, terms.class_id, &cache);
  Tensor upstream = Tensor::matrix(n, out.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double w = schedule.weight(terms.sigma[r]);
    result.value += w * sq_dist(terms.x.row(r), out.row(r));
    for (std::size_t d = 0; d < out.cols(); ++d) upstream(r, d) = 2.0 * w * inv_n * (out(r, d) - terms.x(r, d));
  }
  result.value *= inv_n;
  backward(model, cache, upstream, result.grad);
  return result;
}

LossValue dsm_loss(const DenoiserModel& model, const LabeledBatch& batch, const NoiseSchedule& schedule,
                   double dropout_p, Rng& rng) {
  return dsm_loss(model, draw_dsm_terms(batch, schedule, dropout_p, rng), schedule);
}

LossValue mclr_loss(const DenoiserModel& model, const std::vector<ContrastiveTuple>& tuples,
                    const NoiseSchedule& schedule) {
  const std::size_t n = tuples.size();
  LossValue result{0.0, std::vector<double>(model.parameter_count(), 0.0)};
  if (n == 0) return result;
  // Rows [0, n) carry the true class, rows [n, 2n) the mismatched class.
  Stack s = make_stack(2 * n, tuple_dim(tuples));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = tuples[i];
    put_row(s, i, t.x, t.eps, t.sigma, t.c);
    put_row(s, n + i, t.x, t.eps, t.sigma, t.c_tilde);
  }
  ForwardCache cache;
  const Tensor out = forward(model, s.noised, s.sigma, s.class_id, &cache);
  Tensor upstream = Tensor::matrix(2 * n, out.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = schedule.contrastive_weight(tuples[i].sigma);
    result.value += w * (sq_dist(s.clean.row(i), out.row(i)) - sq_dist(s.clean.row(n + i), out.row(n + i)));
    for (std::size_t d = 0; d < out.cols(); ++d) {
      upstream(i, d) = 2.0 * w * inv_n * (out(i, d) - s.clean(i, d));
      upstream(n + i, d) = -2.0 * w * inv_n * (out(n + i, d) - s.clean(n + i, d));
    }
  }
  result.value *= inv_n;
  backward(model, cache, upstream, result.grad);
  return result;
}

LossValue ccdpo_loss(const DenoiserModel& model, const DenoiserModel& ref_model,
                     const std::vector<PreferenceTuple>& tuples, const NoiseSchedule& schedule, double beta) {
  const std::size_t n = tuples.size();
  if (n == 0) {
    require_compatible(model, ref_model);
    return {0.0, std::vector<double>(model.parameter_count(), 0.0)};
  }
  const PreferencePass p = preference_pass(model, ref_model, tuples, schedule);
  const double inv_n = 1.0 / static_cast<double>(n);
  double value = 0.0;
  std::vector<double> g(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = beta * p.weight[i];
    const double z = a * (-p.delta[i] + p.delta[n + i]);
    value += softplus(-z);
    const double dz = -sigmoid(-z) * inv_n;  // d softplus(-z) / dz
    g[i] = -a * dz;
    g[n + i] = a * dz;
  }
  return finish_preference(model, p, value * inv_n, g);
}

LossValue cca_loss(const DenoiserModel& model, const DenoiserModel& ref_model,
                   const std::vector<PreferenceTuple>& tuples, const NoiseSchedule& schedule, double beta,
                   double lambda) {
  const std::size_t n = tuples.size();
  if (n == 0) {
    require_compatible(model, ref_model);
    return {0.0, std::vector<double>(model.parameter_count(), 0.0)};
  }
  const PreferencePass p = preference_pass(model, ref_model, tuples, schedule);
  const double inv_n = 1.0 / static_cast<double>(n);
  double value = 0.0;
  std::vector<double> g(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = beta * p.weight[i];
    const double uw = a * p.delta[i];
    const double ul = a * p.delta[n + i];
    // -log sigmoid(-u) = softplus(u)
    value += softplus(uw) + lambda * softplus(-ul);
    g[i] = a * sigmoid(uw) * inv_n;
    g[n + i] = -lambda * a * sigmoid(-ul) * inv_n;
  }
  return finish_preference(model, p, value * inv_n, g);
}

LossValue dsm_plus_mclr_loss(const DenoiserModel& model, const DsmTerms& terms,
                             const std::vector<ContrastiveTuple>& tuples, const NoiseSchedule& schedule,
                             double beta_dsm) {
  LossValue total = mclr_loss(model, tuples, schedule);
  if (beta_dsm != 0.0) {
    const LossValue dsm = dsm_loss(model, terms, schedule);
    total.value += beta_dsm * dsm.value;
    for (std::size_t i = 0; i < total.grad.size(); ++i) total.grad[i] += beta_dsm * dsm.grad[i];
  }
  return total;
}

double estimate_sigma_data(const GaussianMixtureWorld& world, std::size_t n, Rng& rng) {
  const LabeledBatch b = sample_labeled(world, n, rng);
  double total = 0.0;
  for (std::size_t d = 0; d < b.x.cols(); ++d) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += b.x(r, d);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (b.x(r, d) - mean) * (b.x(r, d) - mean);
    total += var / static_cast<double>(n - 1);
  }
  return std::sqrt(total / static_cast<double>(b.x.cols()));
}

TrainResult train(const TrainSpec& spec, const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                  const DenoiserModel& init, Rng& rng, const CheckpointCallback& on_checkpoint) {
  spec.validate();
  schedule.validate();
  TrainResult result{init, {}};
  result.losses.reserve(spec.iterations);
  const DenoiserModel reference = init;
  AdamState adam = AdamState::fresh(init.parameter_count(), spec.learning_rate);

  auto emit = [&](std::uint64_t it) {
    if (!on_checkpoint) return;
    const std::size_t span = std::min<std::size_t>(result.losses.size(), spec.checkpoint_every);
    double recent = 0.0;
    for (std::size_t i = result.losses.size() - span; i < result.losses.size(); ++i) recent += result.losses[i];
    on_checkpoint(it, result.model, span > 0 ? recent / static_cast<double>(span) : 0.0);
  };
  emit(0);

  for (std::uint64_t it = 1; it <= spec.iterations; ++it) {
    const LabeledBatch batch = sample_labeled(world, static_cast<std::size_t>(spec.batch_size), rng);
    LossValue loss;
    switch (spec.objective) {
      case ObjectiveKind::Dsm:
        loss = dsm_loss(result.model, batch, schedule, spec.label_dropout, rng);
        break;
      case ObjectiveKind::Mclr:
        loss = mclr_loss(result.model, build_tuples(batch, spec.approach, spec.k, schedule, rng), schedule);
        break;
      case ObjectiveKind::DsmMclr: {
        const DsmTerms terms = draw_dsm_terms(batch, schedule, 0.0, rng);
        loss = dsm_plus_mclr_loss(result.model, terms, build_tuples(batch, spec.approach, spec.k, schedule, rng),
                                  schedule, spec.beta_dsm);
        break;
      }
      case ObjectiveKind::CcDpo:
        loss = ccdpo_loss(result.model, reference,
                          build_preference_tuples(batch, spec.approach, spec.k, schedule, rng), schedule, spec.beta);
        break;
      case ObjectiveKind::Cca:
        loss = cca_loss(result.model, reference, build_preference_tuples(batch, spec.approach, spec.k, schedule, rng),
                        schedule, spec.beta, spec.lambda);
        break;
    }
    if (!std::isfinite(loss.value)) throw TrainingDiverged(it, "non-finite loss");
    for (double g : loss.grad) {
      if (!std::isfinite(g)) throw TrainingDiverged(it, "non-finite gradient");
    }
    adam_step(adam, result.model.params(), loss.grad);
    result.losses.push_back(loss.value);
    if (it % spec.checkpoint_every == 0 || it == spec.iterations) emit(it);
  }
  return result;
}

}  // namespace guidefree
