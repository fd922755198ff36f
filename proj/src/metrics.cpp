#include "guidefree/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace guidefree {

namespace {

constexpr double kRidge = 1e-8;

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Moments fit(const Tensor& x) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(x.cols());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data(), n, d);
  Moments out;
  out.mean = m.colwise().mean().transpose();
  const Eigen::MatrixXd centered = m.rowwise() - out.mean.transpose();
  out.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  return out;
}

// Adds the ridge when the covariance is not safely positive definite.
bool regularize(Eigen::MatrixXd& cov) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() > 1e-12 * scale) return false;
  cov += kRidge * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  return true;
}

// tr sqrt(A^1/2 B A^1/2); the eigenvalues of that product are those of AB.
double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 2) {
    const Eigen::Matrix2d ab = a * b;
    const double det = std::max(ab.determinant(), 0.0);
    return std::sqrt(std::max(ab.trace() + 2.0 * std::sqrt(det), 0.0));
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  const Eigen::MatrixXd ra = ea.operatorSqrt();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(ra * b * ra, Eigen::EigenvaluesOnly);
  return em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

Eigen::Vector2d point(const Tensor& x, std::size_t r) { return {x(r, 0), x(r, 1)}; }

}  // namespace

FrechetResult frechet_gaussian(const Tensor& a, const Tensor& b) {
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("frechet_gaussian needs at least 2 samples each");
  if (a.cols() != b.cols() || a.cols() == 0) throw ShapeError("frechet_gaussian: sample widths differ");
  Moments ma = fit(a);
  Moments mb = fit(b);
  FrechetResult out;
  out.regularized = regularize(ma.cov);
  out.regularized = regularize(mb.cov) || out.regularized;
  const double mean_term = (ma.mean - mb.mean).squaredNorm();
  const double cov_term = ma.cov.trace() + mb.cov.trace() - 2.0 * trace_sqrt_product(ma.cov, mb.cov);
  out.value = std::max(mean_term + cov_term, 0.0);
  return out;
}

double bayes_accuracy(const GaussianMixtureWorld& world, const LabeledBatch& batch) {
  if (batch.size() == 0) return 0.0;
  if (batch.x.cols() != 2) throw ShapeError("bayes_accuracy expects 2D points");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::Vector2d x = point(batch.x, i);
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < world.num_classes(); ++c) {
      const double s = std::log(world.priors[c]) + log_cond_density(world, x, 0.0, c);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (best == batch.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch.size());
}

double mean_llr(const GaussianMixtureWorld& world, const LabeledBatch& batch) {
  if (batch.size() == 0) return 0.0;
  if (batch.x.cols() != 2) throw ShapeError("mean_llr expects 2D points");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::Vector2d x = point(batch.x, i);
    const double lm = log_marginal_density(world, x, 0.0);
    if (!std::isfinite(lm)) return -std::numeric_limits<double>::infinity();
    total += log_cond_density(world, x, 0.0, batch.labels[i]) - lm;
  }
  return total / static_cast<double>(batch.size());
}

double recall_proxy(const Tensor& truth, const Tensor& generated, int cells) {
  if (cells < 1) throw std::invalid_argument("recall_proxy needs at least one cell per axis");
  if (truth.rows() == 0) return 0.0;
  if (truth.cols() != 2 || (generated.rows() > 0 && generated.cols() != 2)) {
    throw ShapeError("recall_proxy expects 2D points");
  }
  double lo[2];
  double hi[2];
  for (int d = 0; d < 2; ++d) {
    lo[d] = std::numeric_limits<double>::infinity();
    hi[d] = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < truth.rows(); ++r) {
      lo[d] = std::min(lo[d], truth(r, d));
      hi[d] = std::max(hi[d], truth(r, d));
    }
    const double pad = 0.05 * std::max(hi[d] - lo[d], 1e-12);
    lo[d] -= pad;
    hi[d] += pad;
  }
  auto cell_of = [&](const Tensor& x, std::size_t r) -> long {
    long idx[2];
    for (int d = 0; d < 2; ++d) {
      const double u = (x(r, d) - lo[d]) / (hi[d] - lo[d]);
      if (!(u >= 0.0 && u <= 1.0)) return -1;
      idx[d] = std::min(static_cast<long>(u * cells), static_cast<long>(cells - 1));
    }
    return idx[0] * cells + idx[1];
  };
  std::set<long> truth_cells;
  for (std::size_t r = 0; r < truth.rows(); ++r) truth_cells.insert(cell_of(truth, r));
  std::set<long> gen_cells;
  for (std::size_t r = 0; r < generated.rows(); ++r) {
    const long c = cell_of(generated, r);
    if (c >= 0) gen_cells.insert(c);
  }
  std::size_t covered = 0;
  for (long c : truth_cells) covered += gen_cells.count(c);
  return static_cast<double>(covered) / static_cast<double>(truth_cells.size());
}

TruthSamples draw_truth(const GaussianMixtureWorld& world, std::size_t n_per_class, Rng& rng) {
  TruthSamples t;
  for (int c = 0; c < world.num_classes(); ++c) t.per_class.push_back(sample_class(world, c, n_per_class, rng));
  return t;
}

LabeledBatch GeneratedSet::labeled() const {
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const auto& t : per_class) {
    rows += t.rows();
    cols = std::max(cols, t.cols());
  }
  LabeledBatch b{Tensor::matrix(rows, cols), {}};
  b.labels.reserve(rows);
  std::size_t r = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (std::size_t i = 0; i < per_class[c].rows(); ++i, ++r) {
      for (std::size_t d = 0; d < cols; ++d) b.x(r, d) = per_class[c](i, d);
      b.labels.push_back(static_cast<int>(c));
    }
  }
  return b;
}

GeneratedSet generate(const DenoiserModel& model, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                      std::size_t n_per_class, Rng& rng, bool shared_latent) {
  const ScoreSource score = model_score_source(model);
  const std::size_t dim = static_cast<std::size_t>(model.config().data_dim);
  GeneratedSet out;
  Tensor latent;
  if (shared_latent) latent = initial_latent(schedule, n_per_class, dim, rng);
  for (int c = 0; c < model.config().num_classes; ++c) {
    if (!shared_latent) latent = initial_latent(schedule, n_per_class, dim, rng);
    out.per_class.push_back(sample_ode_from(score, schedule, guidance, c, latent));
  }
  return out;
}

MetricRecord evaluate(const GaussianMixtureWorld& world, const TruthSamples& truth, const GeneratedSet& generated,
                      std::uint64_t iteration) {
  if (truth.per_class.size() != generated.per_class.size()) {
    throw std::invalid_argument("evaluate: truth and generated class counts differ");
  }
  MetricRecord rec;
  rec.iteration = iteration;
  const double m = static_cast<double>(truth.per_class.size());
  for (std::size_t c = 0; c < truth.per_class.size(); ++c) {
    const FrechetResult fd = frechet_gaussian(truth.per_class[c], generated.per_class[c]);
    rec.fd += fd.value / m;
    rec.fd_regularized = rec.fd_regularized || fd.regularized;
    rec.recall_proxy += recall_proxy(truth.per_class[c], generated.per_class[c]) / m;
  }
  const LabeledBatch batch = generated.labeled();
  rec.bayes_acc = bayes_accuracy(world, batch);
  rec.mean_llr = mean_llr(world, batch);
  return rec;
}

double mean_pair_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_pair_distance");
  if (a.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) s += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    total += std::sqrt(s);
  }
  return total / static_cast<double>(a.rows());
}

}  // namespace guidefree
