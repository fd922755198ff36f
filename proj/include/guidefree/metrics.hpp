#pragma once

#include <cstdint>
#include <vector>

#include "guidefree/denoiser.hpp"
#include "guidefree/diffusion.hpp"
#include "guidefree/rng.hpp"
#include "guidefree/tensor.hpp"
#include "guidefree/worlds.hpp"

namespace guidefree {

struct FrechetResult {
  double value = 0.0;
  bool regularized = false;  // a covariance needed +1e-8 I
};

/// Frechet distance between Gaussians fitted to two point clouds (rows are
/// points). Needs at least 2 rows each and equal widths.
FrechetResult frechet_gaussian(const Tensor& a, const Tensor& b);

/// Fraction of rows whose label equals argmax_c p(c) p(x|c); ties go to the
/// lowest class index. Returns 0 for an empty batch.
double bayes_accuracy(const GaussianMixtureWorld& world, const LabeledBatch& batch);

/// Mean of log p(x|c) - log p(x) over the batch; -inf if some x has zero
/// marginal density.
double mean_llr(const GaussianMixtureWorld& world, const LabeledBatch& batch);

/// Fraction of truth-occupied cells also occupied by generated points, on a
/// cells x cells grid over the truth bounding box grown by 10% (5% per side).
double recall_proxy(const Tensor& truth, const Tensor& generated, int cells = 32);

struct MetricRecord {
  std::uint64_t iteration = 0;
  double loss = 0.0;          // mean training loss since the previous checkpoint
  double fd = 0.0;            // per-class Frechet distance, averaged over classes
  double bayes_acc = 0.0;
  double mean_llr = 0.0;
  double recall_proxy = 0.0;  // per class, averaged over classes
  bool fd_regularized = false;
};

/// Per-class reference draws from the world, reused across checkpoints.
struct TruthSamples {
  std::vector<Tensor> per_class;
};

TruthSamples draw_truth(const GaussianMixtureWorld& world, std::size_t n_per_class, Rng& rng);

/// Generated points grouped by intended class.
struct GeneratedSet {
  std::vector<Tensor> per_class;
  LabeledBatch labeled() const;
};

/// Same latent for every class when shared_latent is set, else fresh draws.
GeneratedSet generate(const DenoiserModel& model, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                      std::size_t n_per_class, Rng& rng, bool shared_latent = false);

MetricRecord evaluate(const GaussianMixtureWorld& world, const TruthSamples& truth, const GeneratedSet& generated,
                      std::uint64_t iteration);

/// Mean Euclidean distance between row i of class a and row i of class b.
double mean_pair_distance(const Tensor& a, const Tensor& b);

}  // namespace guidefree
