#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "guidefree/denoiser.hpp"
#include "guidefree/diffusion.hpp"
#include "guidefree/rng.hpp"
#include "guidefree/worlds.hpp"

namespace guidefree {

/// (x, c, c_tilde, sigma, eps); c_tilde != c when built by build_tuples.
struct ContrastiveTuple {
  std::vector<double> x;
  int c = 0;
  int c_tilde = 0;
  double sigma = 1.0;
  std::vector<double> eps;
};

/// x_w has class c, x_l has some other class; both are noised with the
/// same (sigma, eps).
struct PreferenceTuple {
  std::vector<double> x_w;
  std::vector<double> x_l;
  int c = 0;
  double sigma = 1.0;
  std::vector<double> eps;
};

/// Rows of a denoising batch after noise draws and label dropout.
struct DsmTerms {
  Tensor x;
  Tensor eps;
  std::vector<double> sigma;
  std::vector<int> class_id;  // kNullClass where the label was dropped
};

enum class ObjectiveKind { Dsm, Mclr, DsmMclr, CcDpo, Cca };

/// 1: one mismatch per sample. 2: K mismatches per sample sharing its noise.
enum class TupleApproach { PerSample = 1, MultiMismatch = 2 };

struct TrainSpec {
  ObjectiveKind objective = ObjectiveKind::Dsm;
  double beta_dsm = 1.0;
  double beta = 1.0;
  double lambda = 1.0;
  TupleApproach approach = TupleApproach::PerSample;
  int k = 1;
  double learning_rate = 1e-3;
  int batch_size = 256;
  std::uint64_t iterations = 1000;
  double label_dropout = 0.1;
  std::uint64_t checkpoint_every = 100;

  /// Throws std::invalid_argument on an inconsistent spec.
  void validate() const;
  bool needs_reference() const { return objective == ObjectiveKind::CcDpo || objective == ObjectiveKind::Cca; }
  bool operator==(const TrainSpec&) const = default;
};

std::string objective_name(ObjectiveKind kind);
ObjectiveKind objective_from_name(const std::string& name);

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // d value / d params
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::uint64_t iteration, const std::string& what)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  std::uint64_t iteration() const { return iteration_; }

 private:
  std::uint64_t iteration_;
};

/// Mismatched partners are drawn uniformly over batch positions whose label
/// differs from the sample's, with replacement. Throws std::invalid_argument
/// on a batch with a single label.
std::vector<ContrastiveTuple> build_tuples(const LabeledBatch& batch, TupleApproach approach, int k,
                                           const NoiseSchedule& schedule, Rng& rng);
std::vector<PreferenceTuple> build_preference_tuples(const LabeledBatch& batch, TupleApproach approach, int k,
                                                     const NoiseSchedule& schedule, Rng& rng);

/// One (sigma, eps) per row; each label independently replaced by
/// kNullClass with probability dropout_p.
DsmTerms draw_dsm_terms(const LabeledBatch& batch, const NoiseSchedule& schedule, double dropout_p, Rng& rng);

/// mean_i w(sigma_i) ||x_i - D(x_i + sigma_i eps_i; sigma_i, c_i)||^2
LossValue dsm_loss(const DenoiserModel& model, const DsmTerms& terms, const NoiseSchedule& schedule);
LossValue dsm_loss(const DenoiserModel& model, const LabeledBatch& batch, const NoiseSchedule& schedule,
                   double dropout_p, Rng& rng);

/// mean w(sigma) (||x - D_c||^2 - ||x - D_c_tilde||^2) at the shared noised
/// input. Unbounded below; 0 for an empty tuple list.
LossValue mclr_loss(const DenoiserModel& model, const std::vector<ContrastiveTuple>& tuples,
                    const NoiseSchedule& schedule);

/// mean softplus(-beta w (-delta_w + delta_l)) with
/// delta = ||x - D_model||^2 - ||x - D_ref||^2, both at class c.
/// The reference model never receives gradient.
LossValue ccdpo_loss(const DenoiserModel& model, const DenoiserModel& ref_model,
                     const std::vector<PreferenceTuple>& tuples, const NoiseSchedule& schedule, double beta);

/// mean -[log sigmoid(-beta w delta_w) + lambda log sigmoid(beta w delta_l)].
LossValue cca_loss(const DenoiserModel& model, const DenoiserModel& ref_model,
                   const std::vector<PreferenceTuple>& tuples, const NoiseSchedule& schedule, double beta,
                   double lambda);

/// beta_dsm * dsm_loss + mclr_loss.
LossValue dsm_plus_mclr_loss(const DenoiserModel& model, const DsmTerms& terms,
                             const std::vector<ContrastiveTuple>& tuples, const NoiseSchedule& schedule,
                             double beta_dsm);

/// Called at iteration 0, every checkpoint_every iterations and after the
/// last iteration (once per distinct iteration).
using CheckpointCallback =
    std::function<void(std::uint64_t iteration, const DenoiserModel& model, double recent_loss)>;

struct TrainResult {
  DenoiserModel model;
  std::vector<double> losses;  // one per iteration
};

/// Pooled per-coordinate standard deviation of n world samples.
double estimate_sigma_data(const GaussianMixtureWorld& world, std::size_t n, Rng& rng);

/// Minibatch loop: draw batch, draw noise, build tuples, loss, Adam step.
/// CC-DPO and CCA freeze a copy of the initial model as the reference.
/// Throws TrainingDiverged on a non-finite loss or gradient.
TrainResult train(const TrainSpec& spec, const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                  const DenoiserModel& init, Rng& rng, const CheckpointCallback& on_checkpoint = nullptr);

}  // namespace guidefree
