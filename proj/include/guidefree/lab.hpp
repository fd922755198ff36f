#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "guidefree/checkpoint.hpp"
#include "guidefree/config.hpp"
#include "guidefree/metrics.hpp"

namespace guidefree {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
  std::string name;
  std::string version = kVersion;
  std::string config_hash;
  std::string init_checkpoint;
  std::vector<std::string> checkpoints;  // relative to the run directory
  std::string metrics_csv;
  std::vector<std::string> reports;
  std::vector<std::string> plots;
  double sigma_data = 0.0;
  double wall_clock_seconds = 0.0;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

struct RunResult {
  std::filesystem::path dir;
  RunManifest manifest;
  std::vector<MetricRecord> records;
  DenoiserModel final_model;
};

class LabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains per the config into out_dir (config.json, manifest.json,
/// checkpoints/, metrics.csv, reports/, plots/). Random streams are forked
/// from config.seed, so (config, seed) fixes every artifact except the
/// wall-clock field. Throws ConfigError, LabError, TrainingDiverged.
RunResult run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// The world, schedule and truth samples a run evaluates against.
struct EvalContext {
  GaussianMixtureWorld world;
  NoiseSchedule schedule;
  TruthSamples truth;
};

/// Rebuilds the evaluation context of a config (sigma_data resolved the
/// same way run_train resolves it).
EvalContext eval_context(const ExperimentConfig& config);

/// Metrics of one model under the config's evaluation spec. Every
/// checkpoint of a run is sampled from the same latents.
MetricRecord evaluate_model(const ExperimentConfig& config, const EvalContext& ctx, const DenoiserModel& model,
                            std::uint64_t iteration);

/// Recomputes metrics.csv of an existing run from its checkpoints.
std::vector<MetricRecord> run_metrics(const std::filesystem::path& run_dir);

std::string metrics_csv(const std::vector<MetricRecord>& records);
/// Throws LabError naming the file when it is missing, malformed or empty.
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

struct SampleRequest {
  std::filesystem::path checkpoint;
  std::optional<int> class_id;  // all classes when unset
  std::size_t n = 1024;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  bool shared_noise = false;
  NoiseSchedule schedule;
  std::filesystem::path out_dir;
};

/// Guidance strengths visited by `sample --gamma-sweep`.
inline const std::vector<double> kDefaultGammaGrid{0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9, 1.0, 1.5, 2.0, 3.0};

struct SampleOutput {
  std::vector<int> classes;
  Tensor latent;                  // shared latent, or the last class's latent
  std::vector<Tensor> latents;    // one per class
  std::vector<Tensor> samples;    // one per class
  std::vector<std::filesystem::path> files;
};

/// Writes samples_c<k>.csv (index, class, latent, sample columns) per class and a
/// scatter SVG. gamma = 0 runs the unguided sampler.
SampleOutput run_sample(const SampleRequest& request);

/// Runs each config into out_root/<name> on up to `threads` workers
/// (GUIDEFREE_THREADS when threads is 0, else hardware concurrency).
std::vector<RunResult> run_sweep(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out_root,
                                 unsigned threads = 0);

/// Learning curves for fd, bayes_acc, mean_llr, recall_proxy and the
/// fd-vs-bayes_acc trade-off, one series per run (named from its manifest).
std::vector<std::filesystem::path> run_plot(const std::vector<std::filesystem::path>& run_dirs,
                                            const std::filesystem::path& out_dir);

/// Index of the best record per metric (lowest fd, highest others), first
/// occurrence on ties.
struct BestCheckpoints {
  std::size_t fd = 0;
  std::size_t bayes_acc = 0;
  std::size_t mean_llr = 0;
  std::size_t recall_proxy = 0;
};
BestCheckpoints best_checkpoints(const std::vector<MetricRecord>& records);

void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

std::string checkpoint_name(std::uint64_t iteration);

}  // namespace guidefree
