#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "guidefree/denoiser.hpp"
#include "guidefree/diffusion.hpp"
#include "guidefree/objectives.hpp"
#include "guidefree/worlds.hpp"

namespace guidefree {

inline constexpr int kConfigVersion = 1;

/// Parse or validation failure; what() starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// "default" builds default_world(separation); "mixture" uses `mixture`.
struct WorldSpec {
  std::string kind = "default";
  double separation = 0.6;
  std::optional<GaussianMixtureWorld> mixture;

  GaussianMixtureWorld build() const;
  bool operator==(const WorldSpec&) const = default;
};

struct EvalSpec {
  GuidanceSpec guidance;
  std::size_t samples_per_class = 4096;
  std::size_t truth_per_class = 4096;
  std::uint64_t metrics_every = 0;  // 0: at every checkpoint
  bool shared_latent = false;

  bool operator==(const EvalSpec&) const = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string out;  // run directory; the CLI --out flag wins
  WorldSpec world;
  DenoiserConfig model;
  NoiseSchedule schedule;
  bool sigma_data_auto = true;  // estimate sigma_data from world samples
  TrainSpec train;
  std::string init_checkpoint;   // empty: fresh initialization
  EvalSpec eval;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Missing optional fields take the defaults above; "version" and "seed"
/// are required. Throws ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON: keys sorted, every field present.
std::string config_to_json(const ExperimentConfig& config);

/// FNV-1a 64 of the canonical JSON with `out` cleared, as 16 hex digits.
/// Key order in the source text does not matter.
std::string config_hash(const ExperimentConfig& config);

std::string fnv1a_hex(const std::string& bytes);

std::string weighting_name(Weighting w);
std::string guidance_mode_name(GuidanceMode m);

}  // namespace guidefree
