#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "guidefree/lab.hpp"
#include "guidefree/verify.hpp"

namespace fs = std::filesystem;
using namespace guidefree;

namespace {

ExperimentConfig config_with_overrides(const std::string& path, const std::optional<std::uint64_t>& seed,
                                       const std::string& out) {
  ExperimentConfig cfg = load_config(path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out = out;
  if (cfg.out.empty()) cfg.out = "runs/" + cfg.name;
  return cfg;
}

void print_records(const std::vector<MetricRecord>& records) {
  std::cout << metrics_csv(records);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guidance-free class-conditional diffusion lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "experiment config")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out, "run directory (overrides the config)");

  std::string checkpoint;
  std::optional<int> class_id;
  std::size_t n = 1024;
  double gamma = 0.0;
  bool shared_noise = false;
  bool gamma_sweep = false;
  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sample->add_option("--class", class_id, "class index (default: every class)");
  sample->add_option("--n", n, "samples per class");
  sample->add_option("--gamma", gamma, "guidance strength (0: unguided)");
  sample->add_option("--seed", seed, "latent seed");
  sample->add_flag("--shared-noise", shared_noise, "reuse one latent for every class");
  sample->add_flag("--gamma-sweep", gamma_sweep, "sample every gamma of the default grid into <out>/gamma_<g>")
      ->excludes("--gamma");
  sample->add_option("--config", config_path, "take the noise schedule from this config");
  sample->add_option("--out", out, "output directory")->required();

  std::string suite = "all";
  std::optional<double> tolerance;
  int problems = 100;
  auto* verify = app.add_subcommand("verify", "check the closed-form results; exit 1 on failure");
  verify->add_option("--suite", suite, "theorem1|theorem2|theorem3|equivalence|corollaries|all");
  verify->add_option("--seed", seed, "master seed");
  verify->add_option("--tolerance", tolerance, "override every gap tolerance");
  verify->add_option("--problems", problems, "random problems per suite");
  verify->add_option("--out", out, "write the JSON report here instead of stdout");

  std::string run_dir;
  auto* metrics = app.add_subcommand("metrics", "recompute metrics.csv of a run from its checkpoints");
  metrics->add_option("run_dir", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  std::vector<std::string> configs;
  auto* sweep = app.add_subcommand("sweep", "train several configs in parallel (GUIDEFREE_THREADS caps workers)");
  sweep->add_option("--config", configs, "experiment configs")->required()->check(CLI::ExistingFile);
  sweep->add_option("--seed", seed, "override every config seed");
  sweep->add_option("--out", out, "root directory; runs go to <out>/<name>")->required();

  std::vector<std::string> run_dirs;
  auto* plot = app.add_subcommand("plot", "render learning curves and the trade-off scatter");
  plot->add_option("run_dirs", run_dirs, "run directories")->required();
  plot->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const ExperimentConfig cfg = config_with_overrides(config_path, seed, out);
      const RunResult r = run_train(cfg, cfg.out);
      std::cout << "run written to " << r.dir.string() << "\n";
      print_records(r.records);
    } else if (*sample) {
      SampleRequest req;
      req.checkpoint = checkpoint;
      req.class_id = class_id;
      req.n = n;
      req.gamma = gamma;
      req.seed = seed.value_or(0);
      req.shared_noise = shared_noise;
      req.out_dir = out;
      if (!config_path.empty()) req.schedule = eval_context(load_config(config_path)).schedule;
      const std::vector<double> gammas = gamma_sweep ? kDefaultGammaGrid : std::vector<double>{gamma};
      for (double g : gammas) {
        req.gamma = g;
        if (gamma_sweep) {
          std::ostringstream name;
          name << "gamma_" << g;
          req.out_dir = fs::path(out) / name.str();
        }
        const SampleOutput s = run_sample(req);
        for (const auto& f : s.files) std::cout << f.string() << "\n";
      }
    } else if (*verify) {
      VerifyOptions opt;
      if (seed) opt.seed = *seed;
      opt.tolerance = tolerance;
      opt.problems = problems;
      const SuiteReport rep = run_verify(suite, opt);
      if (out.empty()) {
        std::cout << rep.json;
      } else {
        write_file(out, rep.json);
      }
      for (const auto& c : rep.checks) {
        std::cerr << (c.passed ? "PASS " : "FAIL ") << c.name << " max_gap=" << c.max_gap << " tolerance=" << c.tolerance
                  << " cases=" << c.cases << "\n";
      }
      return rep.passed ? 0 : 1;
    } else if (*metrics) {
      print_records(run_metrics(run_dir));
    } else if (*sweep) {
      std::vector<ExperimentConfig> cfgs;
      for (const auto& c : configs) cfgs.push_back(config_with_overrides(c, seed, ""));
      for (const auto& r : run_sweep(cfgs, out)) std::cout << "run written to " << r.dir.string() << "\n";
    } else if (*plot) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      for (const auto& p : run_plot(dirs, out)) std::cout << p.string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
