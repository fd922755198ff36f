#include "guidefree/lab.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "guidefree/svg.hpp"
#include "json.hpp"

namespace guidefree {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Independent streams forked from the run seed.
enum Stream : std::uint64_t { kInit = 1, kTrain = 2, kTruth = 3, kEval = 4, kSigmaData = 5 };
constexpr std::size_t kSigmaDataSamples = 100000;
constexpr std::uint64_t kSharedLatentStream = 0xfeed;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string series_csv_row(const MetricRecord& r) {
  return std::to_string(r.iteration) + "," + g17(r.loss) + "," + g17(r.fd) + "," + g17(r.bayes_acc) + "," + g17(r.mean_llr) + "," +
         g17(r.recall_proxy) + "," + (r.fd_regularized ? "1" : "0") + "\n";
}

const char* const kCsvHeader = "iteration,loss,fd,bayes_acc,mean_llr,recall_proxy,fd_regularized\n";

struct NamedRecords {
  std::string name;
  std::vector<MetricRecord> records;
};

std::vector<fs::path> render_curves(const std::vector<NamedRecords>& runs, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  struct Metric {
    const char* key;
    const char* label;
    double MetricRecord::*field;
  };
  const Metric metrics[] = {{"fd", "Frechet distance", &MetricRecord::fd},
                            {"bayes_acc", "Bayes accuracy", &MetricRecord::bayes_acc},
                            {"mean_llr", "mean log-likelihood ratio", &MetricRecord::mean_llr},
                            {"recall_proxy", "recall proxy", &MetricRecord::recall_proxy}};
  std::vector<fs::path> out;
  for (const auto& m : metrics) {
    PlotSpec spec{std::string(m.label) + " vs iteration", "iteration", m.label, {}};
    for (const auto& run : runs) {
      PlotSeries s{run.name, {}, {}, true, true};
      for (const auto& r : run.records) {
        s.x.push_back(static_cast<double>(r.iteration));
        s.y.push_back(r.*(m.field));
      }
      spec.series.push_back(std::move(s));
    }
    const fs::path p = out_dir / (std::string(m.key) + ".svg");
    write_file(p, render_svg(spec));
    out.push_back(p);
  }
  PlotSpec trade{"fidelity-diversity trade-off", "Bayes accuracy", "Frechet distance", {}};
  for (const auto& run : runs) {
    PlotSeries s{run.name, {}, {}, true, true};
    for (const auto& r : run.records) {
      s.x.push_back(r.bayes_acc);
      s.y.push_back(r.fd);
    }
    trade.series.push_back(std::move(s));
  }
  const fs::path p = out_dir / "tradeoff.svg";
  write_file(p, render_svg(trade));
  out.push_back(p);
  return out;
}

NoiseSchedule resolved_schedule(const ExperimentConfig& config, const GaussianMixtureWorld& world) {
  NoiseSchedule schedule = config.schedule;
  if (config.sigma_data_auto) {
    Rng rng = Rng(config.seed).fork(kSigmaData);
    schedule.sigma_data = estimate_sigma_data(world, kSigmaDataSamples, rng);
  }
  return schedule;
}

}  // namespace

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LabError("cannot write " + path.string());
  out << text;
  if (!out) throw LabError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LabError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string checkpoint_name(std::uint64_t iteration) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "iter_%08llu.gfck", static_cast<unsigned long long>(iteration));
  return buf;
}

std::string RunManifest::to_json() const {
  const json j = {{"name", name},
                  {"version", version},
                  {"config_hash", config_hash},
                  {"init_checkpoint", init_checkpoint},
                  {"checkpoints", checkpoints},
                  {"metrics_csv", metrics_csv},
                  {"reports", reports},
                  {"plots", plots},
                  {"sigma_data", sigma_data},
                  {"wall_clock_seconds", wall_clock_seconds}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunManifest m;
    m.name = j.at("name").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.init_checkpoint = j.value("init_checkpoint", std::string());
    m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    m.metrics_csv = j.at("metrics_csv").get<std::string>();
    m.reports = j.at("reports").get<std::vector<std::string>>();
    m.plots = j.at("plots").get<std::vector<std::string>>();
    m.sigma_data = j.at("sigma_data").get<double>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw LabError(std::string("malformed manifest: ") + e.what());
  }
}

std::string metrics_csv(const std::vector<MetricRecord>& records) {
  std::string out = kCsvHeader;
  for (const auto& r : records) out += series_csv_row(r);
  return out;
}

std::vector<MetricRecord> read_metrics_csv(const fs::path& path) {
  if (!fs::exists(path)) throw LabError("missing metrics file " + path.string());
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line + "\n" != kCsvHeader) {
    throw LabError("metrics file " + path.string() + " has no valid header");
  }
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricRecord r;
    unsigned long long it = 0;
    int reg = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf,%d", &it, &r.loss, &r.fd, &r.bayes_acc, &r.mean_llr, &r.recall_proxy,
                    &reg) != 7) {
      throw LabError("metrics file " + path.string() + " has a malformed row: " + line);
    }
    r.iteration = it;
    r.fd_regularized = reg != 0;
    out.push_back(r);
  }
  if (out.empty()) throw LabError("metrics file " + path.string() + " is empty");
  return out;
}

BestCheckpoints best_checkpoints(const std::vector<MetricRecord>& records) {
  BestCheckpoints b;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].fd < records[b.fd].fd) b.fd = i;
    if (records[i].bayes_acc > records[b.bayes_acc].bayes_acc) b.bayes_acc = i;
    if (records[i].mean_llr > records[b.mean_llr].mean_llr) b.mean_llr = i;
    if (records[i].recall_proxy > records[b.recall_proxy].recall_proxy) b.recall_proxy = i;
  }
  return b;
}

EvalContext eval_context(const ExperimentConfig& config) {
  EvalContext ctx;
  ctx.world = config.world.build();
  ctx.schedule = resolved_schedule(config, ctx.world);
  if (config.eval.samples_per_class > 0) {
    Rng rng = Rng(config.seed).fork(kTruth);
    ctx.truth = draw_truth(ctx.world, config.eval.truth_per_class, rng);
  }
  return ctx;
}

MetricRecord evaluate_model(const ExperimentConfig& config, const EvalContext& ctx, const DenoiserModel& model,
                            std::uint64_t iteration) {
  // Same latents at every checkpoint, so metric changes reflect the model only.
  Rng rng = Rng(config.seed).fork(kEval);
  const GeneratedSet gen =
      generate(model, ctx.schedule, config.eval.guidance, config.eval.samples_per_class, rng, config.eval.shared_latent);
  return evaluate(ctx.world, ctx.truth, gen, iteration);
}

RunResult run_train(const ExperimentConfig& config, const fs::path& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  const EvalContext ctx = eval_context(config);
  const Rng root(config.seed);

  std::optional<DenoiserModel> init;
  if (!config.init_checkpoint.empty()) {
    if (!fs::exists(config.init_checkpoint)) {
      throw LabError("init_checkpoint: file not found: " + config.init_checkpoint);
    }
    Checkpoint ck = load_checkpoint(config.init_checkpoint);
    if (!(ck.model.config() == config.model)) {
      throw LabError("init_checkpoint: model shape differs from the config's model section");
    }
    init = std::move(ck.model);
  } else {
    Rng rng = root.fork(kInit);
    init = DenoiserModel(config.model, rng);
  }

  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "reports");
  fs::create_directories(out_dir / "plots");
  write_file(out_dir / "config.json", config_to_json(config));

  RunResult result{out_dir, {}, {}, *init};
  RunManifest& man = result.manifest;
  man.name = config.name;
  man.config_hash = config_hash(config);
  man.init_checkpoint = config.init_checkpoint;
  man.sigma_data = ctx.schedule.sigma_data;
  man.metrics_csv = "metrics.csv";

  const std::uint64_t total = config.train.iterations;
  auto on_checkpoint = [&](std::uint64_t it, const DenoiserModel& model, double recent_loss) {
    const std::string rel = "checkpoints/" + checkpoint_name(it);
    save_checkpoint({model, it, config.seed}, out_dir / rel);
    man.checkpoints.push_back(rel);
    const bool due = config.eval.metrics_every == 0 || it % config.eval.metrics_every == 0 || it == total;
    if (config.eval.samples_per_class > 0 && due) {
      result.records.push_back(evaluate_model(config, ctx, model, it));
      result.records.back().loss = recent_loss;
      write_file(out_dir / "metrics.csv", metrics_csv(result.records));
    }
  };
  Rng train_rng = root.fork(kTrain);
  TrainResult tr = train(config.train, ctx.world, ctx.schedule, *init, train_rng, on_checkpoint);
  result.final_model = std::move(tr.model);

  write_file(out_dir / "metrics.csv", metrics_csv(result.records));
  std::string losses = "iteration,loss\n";
  for (std::size_t i = 0; i < tr.losses.size(); ++i) losses += std::to_string(i + 1) + "," + g17(tr.losses[i]) + "\n";
  write_file(out_dir / "reports" / "losses.csv", losses);
  man.reports.push_back("reports/losses.csv");

  if (!result.records.empty()) {
    const BestCheckpoints b = best_checkpoints(result.records);
    auto entry = [&](std::size_t i, double v) { return json{{"iteration", result.records[i].iteration}, {"value", v}}; };
    const json best = {{"fd", entry(b.fd, result.records[b.fd].fd)},
                       {"bayes_acc", entry(b.bayes_acc, result.records[b.bayes_acc].bayes_acc)},
                       {"mean_llr", entry(b.mean_llr, result.records[b.mean_llr].mean_llr)},
                       {"recall_proxy", entry(b.recall_proxy, result.records[b.recall_proxy].recall_proxy)}};
    write_file(out_dir / "reports" / "best.json", best.dump(2) + "\n");
    man.reports.push_back("reports/best.json");
    for (const auto& p : render_curves({{config.name, result.records}}, out_dir / "plots")) {
      man.plots.push_back("plots/" + p.filename().string());
    }
  }
  man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_file(out_dir / "manifest.json", man.to_json());
  return result;
}

std::vector<MetricRecord> run_metrics(const fs::path& run_dir) {
  const ExperimentConfig config = load_config(run_dir / "config.json");
  RunManifest man = RunManifest::from_json(read_file(run_dir / "manifest.json"));
  if (config.eval.samples_per_class == 0) throw LabError("config disables metrics (eval.samples_per_class = 0)");
  const EvalContext ctx = eval_context(config);
  // Training losses are not stored in checkpoints; keep the logged ones.
  std::vector<MetricRecord> logged;
  if (fs::exists(run_dir / "metrics.csv")) {
    try {
      logged = read_metrics_csv(run_dir / "metrics.csv");
    } catch (const LabError&) {
    }
  }
  std::vector<MetricRecord> records;
  for (const auto& rel : man.checkpoints) {
    const Checkpoint ck = load_checkpoint(run_dir / rel);
    const bool due = config.eval.metrics_every == 0 || ck.iteration % config.eval.metrics_every == 0 ||
                     ck.iteration == config.train.iterations;
    if (!due) continue;
    records.push_back(evaluate_model(config, ctx, ck.model, ck.iteration));
    for (const auto& r : logged) {
      if (r.iteration == ck.iteration) records.back().loss = r.loss;
    }
  }
  write_file(run_dir / "metrics.csv", metrics_csv(records));
  return records;
}

SampleOutput run_sample(const SampleRequest& req) {
  if (!fs::exists(req.checkpoint)) throw LabError("checkpoint not found: " + req.checkpoint.string());
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const int m = ck.model.config().num_classes;
  SampleOutput out;
  if (req.class_id) {
    if (*req.class_id < 0 || *req.class_id >= m) {
      throw LabError("class " + std::to_string(*req.class_id) + " out of range [0, " + std::to_string(m) + ")");
    }
    out.classes = {*req.class_id};
  } else {
    for (int c = 0; c < m; ++c) out.classes.push_back(c);
  }
  if (req.n == 0) throw LabError("n must be positive");
  const GuidanceSpec guidance =
      req.gamma == 0.0 ? GuidanceSpec{GuidanceMode::None, 0.0} : GuidanceSpec{GuidanceMode::Cfg, req.gamma};
  guidance.validate();
  const std::size_t dim = static_cast<std::size_t>(ck.model.config().data_dim);
  const Rng root(req.seed);
  const ScoreSource score = model_score_source(ck.model);
  fs::create_directories(req.out_dir);
  PlotSpec scatter{"samples (gamma " + g17(req.gamma) + ")", "x0", "x1", {}, true};
  for (int c : out.classes) {
    Rng rng = root.fork(req.shared_noise ? kSharedLatentStream : static_cast<std::uint64_t>(c));
    const Tensor latent = initial_latent(req.schedule, req.n, dim, rng);
    const Tensor x = sample_ode_from(score, req.schedule, guidance, c, latent);
    std::string csv = "index,class";
    for (std::size_t d = 0; d < dim; ++d) csv += ",latent_" + std::to_string(d);
    for (std::size_t d = 0; d < dim; ++d) csv += ",x_" + std::to_string(d);
    csv += "\n";
    for (std::size_t i = 0; i < req.n; ++i) {
      csv += std::to_string(i) + "," + std::to_string(c);
      for (std::size_t d = 0; d < dim; ++d) csv += "," + g17(latent(i, d));
      for (std::size_t d = 0; d < dim; ++d) csv += "," + g17(x(i, d));
      csv += "\n";
    }
    const fs::path p = req.out_dir / ("samples_c" + std::to_string(c) + ".csv");
    write_file(p, csv);
    out.files.push_back(p);
    PlotSeries s{"class " + std::to_string(c), {}, {}, false, true};
    for (std::size_t i = 0; i < req.n; ++i) {
      s.x.push_back(x(i, 0));
      s.y.push_back(dim > 1 ? x(i, 1) : 0.0);
    }
    scatter.series.push_back(std::move(s));
    out.latent = latent;
    out.latents.push_back(latent);
    out.samples.push_back(x);
  }
  const fs::path svg = req.out_dir / "samples.svg";
  write_file(svg, render_svg(scatter));
  out.files.push_back(svg);
  return out;
}

std::vector<RunResult> run_sweep(const std::vector<ExperimentConfig>& configs, const fs::path& out_root,
                                 unsigned threads) {
  std::set<std::string> names;
  for (const auto& c : configs) {
    if (!names.insert(c.name).second) throw LabError("sweep: duplicate run name '" + c.name + "'");
  }
  if (threads == 0) {
    if (const char* env = std::getenv("GUIDEFREE_THREADS")) threads = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  }
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(configs.size(), 1)));

  std::vector<std::optional<RunResult>> results(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        results[i] = run_train(configs[i], out_root / configs[i].name);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<RunResult> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

std::vector<fs::path> run_plot(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw LabError("plot needs at least one run directory");
  std::vector<NamedRecords> runs;
  for (const auto& dir : run_dirs) {
    std::string name = dir.filename().string();
    if (fs::exists(dir / "manifest.json")) name = RunManifest::from_json(read_file(dir / "manifest.json")).name;
    runs.push_back({name, read_metrics_csv(dir / "metrics.csv")});
  }
  return render_curves(runs, out_dir);
}

}  // namespace guidefree
