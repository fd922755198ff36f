#include "doctest.h"

#include <filesystem>

#include "guidefree/lab.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace guidefree;

namespace {

ExperimentConfig tiny_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.seed = 5;
  c.model.hidden_layers = 1;
  c.model.width = 8;
  c.model.embed_dim = 2;
  c.schedule.steps = 6;
  c.train.iterations = 20;
  c.train.checkpoint_every = 10;
  c.train.batch_size = 16;
  c.eval.samples_per_class = 64;
  c.eval.truth_per_class = 64;
  return c;
}

}  // namespace

TEST_SUITE("lab") {
  TEST_CASE("config round trip and hash") {
    ExperimentConfig c = tiny_config("rt");
    c.schedule.train_sigma_min = 1.0;
    c.schedule.train_sigma_max = 4.0;
    c.train.objective = ObjectiveKind::Cca;
    c.train.lambda = 0.5;
    c.eval.guidance = GuidanceSpec{GuidanceMode::Cfg, 1.5};
    const std::string text = config_to_json(c);
    CHECK(parse_config(text) == c);
    CHECK(config_to_json(parse_config(text)) == text);

    const auto reordered = parse_config(R"({"seed": 5, "version": 1, "name": "x", "model": {"width": 8, "hidden_layers": 1}})");
    const auto ordered = parse_config(R"({"model": {"hidden_layers": 1, "width": 8}, "name": "x", "version": 1, "seed": 5})");
    CHECK(config_hash(reordered) == config_hash(ordered));
    CHECK(config_hash(reordered).size() == 16);
    ExperimentConfig moved = reordered;
    moved.out = "/elsewhere";
    CHECK(config_hash(moved) == config_hash(reordered));
    moved.seed = 6;
    CHECK(config_hash(moved) != config_hash(reordered));
    // FNV-1a 64 of the empty string is the offset basis
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
  }

  TEST_CASE("config errors name the field") {
    auto path_of = [](const std::string& text) {
      try {
        parse_config(text);
      } catch (const ConfigError& e) {
        return e.path();
      }
      return std::string("<none>");
    };
    CHECK(path_of(R"({"version": 1})") == "seed");
    CHECK(path_of(R"({"seed": 1})") == "version");
    CHECK(path_of(R"({"version": 1, "seed": 1, "train": {"learning_rat": 1}})").rfind("train", 0) == 0);
    CHECK(path_of(R"({"version": 1, "seed": 1, "schedule": {"steps": 1}})").rfind("schedule", 0) == 0);
    CHECK(path_of(R"({"version": 1, "seed": 1, "train": {"objective": "sft"}})").rfind("train", 0) == 0);
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  }

  TEST_CASE("metrics csv round trip and errors") {
    const fs::path dir = testutil::scratch_dir("csv");
    std::vector<MetricRecord> recs(2);
    recs[0].iteration = 0;
    recs[0].fd = 0.1234567890123;
    recs[1].iteration = 10;
    recs[1].bayes_acc = 0.75;
    recs[1].fd_regularized = true;
    write_file(dir / "metrics.csv", metrics_csv(recs));
    const auto back = read_metrics_csv(dir / "metrics.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].fd == recs[0].fd);
    CHECK(back[1].bayes_acc == 0.75);
    CHECK(back[1].fd_regularized);
    write_file(dir / "empty.csv", "");
    CHECK_THROWS_AS(read_metrics_csv(dir / "empty.csv"), LabError);
    write_file(dir / "header.csv", "iteration,loss,fd,bayes_acc,mean_llr,recall_proxy,fd_regularized\n");
    CHECK_THROWS_AS(read_metrics_csv(dir / "header.csv"), LabError);
    CHECK_THROWS_AS(read_metrics_csv(dir / "missing.csv"), LabError);
  }

  TEST_CASE("best checkpoints pick the first best") {
    std::vector<MetricRecord> r(3);
    r[0].fd = 1.0;
    r[1].fd = 0.5;
    r[2].fd = 0.5;
    r[0].bayes_acc = 0.9;
    r[2].mean_llr = 2.0;
    const BestCheckpoints b = best_checkpoints(r);
    CHECK(b.fd == 1);
    CHECK(b.bayes_acc == 0);
    CHECK(b.mean_llr == 2);
    CHECK(b.recall_proxy == 0);
    CHECK(checkpoint_name(300) == "iter_00000300.gfck");
  }

  TEST_CASE("training run artifacts are reproducible") {
    const fs::path root = testutil::scratch_dir("train");
    const ExperimentConfig c = tiny_config("tiny");
    const RunResult a = run_train(c, root / "a");
    const RunResult b = run_train(c, root / "b");
    CHECK(a.manifest.checkpoints.size() == 3);
    CHECK(a.records.size() == 3);
    for (const auto& ck : a.manifest.checkpoints) CHECK(read_file(root / "a" / ck) == read_file(root / "b" / ck));
    CHECK(read_file(root / "a" / "metrics.csv") == read_file(root / "b" / "metrics.csv"));
    CHECK(a.final_model == b.final_model);
    CHECK(a.manifest.config_hash == config_hash(c));

    const RunManifest m = RunManifest::from_json(read_file(root / "a" / "manifest.json"));
    CHECK(m.name == "tiny");
    CHECK(m.checkpoints == a.manifest.checkpoints);
    CHECK(parse_config(read_file(root / "a" / "config.json")) == c);

    // recomputed metrics match the ones written during training
    const std::string before = read_file(root / "a" / "metrics.csv");
    run_metrics(root / "a");
    CHECK(read_file(root / "a" / "metrics.csv") == before);

    const auto plots = run_plot({root / "a", root / "b"}, root / "plots");
    CHECK(plots.size() == 5);
    for (const auto& p : plots) CHECK(read_file(p).rfind("<svg", 0) == 0);
    CHECK_THROWS_AS(run_plot({}, root / "plots"), LabError);
  }

  TEST_CASE("fine-tuning starts from the given checkpoint") {
    const fs::path root = testutil::scratch_dir("finetune");
    const RunResult base = run_train(tiny_config("base"), root / "base");
    ExperimentConfig ft = tiny_config("ft");
    ft.train.objective = ObjectiveKind::Mclr;
    ft.train.iterations = 0;
    ft.init_checkpoint = (root / "base" / base.manifest.checkpoints.back()).string();
    const RunResult r = run_train(ft, root / "ft");
    CHECK(r.final_model == base.final_model);
    ft.model.width = 9;
    CHECK_THROWS_AS(run_train(ft, root / "bad"), LabError);
    ft = tiny_config("ft");
    ft.init_checkpoint = (root / "nope.gfck").string();
    CHECK_THROWS_AS(run_train(ft, root / "bad"), LabError);
  }

  TEST_CASE("sampling from a checkpoint") {
    const fs::path root = testutil::scratch_dir("sample");
    const RunResult run = run_train(tiny_config("s"), root / "run");
    SampleRequest req;
    req.checkpoint = root / "run" / run.manifest.checkpoints.back();
    req.n = 32;
    req.seed = 3;
    req.schedule.steps = 6;
    req.out_dir = root / "unguided";
    const SampleOutput unguided = run_sample(req);
    CHECK(unguided.classes == std::vector<int>{0, 1});
    CHECK(unguided.files.size() == 3);

    // gamma 0 is the plain conditional sampler
    Rng rng = Rng(3).fork(0);
    const Tensor latent = initial_latent(req.schedule, 32, 2, rng);
    CHECK(latent == unguided.latents[0]);
    CHECK(sample_ode_from(model_score_source(run.final_model), req.schedule, GuidanceSpec{}, 0, latent) ==
          unguided.samples[0]);

    req.shared_noise = true;
    req.gamma = 1.0;
    req.out_dir = root / "shared";
    const SampleOutput shared = run_sample(req);
    CHECK(shared.latents[0] == shared.latents[1]);
    CHECK_FALSE(shared.samples[0] == shared.samples[1]);

    req.class_id = 5;
    CHECK_THROWS_AS(run_sample(req), LabError);
    req.class_id = 1;
    req.n = 0;
    CHECK_THROWS_AS(run_sample(req), LabError);
  }

  TEST_CASE("sweep matches sequential runs") {
    const fs::path root = testutil::scratch_dir("sweep");
    std::vector<ExperimentConfig> configs{tiny_config("one"), tiny_config("two")};
    configs[1].seed = 9;
    const auto results = run_sweep(configs, root / "sweep", 2);
    REQUIRE(results.size() == 2);
    const RunResult solo = run_train(configs[1], root / "solo");
    CHECK(results[1].final_model == solo.final_model);
    CHECK(read_file(root / "sweep" / "two" / "metrics.csv") == read_file(root / "solo" / "metrics.csv"));
    configs[1].name = "one";
    CHECK_THROWS_AS(run_sweep(configs, root / "dup", 1), LabError);
  }
}
