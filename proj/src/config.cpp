#include "guidefree/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace guidefree {

using nlohmann::json;

namespace {

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(join(path, key), "unknown field");
  }
}

double get_number(const json& j, const std::string& path, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key), "expected a number");
  return v.get<double>();
}

std::uint64_t get_count(const json& j, const std::string& path, const std::string& key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(join(path, key), "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

int get_int(const json& j, const std::string& path, const std::string& key, int fallback) {
  const std::uint64_t v = get_count(j, path, key, static_cast<std::uint64_t>(fallback));
  if (v > 1'000'000'000ULL) throw ConfigError(join(path, key), "value too large");
  return static_cast<int>(v);
}

std::string get_string(const json& j, const std::string& path, const std::string& key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(join(path, key), "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& path, const std::string& key, bool fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v.get<bool>();
}

Weighting weighting_from_name(const std::string& s, const std::string& path) {
  if (s == "constant") return Weighting::Constant;
  if (s == "inverse_variance") return Weighting::InverseVariance;
  if (s == "edm") return Weighting::EdmBalanced;
  throw ConfigError(path, "unknown weighting '" + s + "' (constant, inverse_variance, edm)");
}

GuidanceMode guidance_from_name(const std::string& s, const std::string& path) {
  if (s == "none") return GuidanceMode::None;
  if (s == "cfg") return GuidanceMode::Cfg;
  throw ConfigError(path, "unknown guidance mode '" + s + "' (none, cfg)");
}

json vec_json(const Eigen::Vector2d& v) { return json::array({v(0), v(1)}); }

json mat_json(const Eigen::Matrix2d& m) {
  return json::array({json::array({m(0, 0), m(0, 1)}), json::array({m(1, 0), m(1, 1)})});
}

double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

GaussianMixtureWorld parse_mixture(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"priors", "classes"});
  GaussianMixtureWorld w;
  if (!j.contains("priors") || !j.at("priors").is_array()) throw ConfigError(join(path, "priors"), "expected an array");
  for (std::size_t i = 0; i < j.at("priors").size(); ++i) {
    w.priors.push_back(number_at(j.at("priors")[i], join(path, "priors[" + std::to_string(i) + "]")));
  }
  if (!j.contains("classes") || !j.at("classes").is_array()) {
    throw ConfigError(join(path, "classes"), "expected an array");
  }
  for (std::size_t c = 0; c < j.at("classes").size(); ++c) {
    const std::string cp = join(path, "classes[" + std::to_string(c) + "]");
    const json& comps = j.at("classes")[c];
    if (!comps.is_array()) throw ConfigError(cp, "expected an array of components");
    ClassMixture mix;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const std::string kp = cp + "[" + std::to_string(k) + "]";
      const json& comp = comps[k];
      require_object(comp, kp);
      reject_unknown(comp, kp, {"weight", "mean", "cov"});
      GaussianComponent g;
      g.weight = get_number(comp, kp, "weight", 1.0);
      if (!comp.contains("mean") || !comp.at("mean").is_array() || comp.at("mean").size() != 2) {
        throw ConfigError(join(kp, "mean"), "expected two numbers");
      }
      for (int d = 0; d < 2; ++d) g.mean(d) = number_at(comp.at("mean")[d], join(kp, "mean"));
      if (!comp.contains("cov") || !comp.at("cov").is_array() || comp.at("cov").size() != 2) {
        throw ConfigError(join(kp, "cov"), "expected a 2x2 array");
      }
      for (int r = 0; r < 2; ++r) {
        const json& row = comp.at("cov")[r];
        if (!row.is_array() || row.size() != 2) throw ConfigError(join(kp, "cov"), "expected a 2x2 array");
        for (int c2 = 0; c2 < 2; ++c2) g.cov(r, c2) = number_at(row[c2], join(kp, "cov"));
      }
      mix.components.push_back(g);
    }
    w.classes.push_back(mix);
  }
  try {
    w.validate();
  } catch (const WorldError& e) {
    throw ConfigError(path, e.what());
  }
  return w;
}

json mixture_json(const GaussianMixtureWorld& w) {
  json classes = json::array();
  for (const auto& mix : w.classes) {
    json comps = json::array();
    for (const auto& g : mix.components) {
      comps.push_back({{"weight", g.weight}, {"mean", vec_json(g.mean)}, {"cov", mat_json(g.cov)}});
    }
    classes.push_back(comps);
  }
  return {{"priors", w.priors}, {"classes", classes}};
}

template <typename F>
void guarded(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

std::string weighting_name(Weighting w) {
  switch (w) {
    case Weighting::Constant:
      return "constant";
    case Weighting::InverseVariance:
      return "inverse_variance";
    case Weighting::EdmBalanced:
      return "edm";
  }
  return "constant";
}

std::string guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::None:
      return "none";
    case GuidanceMode::Cfg:
      return "cfg";
    case GuidanceMode::TwoScore:
      return "two_score";
  }
  return "none";
}

GaussianMixtureWorld WorldSpec::build() const {
  if (kind == "default") return default_world(separation);
  if (kind == "mixture" && mixture) return *mixture;
  throw ConfigError("world.kind", "cannot build world of kind '" + kind + "'");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  require_object(root, "");
  reject_unknown(root, "",
                 {"version", "name", "seed", "out", "world", "model", "schedule", "train", "init_checkpoint", "eval"});
  ExperimentConfig cfg;
  if (!root.contains("version")) throw ConfigError("version", "required field missing");
  cfg.version = get_int(root, "", "version", 0);
  if (cfg.version != kConfigVersion) {
    throw ConfigError("version", "unsupported version " + std::to_string(cfg.version) + " (expected " +
                                     std::to_string(kConfigVersion) + ")");
  }
  if (!root.contains("seed")) throw ConfigError("seed", "required field missing");
  cfg.seed = get_count(root, "", "seed", 0);
  cfg.name = get_string(root, "", "name", cfg.name);
  cfg.out = get_string(root, "", "out", cfg.out);
  cfg.init_checkpoint = get_string(root, "", "init_checkpoint", cfg.init_checkpoint);

  if (root.contains("world")) {
    const json& w = root.at("world");
    require_object(w, "world");
    reject_unknown(w, "world", {"kind", "separation", "mixture"});
    cfg.world.kind = get_string(w, "world", "kind", cfg.world.kind);
    cfg.world.separation = get_number(w, "world", "separation", cfg.world.separation);
    if (cfg.world.kind == "mixture") {
      if (!w.contains("mixture")) throw ConfigError("world.mixture", "required for kind 'mixture'");
      cfg.world.mixture = parse_mixture(w.at("mixture"), "world.mixture");
    } else if (cfg.world.kind != "default") {
      throw ConfigError("world.kind", "unknown world kind '" + cfg.world.kind + "' (default, mixture)");
    } else if (w.contains("mixture")) {
      throw ConfigError("world.mixture", "only allowed with kind 'mixture'");
    }
  }
  const GaussianMixtureWorld world = cfg.world.build();

  if (root.contains("model")) {
    const json& m = root.at("model");
    require_object(m, "model");
    reject_unknown(m, "model", {"hidden_layers", "width", "embed_dim"});
    cfg.model.hidden_layers = get_int(m, "model", "hidden_layers", cfg.model.hidden_layers);
    cfg.model.width = get_int(m, "model", "width", cfg.model.width);
    cfg.model.embed_dim = get_int(m, "model", "embed_dim", cfg.model.embed_dim);
  }
  cfg.model.data_dim = 2;
  cfg.model.num_classes = world.num_classes();
  if (cfg.model.hidden_layers < 1) throw ConfigError("model.hidden_layers", "must be at least 1");
  if (cfg.model.width < 1) throw ConfigError("model.width", "must be at least 1");
  if (cfg.model.embed_dim < 1) throw ConfigError("model.embed_dim", "must be at least 1");

  if (root.contains("schedule")) {
    const json& s = root.at("schedule");
    require_object(s, "schedule");
    reject_unknown(s, "schedule",
                   {"sigma_min", "sigma_max", "train_sigma_min", "train_sigma_max", "weighting", "contrastive_weighting",
                    "sigma_data", "steps", "rho"});
    cfg.schedule.sigma_min = get_number(s, "schedule", "sigma_min", cfg.schedule.sigma_min);
    cfg.schedule.sigma_max = get_number(s, "schedule", "sigma_max", cfg.schedule.sigma_max);
    if (s.contains("train_sigma_min")) {
      cfg.schedule.train_sigma_min = get_number(s, "schedule", "train_sigma_min", 0.0);
    }
    if (s.contains("train_sigma_max")) {
      cfg.schedule.train_sigma_max = get_number(s, "schedule", "train_sigma_max", 0.0);
    }
    cfg.schedule.weighting = weighting_from_name(
        get_string(s, "schedule", "weighting", weighting_name(cfg.schedule.weighting)), "schedule.weighting");
    cfg.schedule.contrastive_weighting = weighting_from_name(
        get_string(s, "schedule", "contrastive_weighting", weighting_name(cfg.schedule.contrastive_weighting)),
        "schedule.contrastive_weighting");
    if (s.contains("sigma_data") && s.at("sigma_data").is_string()) {
      if (s.at("sigma_data").get<std::string>() != "auto") {
        throw ConfigError("schedule.sigma_data", "expected a number or \"auto\"");
      }
      cfg.sigma_data_auto = true;
    } else if (s.contains("sigma_data")) {
      cfg.schedule.sigma_data = get_number(s, "schedule", "sigma_data", cfg.schedule.sigma_data);
      cfg.sigma_data_auto = false;
    }
    cfg.schedule.steps = get_int(s, "schedule", "steps", cfg.schedule.steps);
    cfg.schedule.rho = get_number(s, "schedule", "rho", cfg.schedule.rho);
  }
  guarded("schedule", [&] { cfg.schedule.validate(); });

  if (root.contains("train")) {
    const json& t = root.at("train");
    const std::string p = "train";
    require_object(t, p);
    reject_unknown(t, p,
                   {"objective", "beta_dsm", "beta", "lambda", "approach", "k", "learning_rate", "batch_size",
                    "iterations", "label_dropout", "checkpoint_every"});
    guarded(join(p, "objective"), [&] {
      cfg.train.objective = objective_from_name(get_string(t, p, "objective", objective_name(cfg.train.objective)));
    });
    cfg.train.beta_dsm = get_number(t, p, "beta_dsm", cfg.train.beta_dsm);
    cfg.train.beta = get_number(t, p, "beta", cfg.train.beta);
    cfg.train.lambda = get_number(t, p, "lambda", cfg.train.lambda);
    const int approach = get_int(t, p, "approach", static_cast<int>(cfg.train.approach));
    if (approach != 1 && approach != 2) throw ConfigError(join(p, "approach"), "expected 1 or 2");
    cfg.train.approach = static_cast<TupleApproach>(approach);
    cfg.train.k = get_int(t, p, "k", cfg.train.k);
    cfg.train.learning_rate = get_number(t, p, "learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = get_int(t, p, "batch_size", cfg.train.batch_size);
    cfg.train.iterations = get_count(t, p, "iterations", cfg.train.iterations);
    cfg.train.label_dropout = get_number(t, p, "label_dropout", cfg.train.label_dropout);
    cfg.train.checkpoint_every = get_count(t, p, "checkpoint_every", cfg.train.checkpoint_every);
  }
  guarded("train", [&] { cfg.train.validate(); });

  if (root.contains("eval")) {
    const json& e = root.at("eval");
    const std::string p = "eval";
    require_object(e, p);
    reject_unknown(e, p, {"guidance", "gamma", "samples_per_class", "truth_per_class", "metrics_every", "shared_latent"});
    cfg.eval.guidance.mode = guidance_from_name(
        get_string(e, p, "guidance", guidance_mode_name(cfg.eval.guidance.mode)), join(p, "guidance"));
    cfg.eval.guidance.gamma = get_number(e, p, "gamma", cfg.eval.guidance.gamma);
    cfg.eval.samples_per_class = get_count(e, p, "samples_per_class", cfg.eval.samples_per_class);
    cfg.eval.truth_per_class = get_count(e, p, "truth_per_class", cfg.eval.truth_per_class);
    cfg.eval.metrics_every = get_count(e, p, "metrics_every", cfg.eval.metrics_every);
    cfg.eval.shared_latent = get_bool(e, p, "shared_latent", cfg.eval.shared_latent);
    if (cfg.eval.samples_per_class == 1) throw ConfigError(join(p, "samples_per_class"), "must be 0 or at least 2");
    if (cfg.eval.samples_per_class > 0 && cfg.eval.truth_per_class < 2) {
      throw ConfigError(join(p, "truth_per_class"), "must be at least 2");
    }
  }
  guarded("eval.gamma", [&] { cfg.eval.guidance.validate(); });
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json world = {{"kind", c.world.kind}, {"separation", c.world.separation}};
  if (c.world.mixture) world["mixture"] = mixture_json(*c.world.mixture);
  json schedule = {{"sigma_min", c.schedule.sigma_min}, {"sigma_max", c.schedule.sigma_max},
                   {"weighting", weighting_name(c.schedule.weighting)},
                   {"contrastive_weighting", weighting_name(c.schedule.contrastive_weighting)},
                   {"steps", c.schedule.steps},
                   {"rho", c.schedule.rho}};
  if (c.schedule.train_sigma_min) schedule["train_sigma_min"] = *c.schedule.train_sigma_min;
  if (c.schedule.train_sigma_max) schedule["train_sigma_max"] = *c.schedule.train_sigma_max;
  if (c.sigma_data_auto) {
    schedule["sigma_data"] = "auto";
  } else {
    schedule["sigma_data"] = c.schedule.sigma_data;
  }
  const json root = {
      {"version", c.version},
      {"name", c.name},
      {"seed", c.seed},
      {"out", c.out},
      {"world", world},
      {"model", {{"hidden_layers", c.model.hidden_layers}, {"width", c.model.width}, {"embed_dim", c.model.embed_dim}}},
      {"schedule", schedule},
      {"train",
       {{"objective", objective_name(c.train.objective)},
        {"beta_dsm", c.train.beta_dsm},
        {"beta", c.train.beta},
        {"lambda", c.train.lambda},
        {"approach", static_cast<int>(c.train.approach)},
        {"k", c.train.k},
        {"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"iterations", c.train.iterations},
        {"label_dropout", c.train.label_dropout},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"init_checkpoint", c.init_checkpoint},
      {"eval",
       {{"guidance", guidance_mode_name(c.eval.guidance.mode)},
        {"gamma", c.eval.guidance.gamma},
        {"samples_per_class", c.eval.samples_per_class},
        {"truth_per_class", c.eval.truth_per_class},
        {"metrics_every", c.eval.metrics_every},
        {"shared_latent", c.eval.shared_latent}}},
  };
  return root.dump(2) + "\n";
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.out.clear();
  return fnv1a_hex(config_to_json(c));
}

}  // namespace guidefree
