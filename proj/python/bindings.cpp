#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "guidefree/closedform.hpp"
#include "guidefree/lab.hpp"
#include "guidefree/metrics.hpp"
#include "guidefree/verify.hpp"

namespace py = pybind11;
using namespace guidefree;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

// Rows are points x, columns classes c.
DiscreteProblem problem_from(const Array& cond, const std::vector<double>& priors) {
  const Tensor t = from_numpy(cond);
  ConditionalTable table(static_cast<int>(t.rows()), static_cast<int>(t.cols()));
  table.values = t.values();
  return DiscreteProblem(table, priors);
}

py::dict record_dict(const MetricRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["loss"] = r.loss;
  d["fd"] = r.fd;
  d["bayes_acc"] = r.bayes_acc;
  d["mean_llr"] = r.mean_llr;
  d["recall_proxy"] = r.recall_proxy;
  d["fd_regularized"] = r.fd_regularized;
  return d;
}

}  // namespace

PYBIND11_MODULE(_guidefree, m) {
  m.doc() = "Guidance-free class-conditional diffusion lab";
  m.attr("__version__") = kVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LabError>(m, "LabError", PyExc_RuntimeError);

  m.def(
      "sample_world",
      [](double separation, std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        const LabeledBatch b = sample_labeled(default_world(separation), n, rng);
        return py::make_tuple(to_numpy(b.x), b.labels);
      },
      py::arg("separation") = 0.6, py::arg("n") = 1000, py::arg("seed") = 0,
      "Labeled draws (x, labels) from the default two-class world.");

  m.def(
      "bayes_accuracy",
      [](const Array& x, const std::vector<int>& labels, double separation) {
        return bayes_accuracy(default_world(separation), LabeledBatch{from_numpy(x), labels});
      },
      py::arg("x"), py::arg("labels"), py::arg("separation") = 0.6);

  m.def(
      "frechet_distance", [](const Array& a, const Array& b) { return frechet_gaussian(from_numpy(a), from_numpy(b)).value; },
      py::arg("a"), py::arg("b"));

  m.def(
      "mclr_optimum",
      [](const Array& cond, const std::vector<double>& priors, int c, double eta, double delta) {
        return mclr_optimum(problem_from(cond, priors), c, eta, delta).dist.p;
      },
      py::arg("cond"), py::arg("priors"), py::arg("c"), py::arg("eta"), py::arg("delta") = 1e-9,
      "Optimum of the likelihood-ratio regularized objective for class c; cond is S x M.");

  m.def(
      "ccdpo_optimum",
      [](const Array& cond, const std::vector<double>& priors, const Array& ref, int c, double beta) {
        const DiscreteProblem p = problem_from(cond, priors);
        const DiscreteProblem r = problem_from(ref, priors);
        return ccdpo_optimum(p, r.cond(), c, beta).p;
      },
      py::arg("cond"), py::arg("priors"), py::arg("ref"), py::arg("c"), py::arg("beta"));

  m.def(
      "verify",
      [](const std::string& suite, std::uint64_t seed, int problems, std::optional<double> tolerance) {
        VerifyOptions opt;
        opt.seed = seed;
        opt.problems = problems;
        opt.tolerance = tolerance;
        SuiteReport r;
        {
          py::gil_scoped_release release;
          r = run_verify(suite, opt);
        }
        return py::make_tuple(r.passed, r.json);
      },
      py::arg("suite") = "all", py::arg("seed") = VerifyOptions{}.seed, py::arg("problems") = 100,
      py::arg("tolerance") = std::nullopt, "Returns (passed, json_report).");

  m.def(
      "train",
      [](const std::string& config_json, const std::string& out_dir) {
        const ExperimentConfig cfg = parse_config(config_json);
        std::optional<RunResult> r;
        {
          py::gil_scoped_release release;
          r.emplace(run_train(cfg, out_dir));
        }
        py::list records;
        for (const auto& rec : r->records) records.append(record_dict(rec));
        py::dict out;
        out["dir"] = r->dir.string();
        out["checkpoints"] = r->manifest.checkpoints;
        out["config_hash"] = r->manifest.config_hash;
        out["records"] = records;
        return out;
      },
      py::arg("config_json"), py::arg("out_dir"), "Runs a training config (JSON text) into out_dir.");

  m.def(
      "sample",
      [](const std::string& checkpoint, std::size_t n, double gamma, std::uint64_t seed, bool shared_noise,
         std::optional<int> class_id, int steps, const std::string& out_dir) {
        SampleRequest req;
        req.checkpoint = checkpoint;
        req.n = n;
        req.gamma = gamma;
        req.seed = seed;
        req.shared_noise = shared_noise;
        req.class_id = class_id;
        req.schedule.steps = steps;
        req.out_dir = out_dir;
        std::optional<SampleOutput> s;
        {
          py::gil_scoped_release release;
          s.emplace(run_sample(req));
        }
        py::dict out;
        for (std::size_t i = 0; i < s->classes.size(); ++i) out[py::int_(s->classes[i])] = to_numpy(s->samples[i]);
        return out;
      },
      py::arg("checkpoint"), py::arg("n") = 1024, py::arg("gamma") = 0.0, py::arg("seed") = 0,
      py::arg("shared_noise") = false, py::arg("class_id") = std::nullopt, py::arg("steps") = 64, py::arg("out_dir"),
      "Samples per class from a checkpoint, keyed by class index.");
}
