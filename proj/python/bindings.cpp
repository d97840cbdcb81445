#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rssm/config.hpp"
#include "rssm/io.hpp"

namespace py = pybind11;
using namespace rssm;

namespace {

py::array_t<double> to_numpy(const Array& a) {
  std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
  py::array_t<double> out(shape);
  std::copy(a.data(), a.data() + a.size(), out.mutable_data());
  return out;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["ll"] = r.ll;
  d["mse"] = r.mse;
  d["cp"] = r.cp;
  d["mse_first_step"] = r.mse_single;
  d["cp_first_step"] = r.cp_single;
  d["examples"] = r.n_examples;
  d["k_particles"] = r.particles;
  d["mc_samples"] = r.mc_samples;
  return d;
}

RunConfig config_from(const std::string& text) { return parse_run_config(nlohmann::json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_rssm, m) {
  m.doc() = "Relational state-space models: core bindings";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("preset_config", [](const std::string& name) { return to_json(preset_config(name)).dump(); },
        "Run configuration preset as a JSON string", py::arg("name") = "small");

  py::class_<Episode>(m, "Episode")
      .def_property_readonly("x", [](const Episode& e) { return to_numpy(e.x); })
      .def_property_readonly("u", [](const Episode& e) { return to_numpy(e.u); })
      .def_property_readonly("vertex_attrs", [](const Episode& e) { return to_numpy(e.graph->vertex_attrs()); })
      .def_property_readonly("edges", [](const Episode& e) {
        std::vector<std::pair<int, int>> out;
        for (const Edge& ed : e.graph->edges()) out.emplace_back(ed.tail, ed.head);
        return out;
      })
      .def_property_readonly("steps", &Episode::steps)
      .def_property_readonly("n_vertices", &Episode::n_vertices);

  py::class_<ToyDataset>(m, "ToyDataset")
      .def_readonly("seed", &ToyDataset::seed)
      .def("split", [](const ToyDataset& d, const std::string& s) { return d.split(s).episodes; }, py::arg("name"))
      .def("config_json", [](const ToyDataset& d) { return to_json(d.config).dump(); });

  m.def(
      "generate_toy",
      [](const std::string& config_json, std::uint64_t seed) { return generate_toy(config_from(config_json).toy, seed); },
      py::arg("config_json"), py::arg("seed"));
  m.def("write_dataset", &write_dataset, py::arg("dir"), py::arg("dataset"));
  m.def("read_dataset", &read_dataset, py::arg("dir"));

  m.def(
      "var_metrics", [](const ToyDataset& d, const std::string& split, std::size_t history) {
        return report_dict(var_metrics(d.split(split).episodes, history));
      },
      py::arg("dataset"), py::arg("split"), py::arg("history"));

  m.def(
      "kalman_loglik",
      [](double a, double q, double c, double r, const std::vector<double>& x) {
        return kalman_loglik(LgssmParams{a, q, c, r, 0.0, 1.0}, x);
      },
      py::arg("a"), py::arg("q"), py::arg("c"), py::arg("r"), py::arg("x"));
  m.def(
      "lgssm_smc_loglik",
      [](double a, double q, double c, double r, const std::vector<double>& x, std::size_t particles,
         std::uint64_t seed) {
        LgssmTarget target(LgssmParams{a, q, c, r, 0.0, 1.0}, x);
        Rng rng(seed);
        RngNoise noise(rng);
        return run_filter(target, x.size(), particles, noise).log_likelihood;
      },
      py::arg("a"), py::arg("q"), py::arg("c"), py::arg("r"), py::arg("x"), py::arg("particles"), py::arg("seed"));

  py::class_<RssmModel>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return std::make_unique<RssmModel>(config_from(config_json).model, seed);
           }),
           py::arg("config_json"), py::arg("seed"))
      .def_static("load", [](const std::filesystem::path& dir) { return model_from_checkpoint(read_checkpoint(dir)); })
      .def("save",
           [](const RssmModel& self, const std::filesystem::path& dir) {
             write_checkpoint(dir, make_checkpoint(self, 0, TrainConfig{}, nullptr));
           })
      .def_property_readonly("parameter_names", [](const RssmModel& self) { return self.params.names(); })
      .def("parameter", [](const RssmModel& self, const std::string& name) {
        const auto i = self.params.find(name);
        if (!i) throw py::key_error(name);
        return to_numpy(self.params.value(*i));
      })
      .def(
          "bound",
          [](const RssmModel& self, const std::vector<Episode>& eps, std::size_t particles, std::uint64_t seed) {
            std::vector<const Episode*> ptrs;
            for (const Episode& e : eps) ptrs.push_back(&e);
            EpisodeBatch batch(ptrs);
            Rng rng(seed);
            RngNoise noise(rng);
            SmcOptions so;
            so.particles = particles;
            so.keep_particles = false;
            return to_numpy(self.smc().estimate_bound(Bound(self.params), batch, so, noise).per_example);
          },
          py::arg("episodes"), py::arg("particles") = 4, py::arg("seed") = 0)
      .def(
          "evaluate",
          [](const RssmModel& self, const std::vector<Episode>& eps, std::size_t particles, std::size_t mc_samples,
             std::size_t history, std::uint64_t seed) {
            EvalOptions eo;
            eo.particles = particles;
            eo.mc_samples = mc_samples;
            eo.history = history;
            Rng rng(seed);
            MetricsReport rep;
            {
              py::gil_scoped_release nogil;
              rep = evaluate_model(self, eps, eo, rng);
            }
            return report_dict(rep);
          },
          py::arg("episodes"), py::arg("particles"), py::arg("mc_samples"), py::arg("history"), py::arg("seed") = 0)
      .def(
          "rollout",
          [](const RssmModel& self, const Episode& ep, std::size_t burn_in, std::size_t n, std::size_t particles,
             std::uint64_t seed) {
            Rng rng(seed);
            RngNoise noise(rng);
            return to_numpy(conditioned_rollout(self, ep, burn_in, n, particles, noise));
          },
          py::arg("episode"), py::arg("burn_in"), py::arg("n_rollouts"), py::arg("particles") = 100,
          py::arg("seed") = 0);

  m.def(
      "train",
      [](RssmModel& model, const std::vector<Episode>& data, const std::string& config_json, std::uint64_t seed,
         const std::filesystem::path& out, bool resume) {
        const RunConfig rc = config_from(config_json);
        TrainRunOptions opt;
        opt.out = out;
        opt.resume = resume;
        TrainRunResult r;
        {
          py::gil_scoped_release nogil;
          r = run_training(model, 0, data, rc.train, seed, opt);
        }
        std::vector<double> bounds;
        for (const StepStats& s : r.stats) bounds.push_back(s.bound);
        return bounds;
      },
      py::arg("model"), py::arg("data"), py::arg("config_json"), py::arg("seed"), py::arg("out"),
      py::arg("resume") = false, "Runs training and returns the per-step bound of this call");
}
