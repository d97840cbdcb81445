// rssm: dataset generation, training, evaluation and rollouts.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numeric failure.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "rssm/config.hpp"
#include "rssm/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rssm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) {
    rc = load_run_config(c.config);
    if (!c.preset.empty() && c.preset != rc.preset)
      throw ConfigError("config: --preset " + c.preset + " conflicts with preset '" + rc.preset + "' in " + c.config);
  } else {
    rc = preset_config(c.preset.empty() ? "small" : c.preset);
  }
  if (c.seed_set) rc.seed = c.seed;
  return rc;
}

void add_common(CLI::App* app, Common& c, bool with_preset = true) {
  app->add_option("--config", c.config, "JSON run configuration");
  if (with_preset)
    app->add_option("--preset", c.preset, "Configuration preset")->check(CLI::IsMember({"paper", "small"}));
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "Random seed");
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  std::uint32_t v[2];
  seq.generate(v, v + 2);
  return (static_cast<std::uint64_t>(v[0]) << 32) | v[1];
}

void print_report(const char* what, const MetricsReport& r, const std::string& split, std::size_t history) {
  std::cout << std::setprecision(6) << "model: " << what << "\n"
            << "split: " << split << "\n"
            << "examples: " << r.n_examples << "\n"
            << "history: " << history << "\n"
            << "k_particles: " << r.particles << "\n"
            << "mc_samples: " << r.mc_samples << "\n"
            << "ll: " << r.ll << "\n"
            << "mse: " << r.mse << "\n"
            << "cp: " << r.cp << "\n"
            << "mse_first_step: " << r.mse_single << "\n"
            << "cp_first_step: " << r.cp_single << "\n";
}

json report_json(const char* what, const MetricsReport& r, const std::string& split, std::size_t history) {
  return {{"model", what},          {"split", split},        {"examples", r.n_examples},
          {"history", history},     {"k_particles", r.particles}, {"mc_samples", r.mc_samples},
          {"ll", r.ll},             {"mse", r.mse},          {"cp", r.cp},
          {"mse_first_step", r.mse_single}, {"cp_first_step", r.cp_single}};
}

std::vector<Episode> pick(const ToySplit& s, std::size_t limit) {
  std::vector<Episode> v(s.episodes.begin(), s.episodes.begin() + std::min(limit, s.episodes.size()));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational state-space models on graphs"};
  app.require_subcommand(1);

  // gen-toy
  Common gen;
  auto* g = app.add_subcommand("gen-toy", "Generate the synthetic toy dataset");
  add_common(g, gen);
  g->add_option("--out", gen.out, "Output dataset directory")->required();

  // train
  Common tr;
  std::string tr_data;
  bool resume = false;
  std::size_t tr_k = 0, tr_steps = 0;
  double budget = 0.0;
  auto* t = app.add_subcommand("train", "Train a model with the VSMC bound and auxiliary losses");
  add_common(t, tr);
  t->add_option("--dataset", tr_data, "Dataset directory (overrides the config)");
  t->add_option("--out", tr.out, "Run directory for checkpoints and train.log")->required();
  t->add_option("--k-particles", tr_k, "SMC particles per example");
  t->add_option("--steps", tr_steps, "Number of optimizer steps");
  t->add_option("--time-budget", budget, "Stop after this many seconds (0: unlimited)");
  t->add_flag("--resume", resume, "Continue from the newest checkpoint in --out");

  // eval
  Common ev;
  std::string ev_ckpt, ev_data, ev_split = "test", baseline;
  std::size_t ev_k = 0, ev_mc = 0, ev_limit = std::numeric_limits<std::size_t>::max(), ev_history = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline on a dataset split");
  add_common(e, ev);
  e->add_option("--checkpoint", ev_ckpt, "Checkpoint directory");
  e->add_option("--dataset", ev_data, "Dataset directory")->required();
  e->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "valid", "test"}));
  e->add_option("--baseline", baseline, "Evaluate a baseline instead of a checkpoint")
      ->check(CLI::IsMember({"var", "oracle"}));
  e->add_option("--k-particles", ev_k, "SMC particles");
  e->add_option("--mc-samples", ev_mc, "Monte Carlo samples per prediction");
  e->add_option("--history", ev_history, "Observed prefix length before the first prediction");
  e->add_option("--limit", ev_limit, "Evaluate only the first N examples");
  e->add_option("--workers", workers, "Evaluation threads");
  e->add_option("--out", ev.out, "Write the report as JSON to this file");

  // rollout
  Common ro;
  std::string ro_ckpt, ro_data, ro_split = "test";
  std::size_t example = 0, burn_in = 10, n_rollouts = 10, ro_k = 100;
  auto* r = app.add_subcommand("rollout", "Sample trajectories after conditioning on a prefix");
  add_common(r, ro, false);
  r->add_option("--checkpoint", ro_ckpt, "Checkpoint directory")->required();
  r->add_option("--dataset", ro_data, "Dataset directory")->required();
  r->add_option("--split", ro_split, "Split holding the example")->check(CLI::IsMember({"train", "valid", "test"}));
  r->add_option("--example", example, "Example index within the split");
  r->add_option("--burn-in", burn_in, "Observed steps before free running");
  r->add_option("--n-rollouts", n_rollouts, "Number of trajectories");
  r->add_option("--k-particles", ro_k, "SMC particles for the burn-in filter");
  r->add_option("--out", ro.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) {
      const RunConfig rc = resolve(gen);
      const auto t0 = std::chrono::steady_clock::now();
      const ToyDataset ds = generate_toy(rc.toy, rc.seed);
      write_dataset(gen.out, ds);
      const json m = json::parse(std::ifstream(fs::path(gen.out) / "manifest.json"));
      std::cout << "wrote " << gen.out << " (" << ds.train.episodes.size() << "/" << ds.valid.episodes.size() << "/"
                << ds.test.episodes.size() << " examples, seed " << rc.seed << ", "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
      for (const char* s : {"train", "valid", "test"})
        for (const char* f : {"x", "u", "vertex_attrs"})
          std::cout << "  " << m["splits"][s]["files"][f]["path"].get<std::string>() << "  crc32 "
                    << m["splits"][s]["files"][f]["crc32"] << "\n";
      return 0;
    }

    if (*t) {
      RunConfig rc = resolve(tr);
      if (!tr_data.empty()) rc.dataset = tr_data;
      if (rc.dataset.empty()) throw ConfigError("train: no dataset given (--dataset or \"dataset\" in the config)");
      if (tr_k) rc.train.particles = tr_k;
      if (tr_steps) rc.train.steps = tr_steps;
      const ToyDataset ds = read_dataset(rc.dataset);
      check_model_matches(rc.model, ds);
      fs::create_directories(tr.out);
      {
        std::ofstream cfg(fs::path(tr.out) / "config.json");
        cfg << to_json(rc).dump(2) << "\n";
      }
      const std::uint64_t model_seed = derive(rc.seed, 1);
      RssmModel model(rc.model, model_seed);
      TrainRunOptions opt;
      opt.out = tr.out;
      opt.resume = resume;
      opt.time_budget = budget;
      opt.progress = &std::cout;
      const TrainRunResult res = run_training(model, model_seed, ds.train.episodes, rc.train, derive(rc.seed, 2), opt);
      std::cout << "finished " << res.steps_done << "/" << rc.train.steps << " steps; checkpoint "
                << res.last_checkpoint.string() << "\n";
      return 0;
    }

    if (*e) {
      RunConfig rc = resolve(ev);
      EvalOptions eo = rc.eval;
      if (ev_k) eo.particles = ev_k;
      if (ev_mc) eo.mc_samples = ev_mc;
      eo.workers = workers;
      const ToyDataset ds = read_dataset(ev_data);
      if (ev_history) eo.history = ev_history;
      else if (ev.config.empty()) eo.history = ds.config.steps > 5 ? ds.config.steps - 5 : 1;
      const std::vector<Episode> eps = pick(ds.split(ev_split), ev_limit);
      MetricsReport rep;
      const char* what = "rssm";
      if (baseline == "var") {
        what = "var";
        rep = var_metrics(eps, eo.history);
      } else if (baseline == "oracle") {
        what = "oracle";
        const ToyDataset full = generate_toy(ds.config, ds.seed, true);
        ToySplit s = full.split(ev_split);
        s.episodes.resize(eps.size());
        s.latents.resize(eps.size());
        Rng rng(derive(rc.seed, 3));
        rep = oracle_toy_metrics(ds.config, s, eo.mc_samples, eo.history, rng);
      } else {
        if (ev_ckpt.empty()) throw ConfigError("eval: --checkpoint is required unless --baseline is given");
        if (!fs::exists(fs::path(ev_ckpt) / "manifest.json"))
          throw std::runtime_error("eval: no checkpoint at '" + ev_ckpt + "'");
        auto model = model_from_checkpoint(read_checkpoint(ev_ckpt));
        check_model_matches(model->config, ds);
        Rng rng(derive(rc.seed, 3));
        rep = evaluate_model(*model, eps, eo, rng);
      }
      print_report(what, rep, ev_split, eo.history);
      if (!ev.out.empty()) {
        std::ofstream out(ev.out);
        out << report_json(what, rep, ev_split, eo.history).dump(2) << "\n";
      }
      return 0;
    }

    if (*r) {
      const RunConfig rc = resolve(ro);
      const ToyDataset ds = read_dataset(ro_data);
      const ToySplit& split = ds.split(ro_split);
      if (example >= split.episodes.size())
        throw ConfigError("rollout: --example " + std::to_string(example) + " out of range (split has " +
                          std::to_string(split.episodes.size()) + ")");
      auto model = model_from_checkpoint(read_checkpoint(ro_ckpt));
      check_model_matches(model->config, ds);
      Rng rng(derive(rc.seed, 4));
      RngNoise noise(rng);
      const Array traj = conditioned_rollout(*model, split.episodes[example], burn_in, n_rollouts, ro_k, noise);
      fs::create_directories(ro.out);
      write_bytes(fs::path(ro.out) / "rollout.bin", encode_f32(traj));
      std::ofstream tsv(fs::path(ro.out) / "rollout.tsv");
      tsv << "rollout\tstep\tvertex\tdim\tvalue\n" << std::setprecision(9);
      const auto& s = traj.shape();
      for (std::size_t a = 0; a < s[0]; ++a)
        for (std::size_t b = 0; b < s[1]; ++b)
          for (std::size_t c = 0; c < s[2]; ++c)
            for (std::size_t d = 0; d < s[3]; ++d)
              tsv << a << '\t' << b << '\t' << c << '\t' << d << '\t'
                  << static_cast<float>(traj[((a * s[1] + b) * s[2] + c) * s[3] + d]) << '\n';
      std::cout << "wrote " << s[0] << " rollouts of shape (" << s[1] << ", " << s[2] << ", " << s[3] << ") to "
                << ro.out << "\n";
      return 0;
    }
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
