// Acceptance checks. Each criterion prints one line:
//   criterion <n> <PASS|FAIL> <name>: <measurements>
// Usage: rssm_acceptance <n>|all
// Criterion 7 reads RSSM_ACCEPT_BUDGET (training seconds over all seeds,
// default 6000), RSSM_ACCEPT_EVAL_EXAMPLES (held-out examples, default 100)
// and RSSM_ACCEPT_WORK (run directory; runs there are resumed).

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "../common/support.hpp"
#include "rssm/config.hpp"
#include "rssm/io.hpp"

using namespace rssm;
using namespace rssm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path work_root() {
  if (const char* w = std::getenv("RSSM_ACCEPT_WORK")) return w;
  return fs::temp_directory_path() / "rssm_acceptance";
}

// ---------------------------------------------------------------------------
// 1. VAR baseline on the full-size toy test split.

Outcome var_baseline() {
  ToyConfig c = ToyConfig::paper();
  c.n_train = c.n_valid = 0;  // test examples are seeded independently of the other splits
  const ToyDataset ds = generate_toy(c, 0);
  const MetricsReport r = var_metrics(ds.test.episodes, c.steps - 5);
  const bool ok = std::abs(r.mse - 0.679) <= 0.010 && std::abs(r.cp - 0.750) <= 0.010 && std::abs(r.ll + 366) <= 15;
  return {ok, fmt("MSE %.5f (target 0.679+-0.010), CP %.5f (0.750+-0.010), LL %.2f (-366+-15) on %zu examples",
                  r.mse, r.cp, r.ll, r.n_examples)};
}

// ---------------------------------------------------------------------------
// 2. Unbiasedness of the particle filter likelihood on a linear-Gaussian model.

Outcome smc_unbiased() {
  LgssmParams prm;
  prm.a = 0.9;
  prm.q = 0.1;
  prm.c = 1.0;
  prm.r = 0.1;
  Rng data_rng(2);
  const auto x = sample_lgssm(prm, 5, data_rng);
  const double exact = kalman_loglik(prm, x);
  const int seeds = 500;
  struct Stat {
    double mean, se;
  };
  auto stats = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double z : v) m += z;
    m /= static_cast<double>(v.size());
    for (double z : v) s += (z - m) * (z - m);
    return Stat{m, std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
  };
  bool ok = true;
  std::string detail;
  std::vector<Stat> means;
  for (std::size_t K : {1, 2, 4, 8}) {
    std::vector<double> lhat, ratio;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(K * 100000 + static_cast<std::size_t>(s));
      RngNoise noise(rng);
      LgssmTarget target(prm, x);
      const double l = run_filter(target, x.size(), K, noise).log_likelihood;
      lhat.push_back(l);
      ratio.push_back(std::exp(l - exact));
    }
    const Stat m = stats(lhat);
    means.push_back(m);
    ok = ok && m.mean <= exact;
    if (K == 4) {
      const Stat r = stats(ratio);
      const bool unbiased = std::abs(r.mean - 1.0) <= 3 * r.se;
      ok = ok && unbiased;
      detail += fmt("K=4 mean exp(L-Lexact) %.4f (se %.4f); ", r.mean, r.se);
    }
  }
  for (std::size_t i = 1; i < means.size(); ++i)
    ok = ok && means[i].mean >= means[i - 1].mean - 3 * std::hypot(means[i].se, means[i - 1].se);
  detail += fmt("exact %.4f, mean L for K=1,2,4,8: %.4f %.4f %.4f %.4f", exact, means[0].mean, means[1].mean,
                means[2].mean, means[3].mean);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 3. Single-particle bound against a directly coded ELBO.

double direct_elbo(const RssmModel& m, const Bound& p, const Episode& ep, Noise& noise) {
  const GraphBatch g = GraphBatch::single(*ep.graph);
  ModelState state = m.gen.init_state(p, g);
  BeliefState belief = m.prop.init_belief(p, g);
  double total = 0.0;
  for (std::size_t t = 0; t < ep.steps(); ++t) {
    const Var x(time_slice(ep.x, t)), u(time_slice(ep.u, t));
    const PreGlobal pre = m.gen.prepare(p, g, state, u);
    belief = m.prop.belief_update(p, g, belief, x, u);
    const GlobalProposal qg = m.prop.propose_global(p, pre.h_global, belief.b_global, noise);
    const double logf_g = m.gen.global_density(p, pre.h_global).log_prob(qg.z_global).value().item();
    const Var h = m.gen.local_context(p, g, pre, qg.z_global);
    const LocalProposal ql = m.prop.propose_local(p, g, h, belief.B, qg.z_global, noise);
    const Array logf_l = m.gen.local_density(p, g, h, qg.z_global).log_prob(ql.z_local).value();
    state = m.gen.advance(pre, h, qg.z_global, ql.z_local);
    const Array obs = m.gen.observe_logprob(p, g, state, x).value();
    total += logf_g - qg.logq.value().item();
    for (std::size_t r = 0; r < logf_l.size(); ++r) total += logf_l[r] - ql.logq.value()[r] + obs[r];
  }
  return total;
}

Outcome elbo_identity() {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig c = tiny_model(3);
    c.gen_flows = trial % 2;
    c.prop_flows = (trial / 2) % 2;
    c.vertex_attr_dim = 2;
    RssmModel model(c, 100 + trial);
    Rng rng(200 + trial);
    perturb(model.params, rng, 0.05);
    const Episode ep = random_episode(random_graph(2 + trial % 5, rng, 0.5, 2), 5, 1, rng);
    const Bound p(model.params);
    RngNoise noise(rng);
    RecordingNoise rec(noise);
    SmcOptions so;
    so.particles = 1;
    const double bound = model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, rec).bound.value().item();
    ReplayNoise replay(rec.normals(), noise);
    worst = std::max(worst, std::abs(bound - direct_elbo(model, p, ep, replay)));
  }
  return {worst < 1e-8, fmt("max |K=1 bound - ELBO| over 10 instances %.3e (tol 1e-8)", worst)};
}

// ---------------------------------------------------------------------------
// 4. Flow invertibility, log-determinants and normalization.

FlowConfig random_flow_config(std::size_t d, std::size_t context, std::size_t attrs) {
  FlowConfig c;
  c.dim = d;
  c.context_dim = context;
  c.vertex_attr_dim = attrs;
  c.hidden = 6;
  c.heads = 2;
  c.query_dim = 3;
  c.value_dim = 3;
  return c;
}

double brute_logdet(const FlowStack& f, const Bound& p, const GraphBatch& g, const Var& ctx, const Array& z) {
  const std::size_t n = z.size();
  Eigen::MatrixXd J(n, n);
  const double h = 1e-6;
  for (std::size_t j = 0; j < n; ++j) {
    Array zp = z, zm = z;
    zp[j] += h;
    zm[j] -= h;
    const Array fp = f.forward(p, g, ctx, Var(zp)).z.value(), fm = f.forward(p, g, ctx, Var(zm)).z.value();
    for (std::size_t i = 0; i < n; ++i)
      J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (fp[i] - fm[i]) / (2 * h);
  }
  return std::log(std::abs(J.determinant()));
}

Outcome flow_correctness() {
  Rng rng(4);
  std::uniform_int_distribution<int> nd(1, 4), dd(2, 6), sd(1, 3), cd(0, 2);
  double recon = 0.0, logdet = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = nd(rng);
    const std::size_t d = static_cast<std::size_t>(dd(rng)), ctx_dim = static_cast<std::size_t>(cd(rng));
    const std::size_t attrs = trial % 2 ? 2 : 0;
    ParamStore store;
    FlowStack f(store, "f", random_flow_config(d, ctx_dim, attrs), static_cast<std::size_t>(sd(rng)), rng);
    perturb(store, rng, 0.3);
    const AttributedGraph g = random_graph(n, rng, 0.5, attrs);
    const GraphBatch gb = GraphBatch::single(g);
    const Var ctx = ctx_dim ? Var(random_array({1, ctx_dim}, rng)) : Var();
    const Bound p(store);
    const Array z = random_array({static_cast<std::size_t>(n), d}, rng);
    const FlowResult fw = f.forward(p, gb, ctx, Var(z));
    recon = std::max(recon, max_abs_diff(f.inverse(p, gb, ctx, fw.z).z.value(), z));
    logdet = std::max(logdet, std::abs(sum(fw.logdet).value().item() - brute_logdet(f, p, gb, ctx, z)));
  }
  double worst_mass = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    ParamStore store;
    FlowStack f(store, "f", random_flow_config(2, 0, 0), 2, rng);
    perturb(store, rng, 0.2);
    const AttributedGraph g(1, {});
    const int n = 300;
    const double lo = -10, step = 20.0 / n;
    const GraphBatch gb({&g}, {n * n});
    const std::size_t rows = static_cast<std::size_t>(n * n);
    Array z({rows, 2});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        z(static_cast<std::size_t>(i * n + j), 0) = lo + (i + 0.5) * step;
        z(static_cast<std::size_t>(i * n + j), 1) = lo + (j + 0.5) * step;
      }
    const DiagGaussian base{Var(Array({rows, 2})), Var(Array({rows, 2}, 1.0))};
    const Array lp = flow_log_prob_rows(Bound(store), f, base, gb, Var(), Var(z)).value();
    double mass = 0.0;
    for (double v : lp.vec()) mass += std::exp(v) * step * step;
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
  }
  const bool ok = recon < 1e-8 && logdet < 1e-5 && worst_mass < 0.02;
  return {ok, fmt("100 stacks: max reconstruction error %.3e (tol 1e-8), max logdet error %.3e (tol 1e-5); "
                  "grid mass max |1 - mass| %.4f over 5 stacks (tol 0.02)",
                  recon, logdet, worst_mass)};
}

// ---------------------------------------------------------------------------
// 5. Permutation equivariance and invariance.

class SplitNoise final : public Noise {
 public:
  SplitNoise(std::uint64_t normal_seed, std::uint64_t uniform_seed) : a_(normal_seed), b_(uniform_seed) {}
  Array normal(std::size_t r, std::size_t c) override { return RngNoise(a_).normal(r, c); }
  double uniform() override { return RngNoise(b_).uniform(); }

 private:
  Rng a_, b_;
};

// Replays normals; draws with `rows` rows have their per-graph blocks relabelled.
class PermutedReplay final : public Noise {
 public:
  PermutedReplay(std::deque<Array> normals, std::vector<int> perm, std::size_t rows, Noise& fallback)
      : normals_(std::move(normals)), perm_(std::move(perm)), rows_(rows), fallback_(fallback) {}
  Array normal(std::size_t r, std::size_t c) override {
    Array a = normals_.front();
    normals_.pop_front();
    if (r != rows_) return a;
    const std::size_t n = perm_.size();
    Array out(a.shape());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < c; ++k) out((i / n) * n + static_cast<std::size_t>(perm_[i % n]), k) = a(i, k);
    return out;
  }
  double uniform() override { return fallback_.uniform(); }

 private:
  std::deque<Array> normals_;
  std::vector<int> perm_;
  std::size_t rows_;
  Noise& fallback_;
};

Outcome equivariance() {
  Rng rng(5);
  ModelConfig c = tiny_model(3);
  c.vertex_attr_dim = 2;
  c.gen_flows = 1;
  c.prop_flows = 1;
  RssmModel model(c, 55);
  perturb(model.params, rng, 0.05);
  ParamStore store;
  MhaConfig mc = c.mha(5, 3, Combine::kGru);
  Gnn gnn(store, "gnn", mc, 2, rng);
  Readout ro(store, "readout", 5, 4, rng);
  FlowConfig fc = random_flow_config(3, 2, 2);
  FlowStack flow(store, "flow", fc, 2, rng);
  perturb(store, rng, 0.3);
  const Bound p(model.params), ps(store);

  std::map<std::string, double> err;
  auto track = [&](const char* k, double v) { err[k] = std::max(err[k], v); };
  const std::size_t n = 6, K = 3;
  for (int trial = 0; trial < 50; ++trial) {
    const AttributedGraph g = random_graph(static_cast<int>(n), rng, 0.4, 2);
    const auto perm = random_permutation(static_cast<int>(n), rng);
    const AttributedGraph gp = g.permuted(perm);
    const GraphBatch gb = GraphBatch::single(g), gpb = GraphBatch::single(gp);

    const Var ctx(random_array({1, 3}, rng));
    const Array h = random_array({n, 5}, rng);
    const Array gnn_a = gnn.forward(ps, gb, ctx, Var(h)).value();
    track("gnn", max_abs_diff(gnn.forward(ps, gpb, ctx, Var(permute_rows(h, perm))).value(), permute_rows(gnn_a, perm)));
    track("readout", max_abs_diff(ro.forward(ps, gpb, Var(permute_rows(h, perm))).value(), ro.forward(ps, gb, Var(h)).value()));

    const Var fctx(random_array({1, 2}, rng));
    const Array z = random_array({n, 3}, rng);
    const FlowResult fa = flow.forward(ps, gb, fctx, Var(z));
    const FlowResult fb = flow.forward(ps, gpb, fctx, Var(permute_rows(z, perm)));
    track("flow", std::max(max_abs_diff(fb.z.value(), permute_rows(fa.z.value(), perm)),
                           max_abs_diff(fb.logdet.value(), permute_rows(fa.logdet.value(), perm))));

    // One transition from a filtered state, with the vertex noise relabelled.
    const Episode ep = random_episode(g, 3, 1, rng);
    const Episode pe = permute_episode(ep, perm);
    const Var u0(Array({n, 0}));
    SplitNoise n1(trial, 1000 + trial), n2(trial, 1000 + trial);
    RecordingNoise rec(n1);
    const TransitionResult ta = model.gen.transition(p, gb, model.gen.init_state(p, gb), u0, rec);
    PermutedReplay rp(rec.normals(), perm, n, n2);
    const TransitionResult tb = model.gen.transition(p, gpb, model.gen.init_state(p, gpb), u0, rp);
    track("transition",
          std::max({max_abs_diff(tb.z_local.value(), permute_rows(ta.z_local.value(), perm)),
                    max_abs_diff(tb.logp_local.value(), permute_rows(ta.logp_local.value(), perm)),
                    max_abs_diff(tb.state.context.value(), permute_rows(ta.state.context.value(), perm)),
                    max_abs_diff(tb.z_global.value(), ta.z_global.value()),
                    max_abs_diff(tb.logp_global.value(), ta.logp_global.value())}));

    BeliefState ba = model.prop.init_belief(p, gb), bb = model.prop.init_belief(p, gpb);
    for (std::size_t t = 0; t < ep.steps(); ++t) {
      ba = model.prop.belief_update(p, gb, ba, Var(time_slice(ep.x, t)), Var(time_slice(ep.u, t)));
      bb = model.prop.belief_update(p, gpb, bb, Var(time_slice(pe.x, t)), Var(time_slice(pe.u, t)));
      track("belief", max_abs_diff(bb.B.value(), permute_rows(ba.B.value(), perm)));
      track("belief_global", max_abs_diff(bb.b_global.value(), ba.b_global.value()));
    }

    SmcOptions so;
    so.particles = K;
    SplitNoise m1(5000 + trial, 6000 + trial), m2(5000 + trial, 6000 + trial);
    RecordingNoise rec2(m1);
    const double a = model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, rec2).bound.value().item();
    PermutedReplay rp2(rec2.normals(), perm, n * K, m2);
    const double b = model.smc().estimate_bound(p, EpisodeBatch({&pe}), so, rp2).bound.value().item();
    track("bound", std::abs(a - b));
  }
  bool ok = true;
  std::string detail = "50 permutations, max errors:";
  for (const auto& [k, v] : err) {
    ok = ok && v < 1e-9;
    detail += fmt(" %s %.2e", k.c_str(), v);
  }
  return {ok, detail + " (tol 1e-9)"};
}

// ---------------------------------------------------------------------------
// 6. End-to-end gradient against central differences.

Outcome gradients() {
  ModelConfig c = tiny_model(2);
  c.gen_flows = 1;
  c.prop_flows = 1;
  c.vertex_attr_dim = 2;
  c.aux_negatives = 2;
  RssmModel model(c, 66);
  Rng rng(6);
  perturb(model.params, rng, 0.1);
  std::vector<Episode> data{random_episode(random_graph(3, rng, 0.6, 2), 4, 1, rng)};
  TrainConfig tc;
  tc.particles = 2;
  tc.batch = 1;
  tc.beta1 = 1.0;
  tc.beta2 = 1.0;
  Trainer tr(model, data, tc, 7);
  auto eval = [&] {
    Rng r(77);
    RngNoise noise(r);
    return tr.evaluate({0}, noise);
  };
  const Trainer::Evaluation base = eval();
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t scalars = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    Array& w = model.params.value(i);
    Array fd(w.shape());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double v = w[j];
      w[j] = v + h;
      const double fp = eval().objective;
      w[j] = v - h;
      const double fm = eval().objective;
      w[j] = v;
      fd[j] = (fp - fm) / (2 * h);
      ++scalars;
    }
    double num = 0, ga = 0, gf = 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      num += (base.grads[i][j] - fd[j]) * (base.grads[i][j] - fd[j]);
      ga += base.grads[i][j] * base.grads[i][j];
      gf += fd[j] * fd[j];
    }
    const double den = std::sqrt(std::max(ga, gf));
    const double rel = den < 1e-10 ? std::sqrt(num) : std::sqrt(num) / den;
    if (rel > worst) {
      worst = rel;
      worst_name = model.params.name(i);
    }
  }
  return {worst < 1e-4, fmt("%zu parameter groups, %zu scalars; worst relative error %.3e in %s (tol 1e-4)",
                            model.params.size(), scalars, worst, worst_name.c_str())};
}

// ---------------------------------------------------------------------------
// 7. Learning signal at desk scale.

double env_double(const char* name, double fallback) {
  const char* v = std::getenv(name);
  return v ? std::atof(v) : fallback;
}

struct LogRow {
  double bound, kl;
};

// train.log rows indexed by step.
std::map<std::size_t, LogRow> read_log(const fs::path& log) {
  std::map<std::size_t, LogRow> rows;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t step;
    double bound, l1, l2, k;
    if (ss >> step >> bound >> l1 >> l2 >> k) rows[step] = {bound, k};
  }
  return rows;
}

Outcome learning_signal() {
  const double budget = env_double("RSSM_ACCEPT_BUDGET", 6000.0);
  const fs::path root = work_root() / "criterion7";
  fs::create_directories(root);
  RunConfig rc = preset_config("small");
  const ToyDataset ds = generate_toy(rc.toy, 0);
  const auto n_eval = static_cast<std::size_t>(env_double("RSSM_ACCEPT_EVAL_EXAMPLES", 100));
  const std::vector<Episode> held(ds.test.episodes.begin(), ds.test.episodes.begin() + n_eval);
  const MetricsReport var = var_metrics(held, rc.eval.history);

  int mse_wins = 0, kl_ok = 0, reached = 0, rising = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path out = root / ("seed" + std::to_string(seed));
    RssmModel model(rc.model, seed);
    TrainRunOptions opt;
    opt.out = out;
    opt.resume = !latest_checkpoint(out).empty();
    opt.time_budget = budget / 5.0;
    opt.progress = &std::cerr;
    opt.progress_every = 100;
    const TrainRunResult tr = run_training(model, seed, ds.train.episodes, rc.train, 1000 + seed, opt);
    const std::size_t steps = tr.steps_done;
    reached += steps >= rc.train.steps;

    EvalOptions eo = rc.eval;
    eo.particles = 100;
    eo.mc_samples = 100;
    eo.workers = 1;
    Rng er(seed);
    const MetricsReport m = evaluate_model(model, held, eo, er);
    const bool win = m.mse_single < var.mse_single;
    mse_wins += win;

    // KL monitor: 50-step running mean after step 1000.
    const auto log = read_log(out / "train.log");
    double min_kl = std::numeric_limits<double>::infinity();
    for (auto it = log.lower_bound(1001); it != log.end(); ++it) {
      double s = 0;
      int cnt = 0;
      for (auto jt = it; jt != log.begin() && cnt < 50; --jt, ++cnt) s += jt->second.kl;
      min_kl = std::min(min_kl, s / cnt);
    }
    // Bound over steps 181..200 against steps 1..20.
    if (log.count(200)) {
      double early = 0, late = 0;
      for (std::size_t t = 1; t <= 20; ++t) early += log.at(t).bound;
      for (std::size_t t = 181; t <= 200; ++t) late += log.at(t).bound;
      rising += late > early;
    }
    const bool kl_pass = steps > 1000 && min_kl > 0.05;
    kl_ok += kl_pass;
    detail += fmt(" seed%llu[steps %zu, mse1 %.4f, min KL %s]", static_cast<unsigned long long>(seed), steps,
                  m.mse_single, steps > 1000 ? fmt("%.3f", min_kl).c_str() : "n/a");
  }
  const bool ok = reached == 5 && mse_wins >= 4 && kl_ok >= 4;
  return {ok, fmt("seeds at %zu steps: %d/5; one-step MSE below VAR (%.4f): %d/5; KL > 0.05 after step 1000: %d/5; "
                  "bound rose over the first 200 steps: %d/5;",
                  rc.train.steps, reached, var.mse_single, mse_wins, kl_ok, rising) +
                  detail};
}

// ---------------------------------------------------------------------------
// 8. File formats and resume.

std::map<std::string, std::vector<unsigned char>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<unsigned char>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
  return out;
}

Outcome formats() {
  const fs::path root = work_root() / "criterion8";
  fs::remove_all(root);
  fs::create_directories(root);
  RunConfig rc = preset_config("small");
  const ToyDataset ds = generate_toy(rc.toy, 8);
  write_dataset(root / "data_a", ds);
  write_dataset(root / "data_b", read_dataset(root / "data_a"));
  const bool data_same = snapshot(root / "data_a") == snapshot(root / "data_b");

  TrainConfig tc = rc.train;
  tc.steps = 4;
  tc.checkpoint_every = 2;
  RssmModel full(rc.model, 3);
  TrainRunOptions oa;
  oa.out = root / "run_a";
  const TrainRunResult ra = run_training(full, 3, ds.train.episodes, tc, 4, oa);

  write_checkpoint(root / "ckpt_copy", read_checkpoint(root / "run_a" / "ckpt-0000002"));
  const bool ckpt_same = snapshot(root / "run_a" / "ckpt-0000002") == snapshot(root / "ckpt_copy");

  // Resume from the step-2 checkpoint in a fresh run directory.
  fs::create_directories(root / "run_b");
  fs::copy(root / "run_a" / "ckpt-0000002", root / "run_b" / "ckpt-0000002", fs::copy_options::recursive);
  RssmModel other(rc.model, 99);
  TrainRunOptions ob;
  ob.out = root / "run_b";
  ob.resume = true;
  const TrainRunResult rb = run_training(other, 99, ds.train.episodes, tc, 4, ob);
  double diff = std::numeric_limits<double>::infinity();
  if (rb.stats.size() == 2 && ra.stats.size() == 4)
    diff = std::max(std::abs(rb.stats[0].bound - ra.stats[2].bound), std::abs(rb.stats[1].bound - ra.stats[3].bound));
  const bool ok = data_same && ckpt_same && diff < 1e-8;
  return {ok, fmt("dataset round trip %s, checkpoint round trip %s, resumed bound difference %.3e (tol 1e-8)",
                  data_same ? "identical" : "DIFFERS", ckpt_same ? "identical" : "DIFFERS", diff)};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"VAR baseline reproduction", var_baseline}, {"SMC unbiasedness", smc_unbiased},
    {"ELBO identity", elbo_identity},            {"flow correctness", flow_correctness},
    {"equivariance suite", equivariance},        {"gradient suite", gradients},
    {"desk-scale learning signal", learning_signal}, {"format round-trips", formats},
};

}  // namespace

int main(int argc, char** argv) {
  const std::string which = argc > 1 ? argv[1] : "all";
  bool all_pass = true;
  for (int i = 1; i <= 8; ++i) {
    if (which != "all" && which != std::to_string(i)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = kCriteria[i - 1].run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << i << " " << (o.pass ? "PASS" : "FAIL") << " " << kCriteria[i - 1].name << ": "
              << o.detail << " [" << fmt("%.1f", sec) << " s]" << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
