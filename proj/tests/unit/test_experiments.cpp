#include <numbers>

#include "helpers.hpp"

using namespace rssm;
using namespace rssm::testing;

TEST(Toy, DegenerateDynamicsAreConstant) {
  ToyConfig c = ToyConfig::small();
  c.alpha1 = c.alpha2 = 0.0;
  c.eta.assign(4, 0.0);
  c.sigma_x = c.sigma_z = 0.0;
  Rng rng(1);
  const Episode ep = generate_toy_example(c, rng);
  for (double v : ep.x.vec()) EXPECT_NEAR(v, 0.986614298151430, 1e-12);
}

TEST(Toy, ShapesAndSplits) {
  ToyConfig c = ToyConfig::small();
  c.n_train = 3;
  c.n_valid = 2;
  c.n_test = 1;
  const ToyDataset ds = generate_toy(c, 5, true);
  EXPECT_EQ(ds.train.episodes.size(), 3u);
  EXPECT_EQ(ds.valid.episodes.size(), 2u);
  EXPECT_EQ(ds.test.episodes.size(), 1u);
  EXPECT_EQ(ds.train.latents.size(), 3u);
  const Episode& ep = ds.train.episodes[0];
  EXPECT_EQ(ep.x.shape(), (Shape{40, 12, 1}));
  EXPECT_EQ(ep.u.shape(), (Shape{40, 12, 0}));
  EXPECT_EQ(ep.graph->vertex_attr_dim(), 4u);
  // x is tanh(eps z) + noise given the stored latents.
  for (std::size_t i = 0; i < ep.x.size(); ++i)
    EXPECT_LT(std::abs(ep.x[i] - std::tanh(2.5 * ds.train.latents[0][i])), 6 * 0.05);
  EXPECT_THROW(ds.split("bogus"), std::invalid_argument);
}

TEST(Toy, SameSeedSameData) {
  ToyConfig c = ToyConfig::small();
  c.n_train = c.n_valid = c.n_test = 2;
  const ToyDataset a = generate_toy(c, 9), b = generate_toy(c, 9), d = generate_toy(c, 10);
  EXPECT_EQ(a.test.episodes[1].x, b.test.episodes[1].x);
  EXPECT_NE(a.test.episodes[1].x, d.test.episodes[1].x);
}

TEST(Toy, RejectsBadConfig) {
  ToyConfig c;
  c.eta = {1.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ToyConfig();
  c.n_communities = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Toy, FirstObservationMatchesIndependentSimulation) {
  // Moments of x_1 pooled over vertices and examples, against a separate
  // simulation of the same generative process.
  ToyConfig c = ToyConfig::small();
  c.steps = 1;
  const int examples = 1500;
  Rng rng(2);
  std::vector<double> a;
  for (int e = 0; e < examples; ++e) {
    const Episode ep = generate_toy_example(c, rng);
    for (double v : ep.x.vec()) a.push_back(v);
  }
  std::vector<double> b;
  Rng r2(3);
  std::uniform_real_distribution<double> unif;
  std::normal_distribution<double> nrm;
  const int n = c.n_vertices, per = n / c.n_communities;
  for (int e = 0; e < examples; ++e) {
    std::vector<std::vector<int>> in(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && unif(r2) < (i / per == j / per ? c.p_within : c.p_between)) in[j].push_back(i);
    std::vector<double> drift(n), z(n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 4; ++k) drift[i] += c.eta[k] * nrm(r2);
    for (double& v : z) v = nrm(r2);
    for (int i = 0; i < n; ++i) {
      double m = 0;
      for (int j : in[i]) m += z[j];
      if (!in[i].empty()) m /= static_cast<double>(in[i].size());
      const double z1 = std::cos(drift[i] + c.alpha1 * m + c.alpha2 * z[i]) + c.sigma_z * nrm(r2);
      b.push_back(std::tanh(c.epsilon * z1) + c.sigma_x * nrm(r2));
    }
  }
  auto moments = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(v.size() - 1))};
  };
  const auto [ma, sa] = moments(a);
  const auto [mb, sb] = moments(b);
  const double se = std::sqrt(sa * sa / a.size() + sb * sb / b.size());
  EXPECT_NEAR(ma, mb, 4 * se);
  EXPECT_NEAR(sa, sb, 0.03 * sb);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.05), 1.2);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.95), 7);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(PredictionScore, GaussianInterval) {
  PredictionScore s;
  s.add_gaussian(0.0, 1.0, 1.6, true);
  s.add_gaussian(0.0, 1.0, 1.7, false);
  EXPECT_DOUBLE_EQ(s.mse(), (1.6 * 1.6 + 1.7 * 1.7) / 2);
  EXPECT_DOUBLE_EQ(s.cp(), 0.5);
  EXPECT_DOUBLE_EQ(s.cp_single(), 1.0);
  EXPECT_DOUBLE_EQ(s.mse_single(), 1.6 * 1.6);
}

TEST(PredictionScore, MergeEqualsSequential) {
  PredictionScore a, b, all;
  const double v[][3] = {{0.1, 1, 0.5}, {0.3, 2, -1}, {-1, 0.5, 0}};
  for (int i = 0; i < 3; ++i) {
    (i < 2 ? a : b).add_gaussian(v[i][0], v[i][1], v[i][2], i == 0);
    all.add_gaussian(v[i][0], v[i][1], v[i][2], i == 0);
  }
  a.merge(b);
  EXPECT_DOUBLE_EQ(a.mse(), all.mse());
  EXPECT_DOUBLE_EQ(a.cp(), all.cp());
}

TEST(Var, RecoversNoiselessDynamics) {
  Rng rng(4);
  const std::size_t D = 3, T = 12;
  const Array A = random_array({D, D}, rng, 0.6);
  const Array b = random_array({1, D}, rng);
  Array x({T, D, 1});
  for (std::size_t k = 0; k < D; ++k) x[k] = random_array({1, 1}, rng).item();
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i) {
      double v = b[i];
      for (std::size_t j = 0; j < D; ++j) v += A(i, j) * x[(t - 1) * D + j];
      x[t * D + i] = v;
    }
  const VarFit fit = fit_var(x, T);
  EXPECT_FALSE(fit.ridge);
  EXPECT_LT(max_abs_diff(fit.A, A), 1e-6);
  EXPECT_LT(max_abs_diff(fit.b, b), 1e-6);
}

TEST(Var, SingularDesignFallsBackToRidge) {
  Array x({10, 2, 1}, 1.0);  // constant series
  const VarFit fit = fit_var(x, 10);
  EXPECT_TRUE(fit.ridge);
  EXPECT_TRUE(fit.A.all_finite());
}

TEST(Var, MetricsOnKnownSeries) {
  // Two-point alternating series: fitted exactly; variance floors at 1e-12.
  Array x({6, 1, 1});
  for (std::size_t t = 0; t < 6; ++t) x[t] = t % 2 ? 1.0 : -1.0;
  Episode ep{std::make_shared<AttributedGraph>(1, std::vector<Edge>{}), x, Array({6, 1, 0})};
  const MetricsReport r = var_metrics({ep}, 4);
  EXPECT_LT(r.mse, 1e-12);
  EXPECT_DOUBLE_EQ(r.cp, 1.0);
}

TEST(Kalman, SingleStepIsGaussian) {
  LgssmParams p;
  p.m0 = 0.3;
  p.v0 = 2.0;
  p.c = 1.5;
  p.r = 0.2;
  const double s = p.c * p.c * p.v0 + p.r, e = 1.1 - p.c * p.m0;
  EXPECT_NEAR(kalman_loglik(p, {1.1}), -0.5 * std::log(2 * std::numbers::pi * s) - 0.5 * e * e / s, 1e-14);
}

TEST(Kalman, MatchesGridQuadrature) {
  const LgssmParams p{0.8, 0.3, 1.2, 0.4, 0.5, 1.5};
  const std::vector<double> x{0.2, -0.7, 1.3};
  // Forward algorithm on a fine grid.
  const double lo = -12, hi = 12;
  const int n = 2401;
  const double h = (hi - lo) / (n - 1);
  auto npdf = [](double v, double m, double var) {
    return std::exp(-0.5 * (v - m) * (v - m) / var) / std::sqrt(2 * std::numbers::pi * var);
  };
  std::vector<double> alpha(n), next(n);
  for (int i = 0; i < n; ++i) {
    const double z = lo + i * h;
    alpha[i] = npdf(z, p.m0, p.v0) * npdf(x[0], p.c * z, p.r);
  }
  for (std::size_t t = 1; t < x.size(); ++t) {
    for (int j = 0; j < n; ++j) {
      const double zj = lo + j * h;
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += alpha[i] * npdf(zj, p.a * (lo + i * h), p.q) * h;
      next[j] = acc * npdf(x[t], p.c * zj, p.r);
    }
    alpha.swap(next);
  }
  double total = 0;
  for (double v : alpha) total += v * h;
  EXPECT_NEAR(kalman_loglik(p, x), std::log(total), 1e-4);
}

TEST(Kalman, RejectsNonPositiveVariances) {
  LgssmParams p;
  p.q = 0;
  EXPECT_THROW(kalman_loglik(p, {0.0}), std::invalid_argument);
}

TEST(Oracle, CoverageNearNominal) {
  ToyConfig c = ToyConfig::small();
  c.n_train = c.n_valid = 0;
  c.n_test = 1000;
  const ToyDataset ds = generate_toy(c, 11, true);
  Rng rng(12);
  const MetricsReport r = oracle_toy_metrics(c, ds.test, 500, c.steps - 5, rng);
  EXPECT_GE(r.cp, 0.88);
  EXPECT_LE(r.cp, 0.92);
}

TEST(LearningRate, ScheduleEndpoints) {
  EXPECT_DOUBLE_EQ(linear_cosine_lr(1e-3, 1e-5, 0, 100), 1e-3 * (1 + 1e-5));
  EXPECT_DOUBLE_EQ(linear_cosine_lr(1e-3, 1e-5, 100, 100), 1e-3 * 1e-5);
  EXPECT_NEAR(linear_cosine_lr(1e-3, 1e-5, 50, 100), 1e-3 * (0.25 + 1e-5), 1e-18);
  double prev = 1.0;
  for (std::size_t s = 0; s <= 100; ++s) {
    const double v = linear_cosine_lr(1e-3, 1e-5, s, 100);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

namespace {

std::vector<Episode> small_data(std::size_t n, Rng& rng) {
  std::vector<Episode> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_episode(random_graph(4, rng), 4, 1, rng));
  return out;
}

TrainConfig small_train() {
  TrainConfig t;
  t.steps = 10;
  t.batch = 2;
  t.particles = 2;
  t.lr = 1e-2;
  return t;
}

}  // namespace

TEST(Trainer, ZeroLearningRateLeavesParameters) {
  Rng rng(13);
  const auto data = small_data(4, rng);
  RssmModel model(tiny_model(), 1);
  TrainConfig t = small_train();
  t.lr = 0.0;
  Trainer tr(model, data, t, 2);
  std::vector<Array> before;
  for (std::size_t i = 0; i < model.params.size(); ++i) before.push_back(model.params.value(i));
  for (int s = 0; s < 3; ++s) tr.step();
  for (std::size_t i = 0; i < model.params.size(); ++i) EXPECT_EQ(model.params.value(i), before[i]);
  EXPECT_EQ(tr.steps_done(), 3u);
}

TEST(Trainer, ZeroAuxWeightsGiveBoundGradient) {
  Rng rng(14);
  const auto data = small_data(3, rng);
  RssmModel model(tiny_model(), 1);
  TrainConfig t = small_train();
  t.beta1 = t.beta2 = 0.0;
  Trainer tr(model, data, t, 2);
  Rng r1(5);
  RngNoise n1(r1);
  const Trainer::Evaluation ev = tr.evaluate({0, 2}, n1);
  Tape tape;
  std::vector<Array> g;
  {
    Tape::Scope scope(tape);
    const Bound p(model.params, tape);
    Rng r2(5);
    RngNoise n2(r2);
    SmcOptions so;
    so.particles = 2;
    so.keep_particles = false;
    const BoundResult br = model.smc().estimate_bound(p, EpisodeBatch({&data[0], &data[2]}), so, n2);
    g = tape.gradient(br.bound, p.vars());
  }
  ASSERT_EQ(g.size(), ev.grads.size());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(max_abs_diff(g[i], ev.grads[i]), 1e-12) << model.params.name(i);
  EXPECT_EQ(ev.objective, ev.bound);
}

TEST(Trainer, AuxWeightsChangeTheObjective) {
  Rng rng(15);
  const auto data = small_data(3, rng);
  RssmModel model(tiny_model(), 1);
  Trainer tr(model, data, small_train(), 2);
  Rng r(6);
  RngNoise noise(r);
  const Trainer::Evaluation ev = tr.evaluate({0, 1}, noise);
  EXPECT_NEAR(ev.objective, ev.bound + ev.l1 + ev.l2, 1e-10);
  EXPECT_LT(ev.l1, 0.0);
}

TEST(Trainer, GradientClippingBoundsTheUpdate) {
  EXPECT_DOUBLE_EQ(global_norm({Array::matrix(1, 2, {3, 0}), Array::matrix(1, 1, {4})}), 5.0);
}

TEST(Trainer, SameSeedSameTrajectory) {
  Rng rng(16);
  const auto data = small_data(4, rng);
  auto run = [&] {
    RssmModel model(tiny_model(), 1);
    Trainer tr(model, data, small_train(), 2);
    std::vector<double> b;
    for (int s = 0; s < 3; ++s) b.push_back(tr.step().bound);
    return b;
  };
  EXPECT_EQ(run(), run());
}

TEST(Evaluate, WorkerCountDoesNotChangeResults) {
  Rng rng(17);
  const auto data = small_data(5, rng);
  RssmModel model(tiny_model(), 1);
  EvalOptions o;
  o.particles = 4;
  o.mc_samples = 10;
  o.history = 3;
  o.batch = 2;
  auto run = [&](std::size_t w) {
    o.workers = w;
    Rng r(3);
    return evaluate_model(model, data, o, r);
  };
  const MetricsReport a = run(1), b = run(3);
  EXPECT_EQ(a.ll, b.ll);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.cp, b.cp);
  EXPECT_TRUE(std::isfinite(a.ll));
  EXPECT_EQ(a.n_examples, 5u);
}

TEST(Rollout, ConditionedShapeAndPrefix) {
  Rng rng(18);
  const auto data = small_data(1, rng);
  RssmModel model(tiny_model(), 1);
  RngNoise noise(rng);
  const Array r = conditioned_rollout(model, data[0], 2, 3, 4, noise);
  ASSERT_EQ(r.shape(), (Shape{3, 4, 4, 1}));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 2 * 4; ++i) EXPECT_EQ(r[k * 16 + i], data[0].x[i]);
  EXPECT_TRUE(r.all_finite());
}
