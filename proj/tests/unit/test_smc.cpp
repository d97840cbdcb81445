#include "helpers.hpp"

using namespace rssm;
using namespace rssm::testing;

namespace {

// Fixed uniforms, normals from an rng.
class FixedUniform final : public Noise {
 public:
  FixedUniform(std::vector<double> u, Rng& rng) : u_(std::move(u)), inner_(rng) {}
  Array normal(std::size_t r, std::size_t c) override { return inner_.normal(r, c); }
  double uniform() override { return u_.at(i_++ % u_.size()); }

 private:
  std::vector<double> u_;
  std::size_t i_ = 0;
  RngNoise inner_;
};

// Normals and uniforms from separate streams.
class SplitNoise final : public Noise {
 public:
  SplitNoise(std::uint64_t normal_seed, std::uint64_t uniform_seed) : a_(normal_seed), b_(uniform_seed) {}
  Array normal(std::size_t r, std::size_t c) override { return RngNoise(a_).normal(r, c); }
  double uniform() override { return RngNoise(b_).uniform(); }

 private:
  Rng a_, b_;
};

// Replays normals, moving row i of every R-row draw to row perm'[i], where
// perm' applies `perm` within each block of n rows.
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
      for (std::size_t k = 0; k < c; ++k) out((i / n) * n + perm_[i % n], k) = a(i, k);
    return out;
  }
  double uniform() override { return fallback_.uniform(); }

 private:
  std::deque<Array> normals_;
  std::vector<int> perm_;
  std::size_t rows_;
  Noise& fallback_;
};

}  // namespace

TEST(Resample, OneHotWeights) {
  Rng rng(1);
  RngNoise noise(rng);
  const double ninf = -std::numeric_limits<double>::infinity();
  for (auto scheme : {ResampleScheme::kSystematic, ResampleScheme::kMultinomial}) {
    const auto a = resample({ninf, 0.0, ninf, ninf}, noise, scheme);
    for (int v : a) EXPECT_EQ(v, 1);
  }
}

TEST(Resample, SystematicUniformWeightsIsIdentity) {
  Rng rng(2);
  FixedUniform noise({0.5}, rng);
  EXPECT_EQ(resample({0.3, 0.3, 0.3, 0.3, 0.3}, noise), (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(Resample, SystematicCountsAreFloorOrCeil) {
  Rng rng(3);
  RngNoise noise(rng);
  const std::vector<double> lw{std::log(0.1), std::log(0.25), std::log(0.4), std::log(0.25)};
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = resample(lw, noise);
    std::vector<int> n(4);
    for (int v : a) ++n[v];
    const double expect[] = {0.4, 1.0, 1.6, 1.0};
    for (int i = 0; i < 4; ++i) {
      EXPECT_GE(n[i], std::floor(expect[i]));
      EXPECT_LE(n[i], std::ceil(expect[i]));
    }
  }
}

TEST(Resample, MultinomialFrequencies) {
  Rng rng(4);
  RngNoise noise(rng);
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  std::vector<double> lw;
  for (double v : p) lw.push_back(std::log(v) + 7.0);  // unnormalized
  std::vector<double> n(4);
  const int draws = 100000;
  for (int i = 0; i < draws / 4; ++i)
    for (int v : resample(lw, noise, ResampleScheme::kMultinomial)) ++n[v];
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(n[i] / draws, p[i], 4 * std::sqrt(p[i] * (1 - p[i]) / draws));
}

TEST(Resample, RejectsDegenerateWeights) {
  Rng rng(5);
  RngNoise noise(rng);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(resample({-inf, -inf}, noise), NumericError);
  EXPECT_THROW(resample({0.0, std::nan("")}, noise), NumericError);
  EXPECT_THROW(resample({}, noise), std::invalid_argument);
}

TEST(LogMeanExp, Examples) {
  EXPECT_NEAR(log_mean_exp({0.0, std::log(3.0)}), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_mean_exp({1000.0, 1000.0}), 1000.0, 1e-12);
  EXPECT_NEAR(log_mean_exp({-1000.0, -1000.0 + std::log(3.0)}), -1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(log_mean_exp({-std::numeric_limits<double>::infinity()}), -std::numeric_limits<double>::infinity());
}

TEST(Filter, LgssmLargeParticleCountMatchesKalman) {
  const LgssmParams prm;
  Rng rng(6);
  const auto x = sample_lgssm(prm, 20, rng);
  LgssmTarget target(prm, x);
  RngNoise noise(rng);
  const double ll = run_filter(target, x.size(), 20000, noise).log_likelihood;
  EXPECT_NEAR(ll, kalman_loglik(prm, x), 0.05);
}

TEST(Filter, LgssmLikelihoodEstimateIsUnbiased) {
  const LgssmParams prm;
  Rng rng(7);
  const auto x = sample_lgssm(prm, 5, rng);
  const double exact = kalman_loglik(prm, x);
  const int seeds = 500;
  std::vector<double> ratio;
  for (int s = 0; s < seeds; ++s) {
    Rng r(1000 + s);
    RngNoise noise(r);
    LgssmTarget target(prm, x);
    ratio.push_back(std::exp(run_filter(target, x.size(), 8, noise).log_likelihood - exact));
  }
  double m = 0, v = 0;
  for (double z : ratio) m += z;
  m /= seeds;
  for (double z : ratio) v += (z - m) * (z - m);
  const double se = std::sqrt(v / (seeds - 1) / seeds);
  EXPECT_NEAR(m, 1.0, 3 * se);
}

namespace {

struct SmcFixture {
  explicit SmcFixture(ModelConfig c = tiny_model()) : model(c, 31) {
    Rng rng(32);
    perturb(model.params, rng, 0.05);
  }
  RssmModel model;
};

// Single-particle bound written out step by step from the model pieces.
double manual_elbo(const RssmModel& m, const Bound& p, const Episode& ep, Noise& noise) {
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

}  // namespace

TEST(Vsmc, SingleParticleEqualsElbo) {
  ModelConfig c = tiny_model(3);
  c.gen_flows = 1;
  c.prop_flows = 1;
  SmcFixture f(c);
  Rng rng(8);
  const Episode ep = random_episode(random_graph(4, rng), 4, 1, rng);
  const Bound p(f.model.params);
  RngNoise noise(rng);
  RecordingNoise rec(noise);
  SmcOptions so;
  so.particles = 1;
  const BoundResult br = f.model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, rec);
  ReplayNoise replay(rec.normals(), noise);
  EXPECT_NEAR(br.bound.value().item(), manual_elbo(f.model, p, ep, replay), 1e-10);
}

TEST(Vsmc, BootstrapWithoutObservationsIsZero) {
  SmcFixture f;
  Rng rng(9);
  const Episode ep = random_episode(random_graph(4, rng), 5, 1, rng);
  const Bound p(f.model.params);
  RngNoise noise(rng);
  SmcOptions so;
  so.particles = 3;
  so.bootstrap_proposal = true;
  so.weight_observations = false;
  const BoundResult br = f.model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, noise);
  EXPECT_EQ(br.bound.value().item(), 0.0);
  EXPECT_EQ(br.kl_estimate, 0.0);
}

TEST(Vsmc, PerExampleBoundsAddUp) {
  SmcFixture f;
  Rng rng(10);
  const Episode a = random_episode(random_graph(3, rng), 4, 1, rng);
  const Episode b = random_episode(random_graph(5, rng), 4, 1, rng);
  const Bound p(f.model.params);
  RngNoise noise(rng);
  SmcOptions so;
  so.particles = 3;
  const BoundResult br = f.model.smc().estimate_bound(p, EpisodeBatch({&a, &b}), so, noise);
  ASSERT_EQ(br.per_step.shape(), (Shape{4, 2}));
  for (std::size_t e = 0; e < 2; ++e) {
    double s = 0.0;
    for (std::size_t t = 0; t < 4; ++t) s += br.per_step(t, e);
    EXPECT_NEAR(s, br.per_example[e], 1e-10);
  }
  EXPECT_NEAR(br.bound.value().item(), 0.5 * (br.per_example[0] + br.per_example[1]), 1e-10);
  EXPECT_EQ(br.ancestors.size(), 3u);
  EXPECT_EQ(br.particles.size(), 3u);
}

TEST(Vsmc, FrozenNoiseReproducesBoundAndAncestors) {
  SmcFixture f;
  Rng grng(11);
  const Episode ep = random_episode(random_graph(4, grng), 5, 1, grng);
  const Bound p(f.model.params);
  SmcOptions so;
  so.particles = 4;
  auto run = [&] {
    Rng rng(77);
    RngNoise noise(rng);
    return f.model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, noise);
  };
  const BoundResult a = run(), b = run();
  EXPECT_EQ(a.bound.value().item(), b.bound.value().item());
  EXPECT_EQ(a.ancestors, b.ancestors);
}

TEST(Vsmc, BoundInvariantToVertexRelabelling) {
  SmcFixture f;
  Rng rng(12);
  const Bound p(f.model.params);
  const std::size_t n = 5, K = 3;
  SmcOptions so;
  so.particles = K;
  for (int trial = 0; trial < 5; ++trial) {
    const Episode ep = random_episode(random_graph(static_cast<int>(n), rng), 4, 1, rng);
    const auto perm = random_permutation(static_cast<int>(n), rng);
    const Episode pe = permute_episode(ep, perm);
    SplitNoise n1(500 + trial, 900 + trial), n2(500 + trial, 900 + trial);
    RecordingNoise rec(n1);
    const double a = f.model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, rec).bound.value().item();
    PermutedReplay replay(rec.normals(), perm, n * K, n2);
    const double b = f.model.smc().estimate_bound(p, EpisodeBatch({&pe}), so, replay).bound.value().item();
    EXPECT_NEAR(a, b, 1e-9);
  }
}

TEST(Vsmc, BoundGradientMatchesFiniteDifferences) {
  SmcFixture f;
  Rng rng(13);
  const Episode ep = random_episode(random_graph(3, rng), 3, 1, rng);
  SmcOptions so;
  so.particles = 1;  // no resampling, so the bound is smooth in the parameters
  auto bound = [&](const ParamStore& store, Tape* tape) {
    Rng r(99);
    RngNoise noise(r);
    const Bound p = tape ? Bound(store, *tape) : Bound(store);
    return f.model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, noise).bound;
  };
  Tape tape;
  std::vector<Array> g;
  {
    Tape::Scope scope(tape);
    const Bound p(f.model.params, tape);
    Rng r(99);
    RngNoise noise(r);
    const Var b = f.model.smc().estimate_bound(p, EpisodeBatch({&ep}), so, noise).bound;
    g = tape.gradient(b, p.vars());
  }
  for (const char* name : {"gen.obs.mean2.w", "prop.local_head.mean2.b", "gen.init.z_local"}) {
    const std::size_t i = *f.model.params.find(name);
    Array& w = f.model.params.value(i);
    for (std::size_t j = 0; j < std::min<std::size_t>(w.size(), 3); ++j) {
      const double v = w[j];
      w[j] = v + 1e-6;
      const double fp = bound(f.model.params, nullptr).value().item();
      w[j] = v - 1e-6;
      const double fm = bound(f.model.params, nullptr).value().item();
      w[j] = v;
      EXPECT_NEAR(g[i][j], (fp - fm) / 2e-6, 1e-5 * (1 + std::abs(g[i][j]))) << name << "[" << j << "]";
    }
  }
}
