#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "rssm/experiments.hpp"

namespace rssm {

RssmModel::RssmModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  Rng rng(seed);
  gen = GenerativeModel(params, cfg, rng, "gen");
  prop = ProposalModel(params, cfg, rng, "prop");
  aux = AuxModel(params, cfg, rng, "aux");
}

ModelConfig toy_model_config() {
  ModelConfig c;
  c.vertex_attr_dim = 4;
  return c;
}

namespace {

void require_finite(const ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params.value(i).all_finite()) throw NumericError("parameter '" + params.name(i) + "' is not finite");
}

// Indices drawn from the normalized weights of one example's particles.
std::vector<int> draw_particles(const std::vector<double>& log_weights, std::size_t first, std::size_t K,
                                std::size_t n, Noise& noise) {
  std::vector<double> lw(log_weights.begin() + first, log_weights.begin() + first + K);
  const double m = *std::max_element(lw.begin(), lw.end());
  std::vector<double> cdf(K);
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k) cdf[k] = acc += std::exp(lw[k] - m);
  std::vector<int> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = noise.uniform() * acc;
    out[j] = static_cast<int>(std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), K - 1));
  }
  return out;
}

// State of the chosen particles (segments `segments` of the snapshot graph),
// laid out on a graph with one segment per choice.
ModelState pick_state(const ModelState& s, const GraphBatch& from, const std::vector<int>& segments,
                      std::size_t n_vertices) {
  std::vector<int> rows;
  rows.reserve(segments.size() * n_vertices);
  for (int seg : segments)
    for (std::size_t v = 0; v < n_vertices; ++v) rows.push_back(from.segment_offset()[seg] + static_cast<int>(v));
  return gather_state(s, rows, segments);
}

Var tile_rows(const Array& rows_nd, std::size_t copies) {
  const std::size_t n = rows_nd.rows();
  std::vector<int> idx(copies * n);
  for (std::size_t j = 0; j < copies; ++j)
    for (std::size_t v = 0; v < n; ++v) idx[j * n + v] = static_cast<int>(v);
  return gather_rows(Var(rows_nd), std::move(idx));
}

}  // namespace

MetricsReport evaluate_model(const RssmModel& model, const std::vector<Episode>& episodes, const EvalOptions& opt,
                             Rng& rng) {
  require_finite(model.params);
  if (opt.particles == 0 || opt.mc_samples == 0 || opt.batch == 0)
    throw std::invalid_argument("evaluate_model: particles, mc_samples and batch must be positive");
  const Bound p(model.params);
  const RssmSmc smc = model.smc();
  const std::size_t K = opt.particles, M = opt.mc_samples, dx = model.config.x_dim;
  SmcOptions so;
  so.particles = K;
  so.keep_particles = false;
  const std::uint64_t base = rng();

  const std::size_t n_chunks = (episodes.size() + opt.batch - 1) / opt.batch;
  std::vector<PredictionScore> scores(n_chunks);
  std::vector<double> lls(n_chunks, 0.0);
  std::vector<std::exception_ptr> errors(n_chunks);

  auto run_chunk = [&](std::size_t c) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(static_cast<std::uint64_t>(c) >> 32)};
    Rng chunk_rng(seq);
    RngNoise noise(chunk_rng);
    PredictionScore& score = scores[c];
    std::vector<const Episode*> chunk;
    for (std::size_t i = c * opt.batch; i < std::min(episodes.size(), (c + 1) * opt.batch); ++i)
      chunk.push_back(&episodes[i]);
    EpisodeBatch batch(chunk);
    const std::size_t T = batch.steps();

    auto observer = [&](const FilterSnapshot& snap) {
      const std::size_t t = snap.step + 1;  // step being predicted
      if (t < opt.history || t >= T) return;
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        const Episode& ep = *chunk[b];
        const std::size_t n = ep.n_vertices();
        std::vector<int> picks = draw_particles(snap.log_weights, b * K, K, M, noise);
        for (int& k : picks) k += static_cast<int>(b * K);
        const GraphBatch gp({ep.graph.get()}, {static_cast<int>(M)});
        ModelState s = pick_state(*snap.state, *snap.graph, picks, n);
        TransitionResult tr = model.gen.transition(p, gp, s, tile_rows(time_slice(ep.u, t), M), noise);
        Array x = model.gen.observation(p, gp, tr.state).sample(noise);
        const Array truth = time_slice(ep.x, t);
        for (std::size_t v = 0; v < n; ++v)
          for (std::size_t d = 0; d < dx; ++d) {
            std::vector<double> samples(M);
            for (std::size_t j = 0; j < M; ++j) samples[j] = x(j * n + v, d);
            score.add_samples(std::move(samples), truth(v, d), t == opt.history);
          }
      }
    };
    BoundResult br = smc.estimate_bound(p, batch, so, noise, observer);
    for (double v : br.per_example.vec()) lls[c] += v;
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c; (c = next++) < n_chunks;) {
      try {
        run_chunk(c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(opt.workers, 1), std::max<std::size_t>(n_chunks, 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_threads; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  MetricsReport rep;
  PredictionScore score;
  double ll = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    score.merge(scores[c]);
    ll += lls[c];
  }
  rep.n_examples = episodes.size();
  rep.ll = episodes.empty() ? 0.0 : ll / static_cast<double>(episodes.size());
  rep.mse = score.mse();
  rep.cp = score.cp();
  rep.mse_single = score.mse_single();
  rep.cp_single = score.cp_single();
  rep.mc_samples = M;
  rep.particles = K;
  return rep;
}

MetricsReport oracle_toy_metrics(const ToyConfig& cfg, const ToySplit& split, std::size_t mc_samples,
                                 std::size_t history, Rng& rng) {
  if (split.latents.size() != split.episodes.size())
    throw std::invalid_argument("oracle_toy_metrics: split was generated without latents");
  std::normal_distribution<double> normal(0.0, 1.0);
  PredictionScore score;
  for (std::size_t e = 0; e < split.episodes.size(); ++e) {
    const Episode& ep = split.episodes[e];
    const Array& z = split.latents[e];
    const AttributedGraph& g = *ep.graph;
    const std::size_t n = ep.n_vertices();
    for (std::size_t t = std::max<std::size_t>(history, 1); t < ep.steps(); ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& nb = g.in_neighbors(static_cast<int>(i));
        double nm = 0.0;
        for (int j : nb) nm += z[(t - 1) * n + j];
        if (!nb.empty()) nm /= static_cast<double>(nb.size());
        double drift = 0.0;
        for (std::size_t k = 0; k < cfg.covariate_dim; ++k) drift += cfg.eta[k] * g.vertex_attrs()(i, k);
        const double mu = std::cos(drift + cfg.alpha1 * nm + cfg.alpha2 * z[(t - 1) * n + i]);
        std::vector<double> samples(mc_samples);
        for (double& s : samples)
          s = std::tanh(cfg.epsilon * (mu + cfg.sigma_z * normal(rng))) + cfg.sigma_x * normal(rng);
        score.add_samples(std::move(samples), ep.x[t * n + i], t == history);
      }
    }
  }
  MetricsReport rep;
  rep.n_examples = split.episodes.size();
  rep.mse = score.mse();
  rep.cp = score.cp();
  rep.mse_single = score.mse_single();
  rep.cp_single = score.cp_single();
  rep.mc_samples = mc_samples;
  return rep;
}

Array conditioned_rollout(const RssmModel& model, const Episode& episode, std::size_t burn_in, std::size_t n_rollouts,
                          std::size_t particles, Noise& noise) {
  const std::size_t T = episode.steps(), n = episode.n_vertices(), dx = model.config.x_dim;
  if (burn_in > T) throw std::invalid_argument("rollout: burn-in exceeds the episode length");
  if (n_rollouts == 0) throw std::invalid_argument("rollout: need at least one rollout");
  const Bound p(model.params);
  const GraphBatch g({episode.graph.get()}, {static_cast<int>(n_rollouts)});
  ModelState s = model.gen.init_state(p, g);
  Array out({n_rollouts, T, n, dx});

  if (burn_in > 0) {
    Episode prefix{episode.graph, Array({burn_in, n, dx}), Array({burn_in, n, episode.u.shape()[2]})};
    std::copy(episode.x.data(), episode.x.data() + prefix.x.size(), prefix.x.data());
    std::copy(episode.u.data(), episode.u.data() + prefix.u.size(), prefix.u.data());
    EpisodeBatch batch({&prefix});
    SmcOptions so;
    so.particles = particles;
    so.keep_particles = false;
    auto observer = [&](const FilterSnapshot& snap) {
      if (snap.step + 1 != burn_in) return;
      std::vector<int> picks = draw_particles(snap.log_weights, 0, particles, n_rollouts, noise);
      s = pick_state(*snap.state, *snap.graph, picks, n);
    };
    model.smc().estimate_bound(p, batch, so, noise, observer);
    for (std::size_t r = 0; r < n_rollouts; ++r)
      std::copy(episode.x.data(), episode.x.data() + burn_in * n * dx, out.data() + r * T * n * dx);
  }
  for (std::size_t t = burn_in; t < T; ++t) {
    TransitionResult tr = model.gen.transition(p, g, s, tile_rows(time_slice(episode.u, t), n_rollouts), noise);
    s = tr.state;
    Array x = model.gen.observation(p, g, s).sample(noise);
    for (std::size_t r = 0; r < n_rollouts; ++r)
      std::copy(x.data() + r * n * dx, x.data() + (r + 1) * n * dx, out.data() + (r * T + t) * n * dx);
  }
  return out;
}

}  // namespace rssm
