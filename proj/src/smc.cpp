#include "rssm/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rssm {

std::string to_string(ResampleScheme s) { return s == ResampleScheme::kSystematic ? "systematic" : "multinomial"; }

ResampleScheme parse_resample_scheme(const std::string& name) {
  if (name == "systematic") return ResampleScheme::kSystematic;
  if (name == "multinomial") return ResampleScheme::kMultinomial;
  throw std::invalid_argument("unknown resampling scheme '" + name + "'; valid options: systematic, multinomial");
}

double log_mean_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

std::vector<int> resample(const std::vector<double>& log_weights, Noise& noise, ResampleScheme scheme) {
  const std::size_t k = log_weights.size();
  if (k == 0) throw std::invalid_argument("resample: no particles");
  double m = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) {
    if (std::isnan(w) || w == std::numeric_limits<double>::infinity())
      throw NumericError("resample: log-weights must be finite or -inf");
    m = std::max(m, w);
  }
  if (!std::isfinite(m)) throw NumericError("resample: every weight is zero");
  std::vector<double> cdf(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) cdf[i] = acc += std::exp(log_weights[i] - m);
  for (double& c : cdf) c /= acc;
  cdf.back() = 1.0;

  std::vector<int> out(k);
  auto pick = [&](double u) {
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<int>(std::min<std::size_t>(it - cdf.begin(), k - 1));
  };
  if (scheme == ResampleScheme::kSystematic) {
    const double u0 = noise.uniform();
    for (std::size_t i = 0; i < k; ++i) out[i] = pick((static_cast<double>(i) + u0) / static_cast<double>(k));
  } else {
    for (std::size_t i = 0; i < k; ++i) out[i] = pick(noise.uniform());
  }
  return out;
}

FilterResult run_filter(ParticleModel& model, std::size_t steps, std::size_t particles, Noise& noise,
                        ResampleScheme scheme) {
  if (particles == 0) throw std::invalid_argument("run_filter: need at least one particle");
  FilterResult r;
  model.init(particles);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> lw = model.step(t, noise);
    const double inc = log_mean_exp(lw);
    if (!std::isfinite(inc)) throw NumericError("run_filter: all weights vanish at step " + std::to_string(t + 1));
    r.log_likelihood += inc;
    if (t + 1 < steps) {
      r.ancestors.push_back(resample(lw, noise, scheme));
      model.select(r.ancestors.back());
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

BoundResult RssmSmc::estimate_bound(const Bound& p, const EpisodeBatch& batch, const SmcOptions& opt, Noise& noise,
                                    const std::function<void(const FilterSnapshot&)>& observer) const {
  const std::size_t K = opt.particles;
  if (K == 0) throw std::invalid_argument("estimate_bound: need at least one particle");
  const std::size_t B = batch.size(), T = batch.steps();
  if (T == 0) throw std::invalid_argument("estimate_bound: empty episodes");

  BoundResult res;
  res.graph = GraphBatch(batch.graphs(), std::vector<int>(B, static_cast<int>(K)));
  const GraphBatch& g = res.graph;
  const GraphBatch& g1 = batch.graph();
  const std::size_t R = g.n_rows(), S = g.n_segments();

  // Particle row -> example row.
  res.example_row.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    const int s = g.row_segment()[r];
    const int b = s / static_cast<int>(K);
    res.example_row[r] = g1.segment_offset()[b] + static_cast<int>(r) - g.segment_offset()[s];
  }
  std::vector<int> example_segment(S);
  for (std::size_t s = 0; s < S; ++s) example_segment[s] = static_cast<int>(s / K);

  ModelState state = gen_.init_state(p, g);
  BeliefState belief = prop_.init_belief(p, g1);
  std::vector<Var> step_terms;
  Array per_step({T, B});
  double kl_sum = 0.0;

  for (std::size_t t = 0; t < T; ++t) {
    const Var x = gather_rows(batch.x(t), res.example_row);
    const Var u = gather_rows(batch.u(t), res.example_row);

    PreGlobal pre = gen_.prepare(p, g, state, u);
    DiagGaussian prior_g = gen_.global_density(p, pre.h_global);
    Var z_g, logq_g, logf_g;
    Var B_rows, bg_rows;
    if (opt.bootstrap_proposal) {
      z_g = prior_g.reparam(Var(noise.normal(S, gen_.config().global_dim)));
      logf_g = prior_g.log_prob(z_g);
      logq_g = logf_g;
    } else {
      belief = prop_.belief_update(p, g1, belief, batch.x(t), batch.u(t));
      B_rows = gather_rows(belief.B, res.example_row);
      bg_rows = gather_rows(belief.b_global, example_segment);
      GlobalProposal qg = prop_.propose_global(p, pre.h_global, bg_rows, noise);
      z_g = qg.z_global;
      logq_g = qg.logq;
      logf_g = prior_g.log_prob(z_g);
    }

    Var h = gen_.local_context(p, g, pre, z_g);
    LocalDensity prior_l = gen_.local_density(p, g, h, z_g);
    Var z_l, logq_l, logf_l;
    if (opt.bootstrap_proposal) {
      LocalDensity::Sample smp = prior_l.sample(Var(noise.normal(R, gen_.config().z_dim)));
      z_l = smp.z;
      logf_l = smp.log_prob;
      logq_l = logf_l;
    } else {
      LocalProposal ql = prop_.propose_local(p, g, h, B_rows, z_g, noise);
      z_l = ql.z_local;
      logq_l = ql.logq;
      logf_l = prior_l.log_prob(z_l);
    }
    state = gen_.advance(pre, h, z_g, z_l);

    Var vertex_terms = logf_l - logq_l;
    if (opt.weight_observations) vertex_terms = vertex_terms + gen_.observe_logprob(p, g, state, x);
    Var log_w = logf_g - logq_g + segment_sum(vertex_terms, g.row_segment(), S);  // S x 1

    {
      const Array kl_rows = (segment_sum(logq_l - logf_l, g.row_segment(), S) + logq_g - logf_g).value();
      double acc = 0.0;
      for (double v : kl_rows.vec()) acc += v;
      kl_sum += acc / static_cast<double>(S);
    }

    Var inc = add_scalar(logsumexp(reshape(log_w, {B, K}), 1), -std::log(static_cast<double>(K)));  // B x 1
    for (std::size_t b = 0; b < B; ++b) {
      const double v = inc.value()[b];
      if (!std::isfinite(v))
        throw NumericError("estimate_bound: all particle weights vanish at step " + std::to_string(t + 1) +
                           " of example " + std::to_string(b));
      per_step(t, b) = v;
    }
    step_terms.push_back(inc);

    if (observer) {
      FilterSnapshot snap;
      snap.step = t;
      snap.graph = &g;
      snap.state = &state;
      snap.log_weights = log_w.value().vec();
      observer(snap);
    }

    if (t + 1 < T) {
      std::vector<int> seg_anc(S), row_anc(R);
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> lw(log_w.value().vec().begin() + b * K, log_w.value().vec().begin() + (b + 1) * K);
        std::vector<int> a = resample(lw, noise, opt.scheme);
        for (std::size_t k = 0; k < K; ++k) seg_anc[b * K + k] = static_cast<int>(b * K) + a[k];
      }
      for (std::size_t r = 0; r < R; ++r) {
        const int s = g.row_segment()[r];
        row_anc[r] = g.segment_offset()[seg_anc[s]] + static_cast<int>(r) - g.segment_offset()[s];
      }
      state = gather_state(state, row_anc, seg_anc);
      if (opt.keep_particles) res.particles.push_back({state.z_global, state.z_local, state.context});
      res.ancestors.push_back(std::move(seg_anc));
    }
  }

  Var total = step_terms[0];
  for (std::size_t t = 1; t < step_terms.size(); ++t) total = total + step_terms[t];
  res.per_example = total.value();
  res.bound = mean(total);
  res.per_step = std::move(per_step);
  res.kl_estimate = kl_sum / static_cast<double>(T);
  return res;
}

}  // namespace rssm
