#include "rssm/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace rssm {

std::string to_string(ObsHead h) { return h == ObsHead::kGaussian ? "gaussian" : "logistic_mixture"; }

ObsHead parse_obs_head(const std::string& name) {
  if (name == "gaussian") return ObsHead::kGaussian;
  if (name == "logistic_mixture") return ObsHead::kLogisticMixture;
  throw std::invalid_argument("unknown observation head '" + name + "'; valid options: gaussian, logistic_mixture");
}

MhaConfig ModelConfig::mha(std::size_t dim, std::size_t context_dim, Combine combine) const {
  MhaConfig m;
  m.dim = dim;
  m.context_dim = context_dim;
  m.vertex_attr_dim = vertex_attr_dim;
  m.vertex_embed_dim = vertex_embed_dim;
  m.edge_attr_dim = edge_attr_dim;
  m.heads = heads;
  m.query_dim = query_dim;
  m.value_dim = value_dim;
  m.hidden = mlp_hidden;
  m.combine = combine;
  return m;
}

FlowConfig ModelConfig::flow() const {
  FlowConfig f;
  f.dim = z_dim;
  f.context_dim = global_dim;
  f.hidden = flow_hidden;
  f.heads = heads;
  f.query_dim = query_dim;
  f.value_dim = value_dim;
  f.vertex_attr_dim = vertex_attr_dim;
  f.edge_attr_dim = edge_attr_dim;
  return f;
}

Array time_slice(const Array& seq, std::size_t t) {
  if (seq.rank() != 3) throw ShapeError("time_slice: expected T x N x d, got " + shape_str(seq.shape()));
  const std::size_t n = seq.shape()[1], d = seq.shape()[2];
  if (t >= seq.shape()[0]) throw std::out_of_range("time_slice: step out of range");
  std::vector<double> v(seq.data() + t * n * d, seq.data() + (t + 1) * n * d);
  return Array({n, d}, std::move(v));
}

EpisodeBatch::EpisodeBatch(std::vector<const Episode*> episodes) : episodes_(std::move(episodes)) {
  if (episodes_.empty()) throw std::invalid_argument("EpisodeBatch: no episodes");
  steps_ = episodes_[0]->steps();
  std::vector<const AttributedGraph*> graphs;
  for (const Episode* e : episodes_) {
    if (e->steps() != steps_) throw ShapeError("EpisodeBatch: episodes differ in length");
    if (static_cast<std::size_t>(e->graph->n_vertices()) != e->n_vertices())
      throw ShapeError("EpisodeBatch: observation rows do not match the graph");
    if (e->u.rank() != 3 || e->u.shape()[0] != steps_ || e->u.shape()[1] != e->n_vertices())
      throw ShapeError("EpisodeBatch: inputs must be T x N x d_u, got " + shape_str(e->u.shape()));
    graphs.push_back(e->graph.get());
  }
  graph_ = GraphBatch(graphs, std::vector<int>(graphs.size(), 1));
  for (std::size_t t = 0; t < steps_; ++t) {
    std::vector<Var> xs, us;
    for (const Episode* e : episodes_) {
      xs.emplace_back(time_slice(e->x, t));
      us.emplace_back(time_slice(e->u, t));
    }
    x_.push_back(xs.size() == 1 ? xs[0] : concat_rows(xs));
    us.size() == 1 ? u_.push_back(us[0]) : u_.push_back(concat_rows(us));
  }
}

std::vector<const AttributedGraph*> EpisodeBatch::graphs() const {
  std::vector<const AttributedGraph*> out;
  for (const Episode* e : episodes_) out.push_back(e->graph.get());
  return out;
}

Var repeat_row(const Var& row, std::size_t rows) { return gather_rows(row, std::vector<int>(rows, 0)); }

Var concat_nonempty(const std::vector<Var>& parts) {
  std::vector<Var> kept;
  for (const Var& p : parts)
    if (p.defined() && p.cols() > 0 && p.value().size() > 0) kept.push_back(p);
  if (kept.empty()) throw ShapeError("concat_nonempty: every part is empty");
  return concat_cols(kept);
}

namespace {
LstmState gather_lstm(const LstmState& s, const std::vector<int>& idx) {
  LstmState out(s.size());
  for (std::size_t l = 0; l < s.size(); ++l) {
    out[l].h = gather_rows(s[l].h, idx);
    out[l].c = gather_rows(s[l].c, idx);
  }
  return out;
}
}  // namespace

ModelState gather_state(const ModelState& s, const std::vector<int>& rows, const std::vector<int>& segments) {
  ModelState out;
  out.vertex = gather_lstm(s.vertex, rows);
  out.global = gather_lstm(s.global, segments);
  out.z_local = gather_rows(s.z_local, rows);
  out.z_global = gather_rows(s.z_global, segments);
  if (s.context.defined()) out.context = gather_rows(s.context, rows);
  return out;
}

Var LocalDensity::log_prob(const Var& z) const {
  if (!flow || flow->empty()) return base.log_prob(z);
  return flow_log_prob_rows(*params, *flow, base, *graph, context, z);
}

LocalDensity::Sample LocalDensity::sample(const Var& eps) const {
  Var z0 = base.reparam(eps);
  Var lp = base.log_prob(z0);
  if (!flow || flow->empty()) return {z0, lp};
  FlowResult f = flow->forward(*params, *graph, context, z0);
  return {f.z, lp - f.logdet};
}

ObservationDensity ObservationDensity::gaussian(DiagGaussian g) {
  ObservationDensity d;
  d.kind_ = ObsHead::kGaussian;
  d.x_dim_ = g.mean.cols();
  d.gaussian_ = std::move(g);
  return d;
}

ObservationDensity ObservationDensity::logistic_mixture(const Var& out, std::size_t x_dim, std::size_t components) {
  if (out.cols() != components * (1 + 2 * x_dim)) throw ShapeError("logistic_mixture: wrong parameter width");
  ObservationDensity d;
  d.kind_ = ObsHead::kLogisticMixture;
  d.x_dim_ = x_dim;
  d.components_ = components;
  Var logits = slice_cols(out, 0, components);
  if (!logits.value().all_finite()) throw NumericError("logistic_mixture: mixture weights are not normalizable");
  d.log_weights_ = log_softmax(logits, 1);
  d.locs_ = slice_cols(out, components, components * (1 + x_dim));
  d.log_scales_ = slice_cols(out, components * (1 + x_dim), components * (1 + 2 * x_dim));
  return d;
}

Var ObservationDensity::log_prob(const Var& x) const {
  if (x.cols() != x_dim_) throw ShapeError("observation: x has wrong width");
  if (kind_ == ObsHead::kGaussian) return gaussian_.log_prob(x);
  std::vector<Var> comps;
  for (std::size_t m = 0; m < components_; ++m) {
    Var loc = slice_cols(locs_, m * x_dim_, (m + 1) * x_dim_);
    Var log_s = slice_cols(log_scales_, m * x_dim_, (m + 1) * x_dim_);
    Var u = (x - loc) * exp(neg(log_s));
    // log logistic = -u - log s - 2 softplus(-u)
    comps.push_back(sum(neg(u) - log_s - scale(softplus(neg(u)), 2.0), 1));
  }
  return logsumexp(log_weights_ + concat_cols(comps), 1);
}

Array ObservationDensity::sample(Noise& noise) const {
  if (kind_ == ObsHead::kGaussian) {
    Array eps = noise.normal(gaussian_.mean.rows(), x_dim_);
    return gaussian_.reparam(Var(std::move(eps))).value();
  }
  const std::size_t rows = log_weights_.rows();
  Array out({rows, x_dim_});
  for (std::size_t r = 0; r < rows; ++r) {
    double u = noise.uniform(), acc = 0.0;
    std::size_t m = 0;
    for (; m + 1 < components_; ++m) {
      acc += std::exp(log_weights_.value()(r, m));
      if (u < acc) break;
    }
    for (std::size_t j = 0; j < x_dim_; ++j) {
      double v = noise.uniform();
      v = std::min(std::max(v, 1e-12), 1.0 - 1e-12);
      out(r, j) = locs_.value()(r, m * x_dim_ + j) +
                  std::exp(log_scales_.value()(r, m * x_dim_ + j)) * std::log(v / (1.0 - v));
    }
  }
  return out;
}

Array ObservationDensity::mean() const {
  if (kind_ == ObsHead::kGaussian) return gaussian_.mean.value();
  const std::size_t rows = log_weights_.rows();
  Array out({rows, x_dim_});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t m = 0; m < components_; ++m)
      for (std::size_t j = 0; j < x_dim_; ++j)
        out(r, j) += std::exp(log_weights_.value()(r, m)) * locs_.value()(r, m * x_dim_ + j);
  return out;
}

// ---------------------------------------------------------------------------

GenerativeModel::GenerativeModel(ParamStore& store, const ModelConfig& cfg, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  const std::size_t H = cfg.rnn_hidden;
  vertex_rnn_ = LstmStack(store, prefix + ".vertex_rnn", cfg.z_dim + cfg.u_dim, H, cfg.rnn_layers, rng);
  readout_ = Readout(store, prefix + ".readout", H, cfg.readout_dim, rng);
  global_rnn_ = LstmStack(store, prefix + ".global_rnn", cfg.global_dim + cfg.readout_dim, H, cfg.rnn_layers, rng);
  global_head_ = GaussianHead(store, prefix + ".global_head", H, cfg.mlp_hidden, cfg.global_dim, rng);
  gnn_ = Gnn(store, prefix + ".gnn", cfg.mha(H, cfg.global_dim, Combine::kGru), cfg.gen_mha_layers, rng);
  local_head_ = GaussianHead(store, prefix + ".local_head", H, cfg.mlp_hidden, cfg.z_dim, rng);
  if (cfg.gen_flows > 0) local_flow_ = FlowStack(store, prefix + ".flow", cfg.flow(), cfg.gen_flows, rng);
  const std::size_t obs_in = cfg.z_dim + H + cfg.global_dim + H;
  if (cfg.obs_head == ObsHead::kGaussian)
    obs_gaussian_ = GaussianHead(store, prefix + ".obs", obs_in, cfg.mlp_hidden, cfg.x_dim, rng);
  else
    obs_mixture_ = Mlp(store, prefix + ".obs", obs_in, {cfg.mlp_hidden, cfg.mlp_hidden},
                       cfg.mixture_components * (1 + 2 * cfg.x_dim), rng);
  for (std::size_t l = 0; l < cfg.rnn_layers; ++l) {
    const std::string ls = std::to_string(l);
    h0_local_layers_.push_back(store.add(prefix + ".init.h_local" + ls, Array({1, H})));
    c0_local_layers_.push_back(store.add(prefix + ".init.c_local" + ls, Array({1, H})));
    h0_global_layers_.push_back(store.add(prefix + ".init.h_global" + ls, Array({1, H})));
    c0_global_layers_.push_back(store.add(prefix + ".init.c_global" + ls, Array({1, H})));
  }
  z0_local = store.add(prefix + ".init.z_local", Array({1, cfg.z_dim}));
  z0_global = store.add(prefix + ".init.z_global", Array({1, cfg.global_dim}));
}

ModelState GenerativeModel::init_state(const Bound& p, const GraphBatch& g) const {
  const std::size_t R = g.n_rows(), S = g.n_segments();
  ModelState s;
  s.vertex.resize(cfg_.rnn_layers);
  s.global.resize(cfg_.rnn_layers);
  for (std::size_t l = 0; l < cfg_.rnn_layers; ++l) {
    s.vertex[l] = {repeat_row(p[h0_local_layers_[l]], R), repeat_row(p[c0_local_layers_[l]], R)};
    s.global[l] = {repeat_row(p[h0_global_layers_[l]], S), repeat_row(p[c0_global_layers_[l]], S)};
  }
  s.z_local = repeat_row(p[z0_local], R);
  s.z_global = repeat_row(p[z0_global], S);
  return s;
}

PreGlobal GenerativeModel::prepare(const Bound& p, const GraphBatch& g, const ModelState& s, const Var& u) const {
  if (u.rows() != g.n_rows() || u.cols() != cfg_.u_dim)
    throw ShapeError("transition: u_t has shape " + shape_str(u.shape()) + ", expected (" +
                     std::to_string(g.n_rows()) + ", " + std::to_string(cfg_.u_dim) + ")");
  PreGlobal pre;
  pre.vertex = vertex_rnn_.step(p, s.vertex, cfg_.u_dim > 0 ? concat_cols({s.z_local, u}) : s.z_local);
  pre.h_tilde = pre.vertex.back().h;
  Var summary = readout_.forward(p, g, pre.h_tilde);
  pre.global = global_rnn_.step(p, s.global, concat_cols({s.z_global, summary}));
  pre.h_global = pre.global.back().h;
  return pre;
}

namespace {
void check_density(const DiagGaussian& d, const char* head) {
  if (!d.mean.value().all_finite() || !d.var.value().all_finite())
    throw NumericError(std::string("non-finite density parameters from ") + head);
}
}  // namespace

DiagGaussian GenerativeModel::global_density(const Bound& p, const Var& h_global) const {
  DiagGaussian d = global_head_(p, h_global);
  check_density(d, "the global transition head");
  return d;
}

Var GenerativeModel::local_context(const Bound& p, const GraphBatch& g, const PreGlobal& pre,
                                   const Var& z_global) const {
  return gnn_.forward(p, g, z_global, pre.h_tilde);
}

LocalDensity GenerativeModel::local_density(const Bound& p, const GraphBatch& g, const Var& h,
                                            const Var& z_global) const {
  LocalDensity d;
  d.base = local_head_(p, h);
  check_density(d.base, "the local transition head");
  d.flow = &local_flow_;
  d.params = &p;
  d.graph = &g;
  d.context = z_global;
  return d;
}

ModelState GenerativeModel::advance(const PreGlobal& pre, const Var& h, const Var& z_global,
                                    const Var& z_local) const {
  ModelState s;
  s.vertex = pre.vertex;
  s.vertex.back().h = h;
  s.global = pre.global;
  s.z_local = z_local;
  s.z_global = z_global;
  s.context = h;
  return s;
}

ObservationDensity GenerativeModel::observation(const Bound& p, const GraphBatch& g, const ModelState& s) const {
  Var in = concat_cols({s.z_local, s.context, rows_by_segment(s.z_global, g.row_segment()),
                        rows_by_segment(s.global.back().h, g.row_segment())});
  if (cfg_.obs_head == ObsHead::kGaussian) {
    DiagGaussian d = obs_gaussian_(p, in);
    check_density(d, "the observation head");
    return ObservationDensity::gaussian(std::move(d));
  }
  return ObservationDensity::logistic_mixture(obs_mixture_(p, in), cfg_.x_dim, cfg_.mixture_components);
}

TransitionResult GenerativeModel::transition(const Bound& p, const GraphBatch& g, const ModelState& s, const Var& u,
                                             Noise& noise) const {
  PreGlobal pre = prepare(p, g, s, u);
  DiagGaussian fg = global_density(p, pre.h_global);
  Var z_g = fg.reparam(Var(noise.normal(g.n_segments(), cfg_.global_dim)));
  Var logp_g = fg.log_prob(z_g);
  Var h = local_context(p, g, pre, z_g);
  LocalDensity fl = local_density(p, g, h, z_g);
  LocalDensity::Sample z = fl.sample(Var(noise.normal(g.n_rows(), cfg_.z_dim)));
  return {advance(pre, h, z_g, z.z), z_g, z.z, logp_g, z.log_prob};
}

Var GenerativeModel::observe_logprob(const Bound& p, const GraphBatch& g, const ModelState& s, const Var& x) const {
  return observation(p, g, s).log_prob(x);
}

RolloutResult rollout(const GenerativeModel& model, const ParamStore& params, const AttributedGraph& g,
                      const Array& u, std::size_t steps, Noise& noise) {
  const auto& cfg = model.config();
  const std::size_t n = static_cast<std::size_t>(g.n_vertices());
  if (u.rank() != 3 || u.shape()[0] < steps || u.shape()[1] != n)
    throw ShapeError("rollout: inputs must be at least T x N x d_u, got " + shape_str(u.shape()));
  Bound p(params);
  GraphBatch gb = GraphBatch::single(g);
  ModelState s = model.init_state(p, gb);
  RolloutResult out{Array({steps, n, cfg.x_dim}), Array({steps, n, cfg.z_dim})};
  for (std::size_t t = 0; t < steps; ++t) {
    TransitionResult tr = model.transition(p, gb, s, Var(time_slice(u, t)), noise);
    s = tr.state;
    Array x = model.observation(p, gb, s).sample(noise);
    std::copy(x.vec().begin(), x.vec().end(), out.x.data() + t * n * cfg.x_dim);
    std::copy(s.z_local.value().vec().begin(), s.z_local.value().vec().end(), out.z.data() + t * n * cfg.z_dim);
  }
  return out;
}

}  // namespace rssm
