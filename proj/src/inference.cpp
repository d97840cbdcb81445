#include "rssm/inference.hpp"

namespace rssm {

ProposalModel::ProposalModel(ParamStore& store, const ModelConfig& cfg, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  const std::size_t H = cfg.rnn_hidden;
  obs_rnn_ = LstmStack(store, prefix + ".obs_rnn", cfg.x_dim + cfg.u_dim, H, cfg.rnn_layers, rng);
  readout1_ = Readout(store, prefix + ".readout1", H, cfg.readout_dim, rng);
  gnn_ = Gnn(store, prefix + ".gnn", cfg.mha(H, cfg.readout_dim, Combine::kGru), cfg.prop_mha_layers, rng);
  readout2_ = Readout(store, prefix + ".readout2", H, cfg.readout_dim, rng);
  global_head_ = GaussianHead(store, prefix + ".global_head", H + cfg.readout_dim, cfg.mlp_hidden, cfg.global_dim, rng);
  local_head_ = GaussianHead(store, prefix + ".local_head", 2 * H, cfg.mlp_hidden, cfg.z_dim, rng);
  if (cfg.prop_flows > 0) local_flow_ = FlowStack(store, prefix + ".flow", cfg.flow(), cfg.prop_flows, rng);
}

BeliefState ProposalModel::init_belief(const Bound&, const GraphBatch& g) const {
  BeliefState b;
  b.rnn = obs_rnn_.zero_state(g.n_rows());
  return b;
}

BeliefState ProposalModel::belief_update(const Bound& p, const GraphBatch& g, const BeliefState& b, const Var& x,
                                         const Var& u) const {
  if (x.rows() != g.n_rows() || x.cols() != cfg_.x_dim)
    throw ShapeError("belief_update: x_t has shape " + shape_str(x.shape()) + ", expected (" +
                     std::to_string(g.n_rows()) + ", " + std::to_string(cfg_.x_dim) + ")");
  if (u.rows() != g.n_rows() || u.cols() != cfg_.u_dim)
    throw ShapeError("belief_update: u_t has shape " + shape_str(u.shape()));
  BeliefState out;
  out.rnn = obs_rnn_.step(p, b.rnn, cfg_.u_dim > 0 ? concat_cols({x, u}) : x);
  const Var& b_tilde = out.rnn.back().h;
  Var bg_tilde = readout1_.forward(p, g, b_tilde);
  out.B = gnn_.forward(p, g, bg_tilde, b_tilde);
  out.b_global = readout2_.forward(p, g, out.B);
  return out;
}

namespace {
void check(const DiagGaussian& d, const char* head) {
  if (!d.mean.value().all_finite() || !d.var.value().all_finite())
    throw NumericError(std::string("non-finite density parameters from ") + head);
}
}  // namespace

DiagGaussian ProposalModel::global_density(const Bound& p, const Var& h_global, const Var& b_global) const {
  DiagGaussian d = global_head_(p, concat_cols({h_global, b_global}));
  check(d, "the global proposal head");
  return d;
}

LocalDensity ProposalModel::local_density(const Bound& p, const GraphBatch& g, const Var& h, const Var& B,
                                          const Var& z_global) const {
  LocalDensity d;
  d.base = local_head_(p, concat_cols({h, B}));
  check(d.base, "the local proposal head");
  d.flow = &local_flow_;
  d.params = &p;
  d.graph = &g;
  d.context = z_global;
  return d;
}

GlobalProposal ProposalModel::propose_global(const Bound& p, const Var& h_global, const Var& b_global,
                                             Noise& noise) const {
  DiagGaussian d = global_density(p, h_global, b_global);
  Var z = d.reparam(Var(noise.normal(h_global.rows(), cfg_.global_dim)));
  return {z, d.log_prob(z)};
}

LocalProposal ProposalModel::propose_local(const Bound& p, const GraphBatch& g, const Var& h, const Var& B,
                                           const Var& z_global, Noise& noise) const {
  LocalDensity d = local_density(p, g, h, B, z_global);
  LocalDensity::Sample s = d.sample(Var(noise.normal(h.rows(), cfg_.z_dim)));
  return {s.z, s.log_prob};
}

}  // namespace rssm
