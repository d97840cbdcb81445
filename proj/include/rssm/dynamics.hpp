#pragma once

// The relational state-space generative model: per-vertex and global
// recurrent context, global/local transition densities (optionally with a
// graph normalizing flow on the local one) and observation densities.

#include <memory>
#include <string>
#include <vector>

#include "rssm/gnf.hpp"

namespace rssm {

enum class ObsHead { kGaussian, kLogisticMixture };

std::string to_string(ObsHead h);
ObsHead parse_obs_head(const std::string& name);  // throws std::invalid_argument listing valid names

struct ModelConfig {
  std::size_t x_dim = 1;
  std::size_t u_dim = 0;
  std::size_t vertex_attr_dim = 0;  // vertex attributes consumed by the GNNs (0 ignores them)
  std::size_t edge_attr_dim = 0;
  std::size_t z_dim = 8;
  std::size_t global_dim = 8;
  std::size_t rnn_hidden = 32;
  std::size_t rnn_layers = 2;
  std::size_t mlp_hidden = 64;
  std::size_t heads = 4;
  std::size_t query_dim = 8;
  std::size_t value_dim = 16;
  std::size_t vertex_embed_dim = 16;
  std::size_t gen_mha_layers = 1;
  std::size_t prop_mha_layers = 1;
  std::size_t readout_dim = 32;
  std::size_t gen_flows = 0;
  std::size_t prop_flows = 0;
  std::size_t flow_hidden = 32;
  ObsHead obs_head = ObsHead::kGaussian;
  std::size_t mixture_components = 5;
  std::size_t aux_negatives = 8;

  MhaConfig mha(std::size_t dim, std::size_t context_dim, Combine combine) const;
  FlowConfig flow() const;
};

// One graph episode: observations and inputs as T x N x d arrays.
struct Episode {
  std::shared_ptr<const AttributedGraph> graph;
  Array x;
  Array u;  // T x N x d_u; d_u may be 0

  std::size_t steps() const { return x.shape().at(0); }
  std::size_t n_vertices() const { return x.shape().at(1); }
};

// Time slice t of a T x N x d array as an N x d matrix.
Array time_slice(const Array& seq, std::size_t t);

// Several episodes laid out as one disjoint graph (one segment per episode).
class EpisodeBatch {
 public:
  explicit EpisodeBatch(std::vector<const Episode*> episodes);

  std::size_t size() const { return episodes_.size(); }
  std::size_t steps() const { return steps_; }
  const Episode& episode(std::size_t b) const { return *episodes_.at(b); }
  const GraphBatch& graph() const { return graph_; }
  std::vector<const AttributedGraph*> graphs() const;
  // Stacked N_total x d observation / input rows at step t.
  const Var& x(std::size_t t) const { return x_.at(t); }
  const Var& u(std::size_t t) const { return u_.at(t); }

 private:
  std::vector<const Episode*> episodes_;
  std::size_t steps_ = 0;
  GraphBatch graph_;
  std::vector<Var> x_, u_;
};

struct ModelState {
  LstmState vertex;  // per-vertex cells; top-layer h holds H_t after the GNN
  LstmState global;  // per-segment cells
  Var z_local;       // R x d_z
  Var z_global;      // S x d_g
  Var context;       // H_t (undefined before the first transition)
};

// Copies particle states: rows[r] / segments[s] name the source row / segment.
ModelState gather_state(const ModelState& s, const std::vector<int>& rows, const std::vector<int>& segments);

// Local density: diagonal Gaussian base optionally pushed through a flow.
struct LocalDensity {
  DiagGaussian base;
  const FlowStack* flow = nullptr;
  const Bound* params = nullptr;
  const GraphBatch* graph = nullptr;
  Var context;

  Var log_prob(const Var& z) const;  // R x 1
  struct Sample {
    Var z;
    Var log_prob;  // R x 1
  };
  Sample sample(const Var& eps) const;
};

class ObservationDensity {
 public:
  static ObservationDensity gaussian(DiagGaussian g);
  // `out` columns: M logits, then M x d_x locations, then M x d_x log-scales.
  static ObservationDensity logistic_mixture(const Var& out, std::size_t x_dim, std::size_t components);

  ObsHead kind() const { return kind_; }
  Var log_prob(const Var& x) const;  // R x 1
  Array sample(Noise& noise) const;
  Array mean() const;
  // Gaussian head parameters (only for ObsHead::kGaussian).
  const DiagGaussian& gaussian() const { return gaussian_; }

 private:
  ObservationDensity() = default;

  ObsHead kind_ = ObsHead::kGaussian;
  std::size_t x_dim_ = 0, components_ = 0;
  DiagGaussian gaussian_;
  Var log_weights_, locs_, log_scales_;
};

struct PreGlobal {
  LstmState vertex;
  LstmState global;
  Var h_tilde;   // R x hidden
  Var h_global;  // S x hidden
};

struct TransitionResult {
  ModelState state;
  Var z_global;
  Var z_local;
  Var logp_global;  // S x 1
  Var logp_local;   // R x 1 (sum per segment for the joint local density)
};

class GenerativeModel {
 public:
  GenerativeModel() = default;
  GenerativeModel(ParamStore& store, const ModelConfig& cfg, Rng& rng, const std::string& prefix = "gen");

  const ModelConfig& config() const { return cfg_; }

  ModelState init_state(const Bound& p, const GraphBatch& g) const;
  PreGlobal prepare(const Bound& p, const GraphBatch& g, const ModelState& s, const Var& u) const;
  DiagGaussian global_density(const Bound& p, const Var& h_global) const;
  Var local_context(const Bound& p, const GraphBatch& g, const PreGlobal& pre, const Var& z_global) const;
  LocalDensity local_density(const Bound& p, const GraphBatch& g, const Var& h, const Var& z_global) const;
  // Uses s.context, s.z_local, s.z_global and the global cell output.
  ObservationDensity observation(const Bound& p, const GraphBatch& g, const ModelState& s) const;
  ModelState advance(const PreGlobal& pre, const Var& h, const Var& z_global, const Var& z_local) const;

  // Ancestral step from the prior.
  TransitionResult transition(const Bound& p, const GraphBatch& g, const ModelState& s, const Var& u,
                              Noise& noise) const;
  // Per-vertex log g(x_t | z_t, h_t, z^g_t, h^g_t), R x 1.
  Var observe_logprob(const Bound& p, const GraphBatch& g, const ModelState& s, const Var& x) const;

  const FlowStack& local_flow() const { return local_flow_; }

  // Learnable initial latents z0* (1 x d_z) and z0^g (1 x d_g).
  std::size_t z0_local = 0, z0_global = 0;

 private:
  ModelConfig cfg_;
  LstmStack vertex_rnn_, global_rnn_;
  Readout readout_;
  GaussianHead global_head_, local_head_;
  Gnn gnn_;
  FlowStack local_flow_;
  GaussianHead obs_gaussian_;
  Mlp obs_mixture_;
  std::vector<std::size_t> h0_local_layers_, c0_local_layers_, h0_global_layers_, c0_global_layers_;
};

// Free-running ancestral samples, T x N x d_x.
struct RolloutResult {
  Array x;
  Array z;  // T x N x d_z
};
RolloutResult rollout(const GenerativeModel& model, const ParamStore& params, const AttributedGraph& g,
                      const Array& u, std::size_t steps, Noise& noise);

// Broadcasts one row to `rows` rows.
Var repeat_row(const Var& row, std::size_t rows);
// Concatenates the non-empty parts column-wise.
Var concat_nonempty(const std::vector<Var>& parts);

}  // namespace rssm
