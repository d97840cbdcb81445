#pragma once

// Structured proposal: a deterministic belief state over the observations
// and proposal densities for the global and local latents.

#include <string>
#include <vector>

#include "rssm/dynamics.hpp"

namespace rssm {

struct BeliefState {
  LstmState rnn;  // per-vertex observation cells
  Var B;          // R x hidden
  Var b_global;   // S x readout_dim
};

// Proposal draws with their exact log-densities.
struct GlobalProposal {
  Var z_global;
  Var logq;  // S x 1
};
struct LocalProposal {
  Var z_local;
  Var logq;  // R x 1
};

class ProposalModel {
 public:
  ProposalModel() = default;
  ProposalModel(ParamStore& store, const ModelConfig& cfg, Rng& rng, const std::string& prefix = "prop");

  const ModelConfig& config() const { return cfg_; }

  BeliefState init_belief(const Bound& p, const GraphBatch& g) const;
  BeliefState belief_update(const Bound& p, const GraphBatch& g, const BeliefState& b, const Var& x,
                            const Var& u) const;

  DiagGaussian global_density(const Bound& p, const Var& h_global, const Var& b_global) const;
  LocalDensity local_density(const Bound& p, const GraphBatch& g, const Var& h, const Var& B,
                             const Var& z_global) const;

  GlobalProposal propose_global(const Bound& p, const Var& h_global, const Var& b_global, Noise& noise) const;
  // h is H_t from the generative model, computed with the proposed z^g.
  LocalProposal propose_local(const Bound& p, const GraphBatch& g, const Var& h, const Var& B, const Var& z_global,
                              Noise& noise) const;

  const FlowStack& local_flow() const { return local_flow_; }

 private:
  ModelConfig cfg_;
  LstmStack obs_rnn_;
  Readout readout1_, readout2_;
  Gnn gnn_;
  GaussianHead global_head_, local_head_;
  FlowStack local_flow_;
};

}  // namespace rssm
