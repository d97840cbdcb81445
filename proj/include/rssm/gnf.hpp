#pragma once

// Graph normalizing flows on N x D vertex states. Each flow step is
// Affine -> Coupling -> 1x1 Conv; all log-determinants are reported per row
// so they can be summed per graph segment.

#include <string>
#include <vector>

#include "rssm/gnn.hpp"

namespace rssm {

struct FlowResult {
  Var z;
  Var logdet;  // R x 1
};

struct FlowConfig {
  std::size_t dim = 8;          // D
  std::size_t context_dim = 0;  // graph-level context fed to the conditioners
  std::size_t hidden = 32;      // conditioner width
  std::size_t heads = 4;
  std::size_t query_dim = 8;
  std::size_t value_dim = 8;
  std::size_t vertex_attr_dim = 0;
  std::size_t edge_attr_dim = 0;
  double s_scale = 2.0;         // s = s_scale * tanh(raw)
};

// z' = z * exp(log_scale) + shift, channel-wise.
class AffineLayer {
 public:
  AffineLayer() = default;
  AffineLayer(ParamStore& store, const std::string& name, std::size_t dim);

  FlowResult forward(const Bound& p, const Var& z) const;
  FlowResult inverse(const Bound& p, const Var& z) const;
  // Sets the parameters so `batch` (rows = samples) maps to zero mean, unit
  // population std per channel.
  void data_init(ParamStore& store, const Array& batch) const;

  std::size_t log_scale = 0, shift = 0;
};

// Z_b' = Z_b * exp(s(Z_a)) + t(Z_a) with a shared MHA conditioner.
class CouplingLayer {
 public:
  CouplingLayer() = default;
  CouplingLayer(ParamStore& store, const std::string& name, const FlowConfig& cfg, Rng& rng);

  FlowResult forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const;
  FlowResult inverse(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const;

  std::size_t split() const { return split_; }

 private:
  struct ScaleShift {
    Var s, t;
  };
  ScaleShift conditioner(const Bound& p, const GraphBatch& g, const Var& context, const Var& za) const;

  std::size_t dim_ = 0, split_ = 0;
  double s_scale_ = 2.0;
  Linear embed_;
  MhaBlock mha_;
  Linear head_;
};

// z' = W z with W = Q R; Q a product of Householder reflections (a zero
// vector is the identity reflection), R upper triangular with exp(log_diag)
// on the diagonal.
class InvertibleConv {
 public:
  InvertibleConv() = default;
  InvertibleConv(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng, bool identity = false);

  FlowResult forward(const Bound& p, const Var& z) const;
  FlowResult inverse(const Bound& p, const Var& z) const;
  Var q_matrix(const Bound& p) const;
  Var r_matrix(const Bound& p) const;
  Var weight(const Bound& p) const;

  std::size_t reflections = 0, upper = 0, log_diag = 0;

 private:
  std::size_t dim_ = 0;
  std::shared_ptr<const Array> strict_upper_mask_;
  std::shared_ptr<const Array> eye_;
};

class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(ParamStore& store, const std::string& name, const FlowConfig& cfg, std::size_t n_steps, Rng& rng);

  FlowResult forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const;
  FlowResult inverse(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const;

  std::size_t steps() const { return affine_.size(); }
  bool empty() const { return affine_.empty(); }
  const AffineLayer& affine(std::size_t k) const { return affine_.at(k); }
  const CouplingLayer& coupling(std::size_t k) const { return coupling_.at(k); }
  const InvertibleConv& conv(std::size_t k) const { return conv_.at(k); }

 private:
  std::vector<AffineLayer> affine_;
  std::vector<CouplingLayer> coupling_;
  std::vector<InvertibleConv> conv_;
};

// Base diagonal Gaussian pushed through a flow: row-wise log-density of z'.
Var flow_log_prob_rows(const Bound& p, const FlowStack& stack, const DiagGaussian& base, const GraphBatch& g,
                       const Var& context, const Var& z);
// Total log-density over all rows.
Var flow_logprob(const Bound& p, const FlowStack& stack, const Var& base_mean, const Var& base_var,
                 const GraphBatch& g, const Var& context, const Var& z);

}  // namespace rssm
