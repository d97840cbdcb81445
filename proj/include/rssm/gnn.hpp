#pragma once

// Multi-head attention message passing over in-neighborhoods, stacked GNNs,
// and the gated mean/max READOUT.

#include <memory>
#include <string>
#include <vector>

#include "rssm/graph.hpp"
#include "rssm/nn.hpp"

namespace rssm {

// How a vertex merges its aggregated messages into its representation.
enum class Combine {
  kGru,       // h' = GRU(h, [g, v~, a]); used on recurrent states
  kResidual,  // h' = h + W2 tanh(W1 [g, v~, h, a])
};

struct MhaConfig {
  std::size_t dim = 32;              // d, also the output width
  std::size_t context_dim = 0;       // d_g; 0 for no graph-level context
  std::size_t vertex_attr_dim = 0;   // d_v consumed through MLP_v; 0 ignores vertex attributes
  std::size_t vertex_embed_dim = 16; // width of MLP_v(v_i)
  std::size_t edge_attr_dim = 0;     // 0 gives every edge a zero score bias
  std::size_t heads = 4;
  std::size_t query_dim = 8;
  std::size_t value_dim = 16;
  std::size_t hidden = 64;
  Combine combine = Combine::kResidual;
};

// Per-edge attention weights (E x heads) from the last forward call that asked for them.
struct AttentionTrace {
  Array weights;
};

class MhaBlock {
 public:
  MhaBlock() = default;
  MhaBlock(ParamStore& store, const std::string& name, const MhaConfig& cfg, Rng& rng);

  // context: one row per segment (n_segments x d_g), or undefined when d_g == 0.
  Var forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& h,
              AttentionTrace* trace = nullptr) const;

  const MhaConfig& config() const { return cfg_; }

 private:
  MhaConfig cfg_;
  std::size_t w_query_ = 0, w_key_ = 0, w_value_ = 0;
  Mlp vertex_mlp_, edge_mlp_;
  Linear fuse_;
  GruCell gru_;
  ResidualBlock residual_;
  std::shared_ptr<const Array> head_sum_;     // (heads*dq) x heads
  std::shared_ptr<const Array> head_expand_;  // heads x (heads*dc)
};

class Gnn {
 public:
  Gnn() = default;
  Gnn(ParamStore& store, const std::string& name, const MhaConfig& cfg, std::size_t layers, Rng& rng);
  explicit Gnn(std::vector<MhaBlock> blocks) : blocks_(std::move(blocks)) {}

  Var forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& h) const;
  std::size_t layers() const { return blocks_.size(); }
  const std::vector<MhaBlock>& blocks() const { return blocks_; }

 private:
  std::vector<MhaBlock> blocks_;
};

// Convenience wrappers matching the single-graph signatures.
Var mha_forward(const Bound& p, const AttributedGraph& g, const Var& context, const Var& h, const MhaBlock& block,
                AttentionTrace* trace = nullptr);
Var gnn_stack(const Bound& p, const AttributedGraph& g, const Var& context, const Var& h,
              const std::vector<MhaBlock>& blocks);

// tanh(W1 u) * sigmoid(W2 u) with u = [mean(H), max(H)] per segment.
class Readout {
 public:
  Readout() = default;
  Readout(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var forward(const Bound& p, const GraphBatch& g, const Var& h) const;
  std::size_t out_dim() const { return tanh_gate_.out; }

 private:
  Linear tanh_gate_, sigmoid_gate_;
};

Var readout(const Bound& p, const AttributedGraph& g, const Var& h, const Readout& r);

}  // namespace rssm
