#include "rssm/gnn.hpp"

#include <cmath>
#include <stdexcept>

namespace rssm {

MhaBlock::MhaBlock(ParamStore& store, const std::string& name, const MhaConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.heads == 0) throw std::invalid_argument("MhaBlock: need at least one head");
  const std::size_t embed = cfg.vertex_attr_dim > 0 ? cfg.vertex_embed_dim : 0;
  const std::size_t d_tilde = cfg.dim + embed + cfg.context_dim;
  const std::size_t hq = cfg.heads * cfg.query_dim, hc = cfg.heads * cfg.value_dim;
  w_query_ = store.add(name + ".w_query", init_array(d_tilde, hq, Init::kFanIn, rng));
  w_key_ = store.add(name + ".w_key", init_array(d_tilde, hq, Init::kFanIn, rng));
  w_value_ = store.add(name + ".w_value", init_array(d_tilde, hc, Init::kFanIn, rng));
  if (cfg.vertex_attr_dim > 0)
    vertex_mlp_ = Mlp(store, name + ".vertex_mlp", cfg.vertex_attr_dim, {cfg.hidden}, cfg.vertex_embed_dim, rng);
  if (cfg.edge_attr_dim > 0) edge_mlp_ = Mlp(store, name + ".edge_mlp", cfg.edge_attr_dim, {cfg.hidden}, cfg.heads, rng);
  fuse_ = Linear(store, name + ".fuse", hc, cfg.dim, rng);
  const std::size_t side = cfg.context_dim + embed;
  if (cfg.combine == Combine::kGru)
    gru_ = GruCell(store, name + ".combine", side + cfg.dim, cfg.dim, rng);
  else
    residual_ = ResidualBlock(store, name + ".combine", side + 2 * cfg.dim, cfg.hidden, cfg.dim, rng);

  Array sum_m({hq, cfg.heads});
  for (std::size_t k = 0; k < cfg.heads; ++k)
    for (std::size_t j = 0; j < cfg.query_dim; ++j) sum_m(k * cfg.query_dim + j, k) = 1.0;
  Array expand_m({cfg.heads, hc});
  for (std::size_t k = 0; k < cfg.heads; ++k)
    for (std::size_t j = 0; j < cfg.value_dim; ++j) expand_m(k, k * cfg.value_dim + j) = 1.0;
  head_sum_ = std::make_shared<const Array>(std::move(sum_m));
  head_expand_ = std::make_shared<const Array>(std::move(expand_m));
}

Var MhaBlock::forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& h,
                      AttentionTrace* trace) const {
  if (h.rows() != g.n_rows() || h.cols() != cfg_.dim)
    throw ShapeError("MhaBlock: H has shape " + shape_str(h.shape()) + ", expected (" + std::to_string(g.n_rows()) +
                     ", " + std::to_string(cfg_.dim) + ")");
  std::vector<Var> side;
  if (cfg_.context_dim > 0) {
    if (!context.defined() || context.rows() != g.n_segments() || context.cols() != cfg_.context_dim)
      throw ShapeError("MhaBlock: context must be (" + std::to_string(g.n_segments()) + ", " +
                       std::to_string(cfg_.context_dim) + ")");
    side.push_back(rows_by_segment(context, g.row_segment()));
  }
  if (cfg_.vertex_attr_dim > 0) {
    if (g.vertex_attr_dim() != cfg_.vertex_attr_dim)
      throw ShapeError("MhaBlock: graph vertex attributes have width " + std::to_string(g.vertex_attr_dim()) +
                       ", block expects " + std::to_string(cfg_.vertex_attr_dim));
    side.push_back(vertex_mlp_(p, Var(g.vertex_attrs())));
  }

  std::vector<Var> parts{h};
  parts.insert(parts.end(), side.begin(), side.end());
  Var h_tilde = concat_cols(parts);
  Var q = matmul(h_tilde, p[w_query_]);
  Var a = matmul(h_tilde, p[w_key_]);
  Var c = matmul(h_tilde, p[w_value_]);

  const std::size_t n = g.n_rows();
  Var score = scale(matmul(gather_rows(q, g.edge_head()) * gather_rows(a, g.edge_tail()), Var(head_sum_)),
                    1.0 / std::sqrt(static_cast<double>(cfg_.query_dim)));
  if (cfg_.edge_attr_dim > 0) {
    if (g.edge_attr_dim() != cfg_.edge_attr_dim)
      throw ShapeError("MhaBlock: edge attributes missing or of width " + std::to_string(g.edge_attr_dim()) +
                       ", block expects " + std::to_string(cfg_.edge_attr_dim));
    score = score + edge_mlp_(p, Var(g.edge_attrs()));
  }
  Var alpha = segment_softmax(score, g.edge_head(), n);
  if (trace) trace->weights = alpha.value();
  Var messages = gather_rows(c, g.edge_tail()) * matmul(alpha, Var(head_expand_));
  Var agg = fuse_(p, segment_sum(messages, g.edge_head(), n));

  if (cfg_.combine == Combine::kGru) {
    std::vector<Var> in = side;
    in.push_back(agg);
    return gru_(p, h, concat_cols(in));
  }
  std::vector<Var> in = side;
  in.push_back(h);
  in.push_back(agg);
  return residual_(p, h, concat_cols(in));
}

Gnn::Gnn(ParamStore& store, const std::string& name, const MhaConfig& cfg, std::size_t layers, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) blocks_.emplace_back(store, name + ".mha" + std::to_string(l), cfg, rng);
}

Var Gnn::forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& h) const {
  Var out = h;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    if (out.cols() != blocks_[l].config().dim)
      throw ShapeError("Gnn: block " + std::to_string(l) + " expects width " +
                       std::to_string(blocks_[l].config().dim) + ", got " + std::to_string(out.cols()));
    out = blocks_[l].forward(p, g, context, out);
  }
  return out;
}

Var mha_forward(const Bound& p, const AttributedGraph& g, const Var& context, const Var& h, const MhaBlock& block,
                AttentionTrace* trace) {
  return block.forward(p, GraphBatch::single(g), context, h, trace);
}

Var gnn_stack(const Bound& p, const AttributedGraph& g, const Var& context, const Var& h,
              const std::vector<MhaBlock>& blocks) {
  return Gnn(blocks).forward(p, GraphBatch::single(g), context, h);
}

Readout::Readout(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : tanh_gate_(store, name + ".tanh_gate", 2 * in, out, rng),
      sigmoid_gate_(store, name + ".sigmoid_gate", 2 * in, out, rng) {}

Var Readout::forward(const Bound& p, const GraphBatch& g, const Var& h) const {
  for (int s : g.segment_size())
    if (s == 0) throw std::invalid_argument("Readout: graph with no vertices");
  if (g.n_segments() == 0) throw std::invalid_argument("Readout: empty batch");
  Var u = concat_cols({segment_mean(h, g.row_segment(), g.n_segments()), segment_max(h, g.row_segment(), g.n_segments())});
  return tanh(tanh_gate_(p, u)) * sigmoid(sigmoid_gate_(p, u));
}

Var readout(const Bound& p, const AttributedGraph& g, const Var& h, const Readout& r) {
  return r.forward(p, GraphBatch::single(g), h);
}

}  // namespace rssm
