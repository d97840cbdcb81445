#include "rssm/graph.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>

namespace rssm {

AttributedGraph::AttributedGraph(int n_vertices, std::vector<Edge> edges, bool allow_self_loops)
    : n_(n_vertices), edges_(std::move(edges)), in_(static_cast<std::size_t>(std::max(n_vertices, 0))) {
  if (n_vertices < 0) throw std::invalid_argument("AttributedGraph: negative vertex count");
  std::set<Edge> seen;
  for (const Edge& e : edges_) {
    if (e.tail < 0 || e.tail >= n_ || e.head < 0 || e.head >= n_)
      throw std::invalid_argument("AttributedGraph: edge (" + std::to_string(e.tail) + ", " + std::to_string(e.head) +
                                  ") out of range for " + std::to_string(n_) + " vertices");
    if (e.tail == e.head && !allow_self_loops)
      throw std::invalid_argument("AttributedGraph: self-loop at vertex " + std::to_string(e.tail));
    if (!seen.insert(e).second)
      throw std::invalid_argument("AttributedGraph: duplicate edge (" + std::to_string(e.tail) + ", " +
                                  std::to_string(e.head) + ")");
    in_[static_cast<std::size_t>(e.head)].push_back(e.tail);
  }
  for (auto& list : in_) std::sort(list.begin(), list.end());
}

const std::vector<int>& AttributedGraph::in_neighbors(int i) const {
  if (i < 0 || i >= n_)
    throw std::out_of_range("in_neighbors: vertex " + std::to_string(i) + " not in [0, " + std::to_string(n_) + ")");
  return in_[static_cast<std::size_t>(i)];
}

bool AttributedGraph::has_edge(int tail, int head) const {
  const auto& list = in_neighbors(head);
  return std::binary_search(list.begin(), list.end(), tail);
}

void AttributedGraph::set_vertex_attrs(Array attrs) {
  if (attrs.size() != 0 && (attrs.rank() != 2 || attrs.rows() != static_cast<std::size_t>(n_)))
    throw ShapeError("set_vertex_attrs: expected " + std::to_string(n_) + " rows, got " + shape_str(attrs.shape()));
  vertex_attrs_ = std::move(attrs);
}

void AttributedGraph::set_edge_attrs(Array attrs) {
  if (attrs.size() != 0 && (attrs.rank() != 2 || attrs.rows() != edges_.size()))
    throw ShapeError("set_edge_attrs: expected " + std::to_string(edges_.size()) + " rows, got " +
                     shape_str(attrs.shape()));
  edge_attrs_ = std::move(attrs);
}

AttributedGraph AttributedGraph::permuted(const std::vector<int>& perm) const {
  if (perm.size() != static_cast<std::size_t>(n_)) throw std::invalid_argument("permuted: permutation size mismatch");
  std::vector<Edge> edges;
  edges.reserve(edges_.size());
  bool self_loops = false;
  for (const Edge& e : edges_) {
    edges.push_back({perm[static_cast<std::size_t>(e.tail)], perm[static_cast<std::size_t>(e.head)]});
    self_loops |= e.tail == e.head;
  }
  AttributedGraph out(n_, std::move(edges), self_loops);
  if (vertex_attrs_.size() != 0) {
    Array v(vertex_attrs_.shape());
    const std::size_t d = vertex_attrs_.cols();
    for (int i = 0; i < n_; ++i)
      for (std::size_t c = 0; c < d; ++c)
        v(static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]), c) = vertex_attrs_(static_cast<std::size_t>(i), c);
    out.set_vertex_attrs(std::move(v));
  }
  out.set_edge_attrs(edge_attrs_);
  return out;
}

std::vector<int> in_neighbors(const AttributedGraph& g, int i) { return g.in_neighbors(i); }

void SbmConfig::validate() const {
  if (n_vertices < 1) throw std::invalid_argument("SbmConfig: N must be positive");
  if (n_communities < 1) throw std::invalid_argument("SbmConfig: K must be positive");
  if (n_vertices % n_communities != 0)
    throw std::invalid_argument("SbmConfig: K=" + std::to_string(n_communities) + " does not divide N=" +
                                std::to_string(n_vertices));
  if (!(0.0 <= p_between && p_between <= p_within && p_within <= 1.0))
    throw std::invalid_argument("SbmConfig: need 0 <= p1 <= p0 <= 1");
}

int sbm_community(const SbmConfig& cfg, int vertex) { return vertex * cfg.n_communities / cfg.n_vertices; }

AttributedGraph sample_sbm(const SbmConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_sbm(cfg, rng);
}

GraphBatch::GraphBatch(const std::vector<const AttributedGraph*>& graphs, const std::vector<int>& copies) {
  if (graphs.size() != copies.size()) throw std::invalid_argument("GraphBatch: graphs/copies size mismatch");
  std::size_t dv = 0, de = 0;
  bool first = true;
  for (const auto* g : graphs) {
    if (first) {
      dv = g->vertex_attr_dim();
      de = g->edge_attr_dim();
      first = false;
    } else if (g->vertex_attr_dim() != dv || g->edge_attr_dim() != de) {
      throw ShapeError("GraphBatch: graphs disagree on attribute dimensions");
    }
  }
  std::vector<double> vattr, eattr;
  int row = 0;
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    const AttributedGraph& g = *graphs[b];
    for (int c = 0; c < copies[b]; ++c) {
      const int seg = static_cast<int>(seg_offset_.size());
      seg_offset_.push_back(row);
      seg_size_.push_back(g.n_vertices());
      seg_graph_.push_back(static_cast<int>(b));
      for (int i = 0; i < g.n_vertices(); ++i) row_segment_.push_back(seg);
      for (const Edge& e : g.edges()) {
        edge_tail_.push_back(row + e.tail);
        edge_head_.push_back(row + e.head);
        if (e.tail != e.head) {
          proper_tail_.push_back(row + e.tail);
          proper_head_.push_back(row + e.head);
        }
      }
      vattr.insert(vattr.end(), g.vertex_attrs().vec().begin(), g.vertex_attrs().vec().end());
      eattr.insert(eattr.end(), g.edge_attrs().vec().begin(), g.edge_attrs().vec().end());
      row += g.n_vertices();
    }
  }
  if (dv > 0) vertex_attrs_ = Array({static_cast<std::size_t>(row), dv}, std::move(vattr));
  if (de > 0) edge_attrs_ = Array({edge_tail_.size(), de}, std::move(eattr));
}

}  // namespace rssm
