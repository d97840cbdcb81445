#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "rssm/tensor.hpp"

namespace rssm {

struct Edge {
  int tail = 0;  // sender j
  int head = 0;  // receiver i

  auto operator<=>(const Edge&) const = default;
};

// Static directed graph with optional vertex and edge attributes. Immutable
// after construction.
class AttributedGraph {
 public:
  AttributedGraph() = default;
  AttributedGraph(int n_vertices, std::vector<Edge> edges, bool allow_self_loops = false);

  int n_vertices() const { return n_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t n_edges() const { return edges_.size(); }

  // Predecessors of vertex i in ascending order.
  const std::vector<int>& in_neighbors(int i) const;
  bool has_edge(int tail, int head) const;

  // N x d_v; empty (0 columns) when the graph carries no vertex attributes.
  const Array& vertex_attrs() const { return vertex_attrs_; }
  void set_vertex_attrs(Array attrs);
  std::size_t vertex_attr_dim() const { return vertex_attrs_.size() == 0 ? 0 : vertex_attrs_.cols(); }

  // One row per edge, aligned with edges(); empty when absent.
  const Array& edge_attrs() const { return edge_attrs_; }
  void set_edge_attrs(Array attrs);
  std::size_t edge_attr_dim() const { return edge_attrs_.size() == 0 ? 0 : edge_attrs_.cols(); }

  // Relabels vertex v as perm[v]; edges keep their relative order.
  AttributedGraph permuted(const std::vector<int>& perm) const;

 private:
  int n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> in_;
  Array vertex_attrs_;
  Array edge_attrs_;
};

std::vector<int> in_neighbors(const AttributedGraph& g, int i);

struct SbmConfig {
  int n_vertices = 36;
  int n_communities = 3;
  double p_within = 1.0 / 3.0;
  double p_between = 1.0 / 18.0;

  void validate() const;
};

// Community of vertex i: floor(i * K / N).
int sbm_community(const SbmConfig& cfg, int vertex);

// Symmetric SBM: every unordered pair is drawn once and stored as two directed edges.
AttributedGraph sample_sbm(const SbmConfig& cfg, std::uint64_t seed);

template <class Rng>
AttributedGraph sample_sbm(const SbmConfig& cfg, Rng& rng);

// Disjoint union of graph copies laid out as consecutive row blocks. Every
// block is a "segment"; segment s covers rows [offset[s], offset[s] + size[s]).
class GraphBatch {
 public:
  GraphBatch() = default;
  // copies[b] replicas of graphs[b], ordered graph-major.
  GraphBatch(const std::vector<const AttributedGraph*>& graphs, const std::vector<int>& copies);
  static GraphBatch single(const AttributedGraph& g) { return GraphBatch({&g}, {1}); }

  std::size_t n_rows() const { return row_segment_.size(); }
  std::size_t n_segments() const { return seg_offset_.size(); }
  std::size_t n_edges() const { return edge_tail_.size(); }

  const std::vector<int>& row_segment() const { return row_segment_; }
  const std::vector<int>& segment_offset() const { return seg_offset_; }
  const std::vector<int>& segment_size() const { return seg_size_; }
  // Source graph index of each segment.
  const std::vector<int>& segment_graph() const { return seg_graph_; }
  const std::vector<int>& edge_tail() const { return edge_tail_; }
  const std::vector<int>& edge_head() const { return edge_head_; }
  // Edges without self-loops.
  const std::vector<int>& proper_edge_tail() const { return proper_tail_; }
  const std::vector<int>& proper_edge_head() const { return proper_head_; }

  // Stacked attributes (empty arrays when the graphs have none).
  const Array& vertex_attrs() const { return vertex_attrs_; }
  const Array& edge_attrs() const { return edge_attrs_; }
  std::size_t vertex_attr_dim() const { return vertex_attrs_.size() == 0 ? 0 : vertex_attrs_.cols(); }
  std::size_t edge_attr_dim() const { return edge_attrs_.size() == 0 ? 0 : edge_attrs_.cols(); }

 private:
  std::vector<int> row_segment_, seg_offset_, seg_size_, seg_graph_;
  std::vector<int> edge_tail_, edge_head_, proper_tail_, proper_head_;
  Array vertex_attrs_, edge_attrs_;
};

}  // namespace rssm

#include <random>

namespace rssm {

template <class Rng>
AttributedGraph sample_sbm(const SbmConfig& cfg, Rng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Edge> edges;
  for (int i = 0; i < cfg.n_vertices; ++i) {
    for (int j = i + 1; j < cfg.n_vertices; ++j) {
      const double p = sbm_community(cfg, i) == sbm_community(cfg, j) ? cfg.p_within : cfg.p_between;
      if (unif(rng) < p) {
        edges.push_back({i, j});
        edges.push_back({j, i});
      }
    }
  }
  return AttributedGraph(cfg.n_vertices, std::move(edges));
}

}  // namespace rssm
