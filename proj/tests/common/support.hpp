#pragma once

// Test fixtures shared by the unit tests and the acceptance checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "rssm/experiments.hpp"

namespace rssm::testing {

inline Array random_array(Shape s, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Array a(std::move(s));
  for (double& v : a.vec()) v = n(rng);
  return a;
}

// Infinite when the shapes differ.
inline double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central differences of a scalar function of several arrays.
inline std::vector<Array> numeric_gradient(const std::function<double(const std::vector<Array>&)>& f,
                                           std::vector<Array> x, double h = 1e-6) {
  std::vector<Array> g;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Array gk(x[k].shape());
    for (std::size_t i = 0; i < x[k].size(); ++i) {
      const double v = x[k][i];
      x[k][i] = v + h;
      const double fp = f(x);
      x[k][i] = v - h;
      const double fm = f(x);
      x[k][i] = v;
      gk[i] = (fp - fm) / (2 * h);
    }
    g.push_back(std::move(gk));
  }
  return g;
}

// Analytic gradient of a scalar Var function through the tape.
inline std::vector<Array> tape_gradient(const std::function<Var(const std::vector<Var>&)>& f,
                                        const std::vector<Array>& x) {
  Tape tape;
  Tape::Scope scope(tape);
  std::vector<Var> vars;
  for (const Array& a : x) vars.push_back(tape.variable(a));
  const Var out = f(vars);
  return tape.gradient(out, vars);
}

inline double relative_error(const Array& a, const Array& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i] + a[i] * a[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// Small architecture for fast tests.
inline ModelConfig tiny_model(std::size_t z_dim = 2) {
  ModelConfig c;
  c.z_dim = z_dim;
  c.global_dim = 2;
  c.rnn_hidden = 6;
  c.rnn_layers = 2;
  c.mlp_hidden = 6;
  c.heads = 2;
  c.query_dim = 3;
  c.value_dim = 3;
  c.vertex_embed_dim = 3;
  c.readout_dim = 5;
  c.flow_hidden = 6;
  c.aux_negatives = 3;
  return c;
}

inline AttributedGraph random_graph(int n, Rng& rng, double p = 0.5, std::size_t vertex_dim = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && u(rng) < p) edges.push_back({i, j});
  AttributedGraph g(n, std::move(edges));
  if (vertex_dim) g.set_vertex_attrs(random_array({static_cast<std::size_t>(n), vertex_dim}, rng));
  return g;
}

inline std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Row i of `a` moved to row perm[i].
inline Array permute_rows(const Array& a, const std::vector<int>& perm) {
  Array out(a.shape());
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) out(static_cast<std::size_t>(perm[i]), k) = a(i, k);
  return out;
}

inline Episode random_episode(const AttributedGraph& g, std::size_t steps, std::size_t x_dim, Rng& rng,
                              std::size_t u_dim = 0) {
  const std::size_t n = static_cast<std::size_t>(g.n_vertices());
  return Episode{std::make_shared<AttributedGraph>(g), random_array({steps, n, x_dim}, rng),
                 random_array({steps, n, u_dim}, rng)};
}

// Episode with vertices relabelled by perm (x rows permuted per step).
inline Episode permute_episode(const Episode& ep, const std::vector<int>& perm) {
  const std::size_t T = ep.steps(), n = ep.n_vertices();
  auto pe = [&](const Array& a) {
    const std::size_t d = a.shape()[2];
    Array out(a.shape());
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) out[(t * n + perm[i]) * d + k] = a[(t * n + i) * d + k];
    return out;
  };
  return Episode{std::make_shared<AttributedGraph>(ep.graph->permuted(perm)), pe(ep.x), pe(ep.u)};
}

inline void set_param(ParamStore& store, const std::string& name, double v) {
  const auto i = store.find(name);
  if (!i) throw std::invalid_argument("no parameter " + name);
  for (double& x : store.value(*i).vec()) x = v;
}

// Makes a GaussianHead output the constant N(mean, var).
inline void pin_head(ParamStore& store, const std::string& prefix, double mean, double var) {
  set_param(store, prefix + ".mean2.w", 0.0);
  set_param(store, prefix + ".mean2.b", mean);
  set_param(store, prefix + ".var2.w", 0.0);
  set_param(store, prefix + ".var2.b", std::log(std::expm1(var - kVarianceFloor)));
}

inline void perturb(ParamStore& store, Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (double& v : store.value(i).vec()) v += n(rng);
}

}  // namespace rssm::testing
