#include <cmath>
#include <stdexcept>

#include "rssm/experiments.hpp"

namespace rssm {

ToyConfig ToyConfig::small() {
  ToyConfig c;
  c.n_vertices = 12;
  c.steps = 40;
  c.n_train = 1000;
  c.n_valid = 200;
  c.n_test = 200;
  return c;
}

void ToyConfig::validate() const {
  if (covariate_dim == 0) throw std::invalid_argument("toy: covariate_dim must be positive");
  if (eta.size() != covariate_dim)
    throw std::invalid_argument("toy: eta has " + std::to_string(eta.size()) + " entries, covariate_dim is " +
                                std::to_string(covariate_dim));
  if (steps == 0) throw std::invalid_argument("toy: steps must be positive");
  if (sigma_x < 0 || sigma_z < 0) throw std::invalid_argument("toy: noise scales must be non-negative");
  SbmConfig{n_vertices, n_communities, p_within, p_between}.validate();
}

const ToySplit& ToyDataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "'; valid options: train, valid, test");
}

Rng example_rng(std::uint64_t seed, int split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  return Rng(seq);
}

Episode generate_toy_example(const ToyConfig& cfg, Rng& rng, Array* latents) {
  cfg.validate();
  auto g = std::make_shared<AttributedGraph>(
      sample_sbm(SbmConfig{cfg.n_vertices, cfg.n_communities, cfg.p_within, cfg.p_between}, rng));
  const std::size_t n = static_cast<std::size_t>(cfg.n_vertices), dv = cfg.covariate_dim, T = cfg.steps;
  std::normal_distribution<double> normal(0.0, 1.0);

  Array v({n, dv});
  for (double& x : v.vec()) x = normal(rng);
  std::vector<double> drift(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dv; ++k) drift[i] += cfg.eta[k] * v(i, k);
  g->set_vertex_attrs(v);

  std::vector<double> z(n), z_next(n);
  for (double& x : z) x = normal(rng);
  Episode ep{g, Array({T, n, 1}), Array({T, n, 0})};
  if (latents) *latents = Array({T, n, 1});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& nb = g->in_neighbors(static_cast<int>(i));
      double nm = 0.0;
      for (int j : nb) nm += z[j];
      if (!nb.empty()) nm /= static_cast<double>(nb.size());
      const double zt = drift[i] + cfg.alpha1 * nm + cfg.alpha2 * z[i];
      z_next[i] = std::cos(zt) + cfg.sigma_z * normal(rng);
    }
    z.swap(z_next);
    for (std::size_t i = 0; i < n; ++i) {
      ep.x[t * n + i] = std::tanh(cfg.epsilon * z[i]) + cfg.sigma_x * normal(rng);
      if (latents) (*latents)[t * n + i] = z[i];
    }
  }
  return ep;
}

ToyDataset generate_toy(const ToyConfig& cfg, std::uint64_t seed, bool keep_latents) {
  cfg.validate();
  ToyDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ToySplit* splits[] = {&ds.train, &ds.valid, &ds.test};
  const std::size_t counts[] = {cfg.n_train, cfg.n_valid, cfg.n_test};
  for (int s = 0; s < 3; ++s) {
    splits[s]->episodes.reserve(counts[s]);
    for (std::size_t i = 0; i < counts[s]; ++i) {
      Rng rng = example_rng(seed, s, i);
      Array lat;
      splits[s]->episodes.push_back(generate_toy_example(cfg, rng, keep_latents ? &lat : nullptr));
      if (keep_latents) splits[s]->latents.push_back(std::move(lat));
    }
  }
  return ds;
}

}  // namespace rssm
