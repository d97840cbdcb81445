#include "rssm/auxobj.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

namespace rssm {

AuxModel::AuxModel(ParamStore& store, const ModelConfig& cfg, Rng& rng, const std::string& prefix)
    : cfg_(cfg), negatives_(cfg.aux_negatives) {
  const std::size_t H = cfg.rnn_hidden;
  backward_rnn_ = LstmStack(store, prefix + ".backward_rnn", cfg.x_dim, H, cfg.rnn_layers, rng);
  score1 = store.add(prefix + ".score1", init_array(cfg.global_dim + cfg.z_dim, H, Init::kFanIn, rng));
  neighbor_mlp_ = Mlp(store, prefix + ".neighbor_mlp", H, {cfg.mlp_hidden}, H, rng);
  score2 = store.add(prefix + ".score2", init_array(H, H, Init::kFanIn, rng));
}

FutureSummaries AuxModel::summarize_future(const Bound& p, const EpisodeBatch& batch) const {
  const std::size_t T = batch.steps();
  if (T < 2) throw std::invalid_argument("summarize_future: need at least two steps");
  FutureSummaries out;
  out.c.resize(T - 1);
  LstmState s = backward_rnn_.zero_state(batch.graph().n_rows());
  for (std::size_t t = T - 1; t >= 1; --t) {
    s = backward_rnn_.step(p, s, batch.x(t));
    out.c[t - 1] = s.back().h;
  }
  return out;
}

Var info_nce_rows(const Var& logits) { return slice_cols(log_softmax(logits, 1), 0, 1); }

AuxLosses AuxModel::losses(const Bound& p, const std::vector<StepParticles>& particles,
                           const FutureSummaries& summaries, const GraphBatch& g,
                           const std::vector<int>& example_row, std::size_t n_examples, Noise& noise) const {
  if (particles.size() != summaries.c.size())
    throw ShapeError("aux losses: " + std::to_string(particles.size()) + " particle steps for " +
                     std::to_string(summaries.c.size()) + " summaries");
  const std::size_t R = g.n_rows();
  const double particles_per_example = static_cast<double>(g.n_segments()) / static_cast<double>(n_examples);
  const double norm = 1.0 / (particles_per_example * static_cast<double>(n_examples));
  Var l1(Array::scalar(0.0)), l2(Array::scalar(0.0));
  if (particles.empty()) return {l1, l2};

  const std::size_t R0 = summaries.c[0].rows();
  const std::size_t M = std::min(negatives_, R0 - 1);
  if (M == 0 && negatives_ > 0)
    std::cerr << "warning: no negatives available for the auxiliary losses; they contribute 0\n";

  std::vector<int> pool(R0 > 0 ? R0 - 1 : 0);
  for (std::size_t t = 0; t < particles.size(); ++t) {
    const StepParticles& sp = particles[t];
    const Var& c = summaries.c[t];

    // Candidate summary rows per example row: the positive, then M negatives.
    std::vector<std::vector<int>> cand(1 + M, std::vector<int>(R0));
    for (std::size_t r = 0; r < R0; ++r) {
      cand[0][r] = static_cast<int>(r);
      if (M == 0) continue;
      std::iota(pool.begin(), pool.end(), 0);
      for (int& j : pool)
        if (j >= static_cast<int>(r)) ++j;
      for (std::size_t m = 0; m < M; ++m) {
        const std::size_t pick = m + noise.index(pool.size() - m);
        std::swap(pool[m], pool[pick]);
        cand[1 + m][r] = pool[m];
      }
    }
    std::vector<Var> cand_rows;
    for (const auto& col : cand) {
      std::vector<int> idx(R);
      for (std::size_t r = 0; r < R; ++r) idx[r] = col[example_row[r]];
      cand_rows.push_back(gather_rows(c, idx));
    }
    auto term = [&](const Var& a, std::size_t w) {
      Var aw = matmul(a, p[w]);
      std::vector<Var> logits;
      for (const Var& cr : cand_rows) logits.push_back(sum(aw * cr, 1));
      return sum(info_nce_rows(concat_cols(logits)));
    };

    Var zhat = concat_cols({rows_by_segment(sp.z_global, g.row_segment()), sp.z_local});
    l1 = l1 + term(zhat, score1);
    Var neigh = segment_sum(gather_rows(sp.h, g.proper_edge_tail()), g.proper_edge_head(), R);
    l2 = l2 + term(neighbor_mlp_(p, neigh), score2);
  }
  return {scale(l1, norm), scale(l2, norm)};
}

}  // namespace rssm
