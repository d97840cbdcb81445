#pragma once

// Contrastive auxiliary objectives: backward-RNN future summaries scored
// against latent particles and neighbour states with log-bilinear models.

#include <string>
#include <vector>

#include "rssm/smc.hpp"

namespace rssm {

// c_t for t = 0..T-2 (c_{T-1} has no future); each R0 x d_c over example rows.
struct FutureSummaries {
  std::vector<Var> c;
};

struct AuxLosses {
  Var l1;  // scalar, mean over examples
  Var l2;
};

class AuxModel {
 public:
  AuxModel() = default;
  AuxModel(ParamStore& store, const ModelConfig& cfg, Rng& rng, const std::string& prefix = "aux");

  FutureSummaries summarize_future(const Bound& p, const EpisodeBatch& batch) const;

  // `particles[t]` holds the resampled particles of step t on `graph`
  // (examples x particles); `example_row` maps particle rows to summary rows.
  // Negatives are other rows of the same step within the batch.
  AuxLosses losses(const Bound& p, const std::vector<StepParticles>& particles, const FutureSummaries& summaries,
                   const GraphBatch& graph, const std::vector<int>& example_row, std::size_t n_examples,
                   Noise& noise) const;

  std::size_t score1 = 0, score2 = 0;  // bilinear matrices
  std::size_t negatives() const { return negatives_; }

 private:
  ModelConfig cfg_;
  std::size_t negatives_ = 8;
  LstmStack backward_rnn_;
  Mlp neighbor_mlp_;
};

// Row-wise InfoNCE term: log softmax of column 0 of `logits` (R x (1+M)).
Var info_nce_rows(const Var& logits);

}  // namespace rssm
