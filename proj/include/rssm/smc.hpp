#pragma once

// Variational sequential Monte Carlo: the particle filter whose log
// normalizer estimate is the training bound, plus a generic scalar filter
// used with closed-form models.

#include <functional>
#include <string>
#include <vector>

#include "rssm/inference.hpp"

namespace rssm {

enum class ResampleScheme { kSystematic, kMultinomial };

std::string to_string(ResampleScheme s);
ResampleScheme parse_resample_scheme(const std::string& name);

// Ancestor indices drawn in proportion to exp(log_weights). Systematic
// resampling consumes one uniform, multinomial one per particle.
std::vector<int> resample(const std::vector<double>& log_weights, Noise& noise,
                          ResampleScheme scheme = ResampleScheme::kSystematic);

double log_mean_exp(const std::vector<double>& v);

// A model the generic filter can drive: K particles advanced in lockstep.
class ParticleModel {
 public:
  virtual ~ParticleModel() = default;
  virtual void init(std::size_t particles) = 0;
  // Moves every particle to step t and returns its log incremental weight.
  virtual std::vector<double> step(std::size_t t, Noise& noise) = 0;
  virtual void select(const std::vector<int>& ancestors) = 0;
};

struct FilterResult {
  double log_likelihood = 0.0;
  std::vector<std::vector<int>> ancestors;  // entry t-1 chose the parents of step t
};

FilterResult run_filter(ParticleModel& model, std::size_t steps, std::size_t particles, Noise& noise,
                        ResampleScheme scheme = ResampleScheme::kSystematic);

struct SmcOptions {
  std::size_t particles = 4;
  ResampleScheme scheme = ResampleScheme::kSystematic;
  // Sample from the transition prior instead of the proposal.
  bool bootstrap_proposal = false;
  // When false the observation density is taken to be 1.
  bool weight_observations = true;
  // Keep the resampled particles of steps 1..T-1 for the auxiliary losses.
  bool keep_particles = true;
};

// Resampled, unweighted particles of one step.
struct StepParticles {
  Var z_global;  // S x d_g
  Var z_local;   // R x d_z
  Var h;         // R x hidden, H_t
};

// Weighted particles right after the weights of step t are computed.
struct FilterSnapshot {
  std::size_t step = 0;
  const GraphBatch* graph = nullptr;  // particle graph
  const ModelState* state = nullptr;
  std::vector<double> log_weights;  // per segment
};

struct BoundResult {
  Var bound;                // mean over examples of the per-example bound
  Array per_example;        // B x 1
  Array per_step;           // T x B, log mean weight at each step
  double kl_estimate = 0;   // mean log q - log f per step and example
  GraphBatch graph;         // examples x particles
  std::vector<int> example_row;  // particle row -> example row
  std::vector<StepParticles> particles;
  std::vector<std::vector<int>> ancestors;  // segment ancestors chosen before step t+1
};

class RssmSmc {
 public:
  RssmSmc(const GenerativeModel& gen, const ProposalModel& prop) : gen_(gen), prop_(prop) {}

  BoundResult estimate_bound(const Bound& p, const EpisodeBatch& batch, const SmcOptions& opt, Noise& noise,
                             const std::function<void(const FilterSnapshot&)>& observer = {}) const;

 private:
  const GenerativeModel& gen_;
  const ProposalModel& prop_;
};

}  // namespace rssm
