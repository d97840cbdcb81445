#pragma once

// Toy benchmark generation, baselines (VAR, linear-Gaussian SSM with the
// Kalman filter), evaluation metrics and the training loop.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rssm/auxobj.hpp"

namespace rssm {

// ---------------------------------------------------------------------------
// Toy data

struct ToyConfig {
  std::size_t covariate_dim = 4;
  int n_vertices = 36;
  int n_communities = 3;
  double p_within = 1.0 / 3.0;
  double p_between = 1.0 / 18.0;
  std::size_t steps = 80;
  double alpha1 = 5.0;
  double alpha2 = -1.5;
  std::vector<double> eta{-1.5, 0.4, 2.0, -0.9};
  double sigma_x = 0.05;
  double sigma_z = 0.05;
  double epsilon = 2.5;
  std::size_t n_train = 10000, n_valid = 10000, n_test = 10000;

  static ToyConfig paper() { return {}; }
  static ToyConfig small();
  void validate() const;
};

struct ToySplit {
  std::vector<Episode> episodes;
  std::vector<Array> latents;  // T x N x 1 per episode (kept only on request)
};

struct ToyDataset {
  ToyConfig config;
  std::uint64_t seed = 0;
  ToySplit train, valid, test;

  const ToySplit& split(const std::string& name) const;
};

// One example; the graph carries the covariates as vertex attributes.
Episode generate_toy_example(const ToyConfig& cfg, Rng& rng, Array* latents = nullptr);
// Examples are seeded independently from (seed, split, index).
ToyDataset generate_toy(const ToyConfig& cfg, std::uint64_t seed, bool keep_latents = false);
Rng example_rng(std::uint64_t seed, int split, std::size_t index);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double ll = 0.0;
  double mse = 0.0;
  double cp = 0.0;
  double mse_single = 0.0;  // first predicted step only
  double cp_single = 0.0;
  std::size_t n_examples = 0;
  std::size_t mc_samples = 0;
  std::size_t particles = 0;
};

// Accumulates squared errors and 90% interval coverage.
class PredictionScore {
 public:
  // Sample-based prediction: point = mean, interval = [5%, 95%] percentiles.
  void add_samples(std::vector<double> samples, double truth, bool first_step);
  // Gaussian prediction with the given variance.
  void add_gaussian(double mean, double var, double truth, bool first_step);

  double mse() const { return n_ ? se_ / static_cast<double>(n_) : 0.0; }
  double cp() const { return n_ ? static_cast<double>(hit_) / static_cast<double>(n_) : 0.0; }
  double mse_single() const { return n1_ ? se1_ / static_cast<double>(n1_) : 0.0; }
  double cp_single() const { return n1_ ? static_cast<double>(hit1_) / static_cast<double>(n1_) : 0.0; }
  void merge(const PredictionScore& o);

 private:
  void add(double err, bool hit, bool first_step);
  double se_ = 0.0, se1_ = 0.0;
  std::size_t n_ = 0, n1_ = 0, hit_ = 0, hit1_ = 0;
};

// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> v, double q);

inline constexpr double kZ95 = 1.6448536269514722;

// ---------------------------------------------------------------------------
// VAR baseline

struct VarFit {
  Array A;    // D x D, x_t = A x_{t-1} + b
  Array b;    // 1 x D
  Array var;  // 1 x D residual variance
  bool ridge = false;
};

// Fits x_t = A x_{t-1} + b on the first `fit_steps` steps of a T x N x d series.
VarFit fit_var(const Array& x, std::size_t fit_steps);
MetricsReport var_metrics(const std::vector<Episode>& episodes, std::size_t history = 75);

// ---------------------------------------------------------------------------
// Linear-Gaussian state-space model

struct LgssmParams {
  double a = 0.9, q = 0.1, c = 1.0, r = 0.1;
  double m0 = 0.0, v0 = 1.0;  // z_1 ~ N(m0, v0)
  void validate() const;
};

double kalman_loglik(const LgssmParams& p, const std::vector<double>& x);
std::vector<double> sample_lgssm(const LgssmParams& p, std::size_t steps, Rng& rng);

// Bootstrap particle model for the generic filter.
class LgssmTarget final : public ParticleModel {
 public:
  LgssmTarget(LgssmParams p, std::vector<double> x) : p_(p), x_(std::move(x)) {}
  void init(std::size_t particles) override;
  std::vector<double> step(std::size_t t, Noise& noise) override;
  void select(const std::vector<int>& ancestors) override;

 private:
  LgssmParams p_;
  std::vector<double> x_;
  std::vector<double> z_;
};

// ---------------------------------------------------------------------------
// R-SSM bundle

struct RssmModel {
  RssmModel(const ModelConfig& cfg, std::uint64_t seed);
  RssmModel(const RssmModel&) = delete;
  RssmModel& operator=(const RssmModel&) = delete;

  ModelConfig config;
  ParamStore params;
  GenerativeModel gen;
  ProposalModel prop;
  AuxModel aux;
  RssmSmc smc() const { return RssmSmc(gen, prop); }
};

// Toy architecture presets: d_g = d_z = 8, 2-layer 32-unit LSTMs, 64-unit MLPs,
// one 4-head MHA layer in model and proposal.
ModelConfig toy_model_config();

struct EvalOptions {
  std::size_t particles = 1000;
  std::size_t mc_samples = 1000;
  std::size_t history = 75;
  std::size_t batch = 1;
  std::size_t workers = 1;  // threads over batches; results do not depend on it
};

// LL is the mean per-example bound; predictions filter on the observed
// prefix and push particles one step through the prior and observation head.
// Each batch draws from its own generator seeded by one draw from `rng`.
MetricsReport evaluate_model(const RssmModel& model, const std::vector<Episode>& episodes, const EvalOptions& opt,
                             Rng& rng);

// Predictive metrics of the true toy generator given the true previous latents.
MetricsReport oracle_toy_metrics(const ToyConfig& cfg, const ToySplit& split, std::size_t mc_samples,
                                 std::size_t history, Rng& rng);

// Free-running samples after filtering the first `burn_in` steps; the output
// is n_rollouts x T x N x d_x with the observed prefix copied in.
Array conditioned_rollout(const RssmModel& model, const Episode& episode, std::size_t burn_in,
                          std::size_t n_rollouts, std::size_t particles, Noise& noise);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch = 16;
  std::size_t particles = 4;
  double lr = 1e-3;
  double lr_floor = 1e-5;
  double clip = 1.0;
  double beta1 = 1.0;
  double beta2 = 1.0;
  ResampleScheme scheme = ResampleScheme::kSystematic;
  std::size_t checkpoint_every = 500;
};

// lr(s) = lr0 ((1 - s/S)(0.5 + 0.5 cos(pi s/S)) + floor)
double linear_cosine_lr(double lr0, double floor, std::size_t step, std::size_t total);

struct StepStats {
  std::size_t step = 0;  // 1-based index of the finished step
  double bound = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct AdamState {
  std::vector<Array> m, v;
  std::size_t step = 0;
};

class Trainer {
 public:
  Trainer(RssmModel& model, const std::vector<Episode>& data, TrainConfig cfg, std::uint64_t seed);

  // One optimizer step on a freshly drawn minibatch.
  StepStats step();
  // Objective value and gradients for a given minibatch under `noise`.
  struct Evaluation {
    double objective = 0.0;
    double bound = 0.0, l1 = 0.0, l2 = 0.0, kl = 0.0;
    std::vector<Array> grads;
  };
  Evaluation evaluate(const std::vector<std::size_t>& examples, Noise& noise) const;

  std::size_t steps_done() const { return adam_.step; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  RssmModel& model_;
  const std::vector<Episode>& data_;
  TrainConfig cfg_;
  Rng rng_;
  AdamState adam_;
};

double global_norm(const std::vector<Array>& grads);

}  // namespace rssm
