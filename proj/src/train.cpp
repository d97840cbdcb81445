#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rssm/experiments.hpp"

namespace rssm {

double linear_cosine_lr(double lr0, double floor, std::size_t step, std::size_t total) {
  if (total == 0) return lr0 * (1.0 + floor);
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return lr0 * ((1.0 - f) * (0.5 + 0.5 * std::cos(std::numbers::pi * f)) + floor);
}

double global_norm(const std::vector<Array>& grads) {
  double s = 0.0;
  for (const Array& g : grads)
    for (double v : g.vec()) s += v * v;
  return std::sqrt(s);
}

Trainer::Trainer(RssmModel& model, const std::vector<Episode>& data, TrainConfig cfg, std::uint64_t seed)
    : model_(model), data_(data), cfg_(cfg), rng_(seed) {
  if (data.empty()) throw std::invalid_argument("train: empty training split");
  if (cfg.batch == 0 || cfg.particles == 0) throw std::invalid_argument("train: batch and particles must be positive");
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    adam_.m.emplace_back(model.params.value(i).shape());
    adam_.v.emplace_back(model.params.value(i).shape());
  }
}

Trainer::Evaluation Trainer::evaluate(const std::vector<std::size_t>& examples, Noise& noise) const {
  std::vector<const Episode*> eps;
  for (std::size_t i : examples) eps.push_back(&data_.at(i));
  EpisodeBatch batch(eps);

  Tape tape;
  Evaluation ev;
  {
    Tape::Scope scope(tape);
    Bound p(model_.params, tape);
    const bool aux = (cfg_.beta1 != 0.0 || cfg_.beta2 != 0.0) && batch.steps() >= 2;
    SmcOptions so;
    so.particles = cfg_.particles;
    so.scheme = cfg_.scheme;
    so.keep_particles = aux;
    BoundResult br = model_.smc().estimate_bound(p, batch, so, noise);
    Var objective = br.bound;
    ev.bound = br.bound.value().item();
    ev.kl = br.kl_estimate;
    if (aux) {
      FutureSummaries fs = model_.aux.summarize_future(p, batch);
      AuxLosses al = model_.aux.losses(p, br.particles, fs, br.graph, br.example_row, batch.size(), noise);
      ev.l1 = al.l1.value().item();
      ev.l2 = al.l2.value().item();
      objective = objective + scale(al.l1, cfg_.beta1) + scale(al.l2, cfg_.beta2);
    }
    ev.objective = objective.value().item();
    if (!std::isfinite(ev.objective)) throw NumericError("train: non-finite objective");
    ev.grads = tape.gradient(objective, p.vars());
  }
  return ev;
}

StepStats Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  // Minibatch without replacement within the batch.
  const std::size_t n = data_.size(), B = std::min(cfg_.batch, data_.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < B; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng_)]);
  }
  idx.resize(B);

  RngNoise noise(rng_);
  Evaluation ev = evaluate(idx, noise);
  for (const Array& g : ev.grads)
    if (!g.all_finite()) throw NumericError("train: non-finite gradient");

  StepStats st;
  st.grad_norm = global_norm(ev.grads);
  const double clip = st.grad_norm > cfg_.clip ? cfg_.clip / st.grad_norm : 1.0;
  st.lr = linear_cosine_lr(cfg_.lr, cfg_.lr_floor, adam_.step, cfg_.steps);

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++adam_.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_.step));
  for (std::size_t i = 0; i < model_.params.size(); ++i) {
    Array& w = model_.params.value(i);
    Array& m = adam_.m[i];
    Array& v = adam_.v[i];
    const Array& g = ev.grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      // Gradient ascent on the objective.
      const double gj = -g[j] * clip;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      if (st.lr != 0.0) w[j] -= st.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
  st.step = adam_.step;
  st.bound = ev.bound;
  st.l1 = ev.l1;
  st.l2 = ev.l2;
  st.kl = ev.kl;
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return st;
}

}  // namespace rssm
