#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include "rssm/experiments.hpp"

namespace rssm {

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: no samples");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void PredictionScore::add(double err, bool hit, bool first_step) {
  se_ += err * err;
  hit_ += hit;
  ++n_;
  if (first_step) {
    se1_ += err * err;
    hit1_ += hit;
    ++n1_;
  }
}

void PredictionScore::merge(const PredictionScore& o) {
  se_ += o.se_;
  se1_ += o.se1_;
  n_ += o.n_;
  n1_ += o.n1_;
  hit_ += o.hit_;
  hit1_ += o.hit1_;
}

void PredictionScore::add_samples(std::vector<double> samples, double truth, bool first_step) {
  double m = 0.0;
  for (double s : samples) m += s;
  m /= static_cast<double>(samples.size());
  const double lo = quantile(samples, 0.05), hi = quantile(std::move(samples), 0.95);
  add(truth - m, truth >= lo && truth <= hi, first_step);
}

void PredictionScore::add_gaussian(double mean, double var, double truth, bool first_step) {
  const double half = kZ95 * std::sqrt(var);
  add(truth - mean, std::abs(truth - mean) <= half, first_step);
}

// ---------------------------------------------------------------------------

namespace {
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat flat_series(const Array& x) {
  if (x.rank() != 3) throw ShapeError("VAR: expected a T x N x d series");
  const std::size_t T = x.shape()[0], D = x.shape()[1] * x.shape()[2];
  return Eigen::Map<const Mat>(x.data(), static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D));
}
}  // namespace

VarFit fit_var(const Array& x, std::size_t fit_steps) {
  const Mat X = flat_series(x);
  const Eigen::Index D = X.cols();
  if (fit_steps > static_cast<std::size_t>(X.rows()) || fit_steps < 2)
    throw std::invalid_argument("fit_var: fit window must cover 2..T steps");
  const Eigen::Index n = static_cast<Eigen::Index>(fit_steps) - 1;
  Mat design(n, D + 1);
  design.leftCols(D) = X.topRows(n);
  design.col(D).setOnes();
  const Mat Y = X.middleRows(1, n);

  VarFit fit;
  Mat gram = design.transpose() * design;
  Eigen::LDLT<Mat> ldlt(gram);
  Mat W;
  const auto piv = ldlt.vectorD().cwiseAbs();
  const bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() && piv.maxCoeff() > 0 &&
                  piv.minCoeff() > 1e-12 * piv.maxCoeff();
  if (ok) {
    W = ldlt.solve(design.transpose() * Y);
  } else {
    fit.ridge = true;
    std::cerr << "warning: VAR design is singular; using ridge 1e-6\n";
    gram.diagonal().array() += 1e-6;
    W = gram.ldlt().solve(design.transpose() * Y);
  }
  const Mat resid = Y - design * W;
  const double dof = std::max<double>(1.0, static_cast<double>(n - (D + 1)));

  fit.A = Array({static_cast<std::size_t>(D), static_cast<std::size_t>(D)});
  fit.b = Array({1, static_cast<std::size_t>(D)});
  fit.var = Array({1, static_cast<std::size_t>(D)});
  for (Eigen::Index i = 0; i < D; ++i) {
    for (Eigen::Index j = 0; j < D; ++j) fit.A(i, j) = W(j, i);
    fit.b[i] = W(D, i);
    fit.var[i] = std::max(resid.col(i).squaredNorm() / dof, 1e-12);
  }
  return fit;
}

MetricsReport var_metrics(const std::vector<Episode>& episodes, std::size_t history) {
  MetricsReport rep;
  PredictionScore score;
  double ll = 0.0;
  for (const Episode& ep : episodes) {
    const VarFit fit = fit_var(ep.x, history);
    const Mat X = flat_series(ep.x);
    const std::size_t D = static_cast<std::size_t>(X.cols());
    for (std::size_t t = history; t < static_cast<std::size_t>(X.rows()); ++t) {
      for (std::size_t i = 0; i < D; ++i) {
        double pred = fit.b[i];
        for (std::size_t j = 0; j < D; ++j) pred += fit.A(i, j) * X(t - 1, j);
        const double truth = X(t, i), var = fit.var[i];
        ll += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (truth - pred) * (truth - pred) / var;
        score.add_gaussian(pred, var, truth, t == history);
      }
    }
  }
  rep.n_examples = episodes.size();
  rep.ll = episodes.empty() ? 0.0 : ll / static_cast<double>(episodes.size());
  rep.mse = score.mse();
  rep.cp = score.cp();
  rep.mse_single = score.mse_single();
  rep.cp_single = score.cp_single();
  return rep;
}

// ---------------------------------------------------------------------------

void LgssmParams::validate() const {
  if (!(q > 0) || !(r > 0) || !(v0 > 0)) throw std::invalid_argument("lgssm: q, r and v0 must be positive");
}

double kalman_loglik(const LgssmParams& p, const std::vector<double>& x) {
  p.validate();
  double m = p.m0, v = p.v0, ll = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (t > 0) {
      m = p.a * m;
      v = p.a * p.a * v + p.q;
    }
    const double s = p.c * p.c * v + p.r;
    const double e = x[t] - p.c * m;
    ll += -0.5 * std::log(2.0 * std::numbers::pi * s) - 0.5 * e * e / s;
    const double gain = v * p.c / s;
    m += gain * e;
    v *= 1.0 - gain * p.c;
  }
  return ll;
}

std::vector<double> sample_lgssm(const LgssmParams& p, std::size_t steps, Rng& rng) {
  p.validate();
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(steps);
  double z = p.m0 + std::sqrt(p.v0) * n(rng);
  for (std::size_t t = 0; t < steps; ++t) {
    if (t > 0) z = p.a * z + std::sqrt(p.q) * n(rng);
    x[t] = p.c * z + std::sqrt(p.r) * n(rng);
  }
  return x;
}

void LgssmTarget::init(std::size_t particles) { z_.assign(particles, 0.0); }

std::vector<double> LgssmTarget::step(std::size_t t, Noise& noise) {
  const std::size_t K = z_.size();
  Array eps = noise.normal(K, 1);
  std::vector<double> lw(K);
  for (std::size_t k = 0; k < K; ++k) {
    z_[k] = t == 0 ? p_.m0 + std::sqrt(p_.v0) * eps[k] : p_.a * z_[k] + std::sqrt(p_.q) * eps[k];
    const double e = x_.at(t) - p_.c * z_[k];
    lw[k] = -0.5 * std::log(2.0 * std::numbers::pi * p_.r) - 0.5 * e * e / p_.r;
  }
  return lw;
}

void LgssmTarget::select(const std::vector<int>& ancestors) {
  std::vector<double> z(ancestors.size());
  for (std::size_t k = 0; k < ancestors.size(); ++k) z[k] = z_[ancestors[k]];
  z_.swap(z);
}

}  // namespace rssm
