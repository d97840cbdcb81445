#include "rssm/gnf.hpp"

#include <cmath>
#include <stdexcept>

namespace rssm {

namespace {

Var per_row(const Var& scalar, std::size_t rows) { return Var(Array::full(rows, 1, 1.0)) * scalar; }

void require_width(const char* who, const Var& z, std::size_t dim) {
  if (z.cols() != dim)
    throw ShapeError(std::string(who) + ": input width " + std::to_string(z.cols()) + ", flow expects " +
                     std::to_string(dim));
}

}  // namespace

// ---------------------------------------------------------------------------
// Affine

AffineLayer::AffineLayer(ParamStore& store, const std::string& name, std::size_t dim) {
  log_scale = store.add(name + ".log_scale", Array({1, dim}));
  shift = store.add(name + ".shift", Array({1, dim}));
}

FlowResult AffineLayer::forward(const Bound& p, const Var& z) const {
  require_width("AffineLayer", z, p[log_scale].cols());
  return {z * exp(p[log_scale]) + p[shift], per_row(sum(p[log_scale]), z.rows())};
}

FlowResult AffineLayer::inverse(const Bound& p, const Var& z) const {
  require_width("AffineLayer", z, p[log_scale].cols());
  return {(z - p[shift]) * exp(neg(p[log_scale])), per_row(neg(sum(p[log_scale])), z.rows())};
}

void AffineLayer::data_init(ParamStore& store, const Array& batch) const {
  const std::size_t n = batch.rows(), d = batch.cols();
  if (d != store.value(log_scale).cols()) throw ShapeError("AffineLayer::data_init: channel count mismatch");
  if (n < 2) throw std::invalid_argument("AffineLayer::data_init: need at least two samples per channel");
  Array& ls = store.value(log_scale);
  Array& sh = store.value(shift);
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += batch(r, c);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t r = 0; r < n; ++r) v += (batch(r, c) - m) * (batch(r, c) - m);
    v /= static_cast<double>(n);
    if (!(v > 0.0)) throw NumericError("AffineLayer::data_init: channel " + std::to_string(c) + " has zero variance");
    const double s = std::sqrt(v);
    ls[c] = -std::log(s);
    sh[c] = -m / s;
  }
}

// ---------------------------------------------------------------------------
// Coupling

CouplingLayer::CouplingLayer(ParamStore& store, const std::string& name, const FlowConfig& cfg, Rng& rng)
    : dim_(cfg.dim), split_(cfg.dim / 2), s_scale_(cfg.s_scale) {
  if (split_ == 0 || split_ >= dim_) throw std::invalid_argument("CouplingLayer: need D >= 2");
  embed_ = Linear(store, name + ".embed", split_, cfg.hidden, rng);
  MhaConfig m;
  m.dim = cfg.hidden;
  m.context_dim = cfg.context_dim;
  m.vertex_attr_dim = cfg.vertex_attr_dim;
  m.edge_attr_dim = cfg.edge_attr_dim;
  m.heads = cfg.heads;
  m.query_dim = cfg.query_dim;
  m.value_dim = cfg.value_dim;
  m.hidden = cfg.hidden;
  m.combine = Combine::kResidual;
  mha_ = MhaBlock(store, name + ".mha", m, rng);
  head_ = Linear(store, name + ".head", cfg.hidden, 2 * (dim_ - split_), rng, Init::kZero);
}

CouplingLayer::ScaleShift CouplingLayer::conditioner(const Bound& p, const GraphBatch& g, const Var& context,
                                                     const Var& za) const {
  Var h = mha_.forward(p, g, context, tanh(embed_(p, za)));
  Var out = head_(p, h);
  const std::size_t nb = dim_ - split_;
  return {scale(tanh(slice_cols(out, 0, nb)), s_scale_), slice_cols(out, nb, 2 * nb)};
}

FlowResult CouplingLayer::forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const {
  require_width("CouplingLayer", z, dim_);
  Var za = slice_cols(z, 0, split_);
  Var zb = slice_cols(z, split_, dim_);
  auto [s, t] = conditioner(p, g, context, za);
  return {concat_cols({za, zb * exp(s) + t}), sum(s, 1)};
}

FlowResult CouplingLayer::inverse(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const {
  require_width("CouplingLayer", z, dim_);
  Var za = slice_cols(z, 0, split_);
  Var zb = slice_cols(z, split_, dim_);
  auto [s, t] = conditioner(p, g, context, za);
  return {concat_cols({za, (zb - t) * exp(neg(s))}), neg(sum(s, 1))};
}

// ---------------------------------------------------------------------------
// 1x1 convolution

InvertibleConv::InvertibleConv(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng, bool identity)
    : dim_(dim) {
  Array v({dim, dim});
  if (!identity) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : v.vec()) x = n(rng);
  }
  reflections = store.add(name + ".reflections", std::move(v));
  upper = store.add(name + ".upper", Array({dim, dim}));
  log_diag = store.add(name + ".log_diag", Array({1, dim}));
  Array mask({dim, dim});
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j) mask(i, j) = 1.0;
  strict_upper_mask_ = std::make_shared<const Array>(std::move(mask));
  eye_ = std::make_shared<const Array>(Array::eye(dim));
}

Var InvertibleConv::q_matrix(const Bound& p) const {
  const Var& v_all = p[reflections];
  Var q(eye_);
  for (std::size_t k = 0; k < dim_; ++k) {
    Var v = slice_rows(v_all, k, k + 1);
    double norm2 = 0.0;
    for (double x : v.value().vec()) norm2 += x * x;
    if (norm2 == 0.0) continue;
    Var reflect = Var(eye_) - matmul(transpose(v), v) * scale(Var(Array::scalar(1.0)) / sum(square(v)), 2.0);
    q = matmul(q, reflect);
  }
  return q;
}

Var InvertibleConv::r_matrix(const Bound& p) const {
  return p[upper] * Var(strict_upper_mask_) + Var(eye_) * exp(p[log_diag]);
}

Var InvertibleConv::weight(const Bound& p) const { return matmul(q_matrix(p), r_matrix(p)); }

FlowResult InvertibleConv::forward(const Bound& p, const Var& z) const {
  require_width("InvertibleConv", z, dim_);
  return {matmul(z, transpose(weight(p))), per_row(sum(p[log_diag]), z.rows())};
}

FlowResult InvertibleConv::inverse(const Bound& p, const Var& z) const {
  require_width("InvertibleConv", z, dim_);
  // W^{-T} = Q R^{-T}
  Var w_inv_t = matmul(q_matrix(p), transpose(rssm::inverse(r_matrix(p))));
  return {matmul(z, w_inv_t), per_row(neg(sum(p[log_diag])), z.rows())};
}

// ---------------------------------------------------------------------------
// Stack

FlowStack::FlowStack(ParamStore& store, const std::string& name, const FlowConfig& cfg, std::size_t n_steps,
                     Rng& rng) {
  for (std::size_t k = 0; k < n_steps; ++k) {
    const std::string prefix = name + ".gnf" + std::to_string(k);
    affine_.emplace_back(store, prefix + ".affine", cfg.dim);
    coupling_.emplace_back(store, prefix + ".coupling", cfg, rng);
    conv_.emplace_back(store, prefix + ".conv", cfg.dim, rng);
  }
}

FlowResult FlowStack::forward(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const {
  Var cur = z;
  Var logdet(Array::zeros(z.rows(), 1));
  for (std::size_t k = 0; k < affine_.size(); ++k) {
    FlowResult a = affine_[k].forward(p, cur);
    cur = a.z;
    logdet = logdet + a.logdet;
    FlowResult c = coupling_[k].forward(p, g, context, cur);
    cur = c.z;
    logdet = logdet + c.logdet;
    FlowResult w = conv_[k].forward(p, cur);
    cur = w.z;
    logdet = logdet + w.logdet;
  }
  return {cur, logdet};
}

FlowResult FlowStack::inverse(const Bound& p, const GraphBatch& g, const Var& context, const Var& z) const {
  Var cur = z;
  Var logdet(Array::zeros(z.rows(), 1));
  for (std::size_t k = affine_.size(); k-- > 0;) {
    FlowResult w = conv_[k].inverse(p, cur);
    FlowResult c = coupling_[k].inverse(p, g, context, w.z);
    FlowResult a = affine_[k].inverse(p, c.z);
    cur = a.z;
    logdet = logdet + w.logdet + c.logdet + a.logdet;
  }
  return {cur, logdet};
}

Var flow_log_prob_rows(const Bound& p, const FlowStack& stack, const DiagGaussian& base, const GraphBatch& g,
                       const Var& context, const Var& z) {
  if (stack.empty()) return base.log_prob(z);
  FlowResult inv = stack.inverse(p, g, context, z);
  return base.log_prob(inv.z) + inv.logdet;
}

Var flow_logprob(const Bound& p, const FlowStack& stack, const Var& base_mean, const Var& base_var,
                 const GraphBatch& g, const Var& context, const Var& z) {
  return sum(flow_log_prob_rows(p, stack, DiagGaussian{base_mean, base_var}, g, context, z));
}

}  // namespace rssm
