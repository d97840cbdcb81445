#include "rssm/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rssm {

std::size_t ParamStore::add(std::string name, Array value) {
  if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Bound::Bound(const ParamStore& store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) vars_.emplace_back(store.value(i));
}

Bound::Bound(const ParamStore& store, Tape& tape) : tape_(&tape) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) vars_.push_back(tape.variable(store.value(i)));
}

Array init_array(std::size_t rows, std::size_t cols, Init init, Rng& rng) {
  Array a({rows, cols});
  switch (init) {
    case Init::kZero:
      break;
    case Init::kFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(rows, 1)));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : a.vec()) v = u(rng);
      break;
    }
    case Init::kOrthogonal: {
      std::normal_distribution<double> n(0.0, 1.0);
      const std::size_t k = std::max(rows, cols);
      Eigen::MatrixXd g(k, k);
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
      Eigen::MatrixXd q = qr.householderQ();
      // Sign fix so the draw is Haar-distributed.
      const Eigen::MatrixXd r = qr.matrixQR();
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(k); ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) a(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      break;
    }
  }
  return a;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in_dim, std::size_t out_dim, Rng& rng,
               Init init)
    : in(in_dim), out(out_dim) {
  weight = store.add(name + ".w", init_array(in_dim, out_dim, init, rng));
  bias = store.add(name + ".b", Array({1, out_dim}));
}

Var Linear::operator()(const Bound& p, const Var& x) const {
  if (x.cols() != in)
    throw ShapeError("Linear: input has " + std::to_string(x.cols()) + " columns, layer expects " + std::to_string(in));
  return affine(x, p[weight], p[bias]);
}

Mlp::Mlp(ParamStore& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
         std::size_t out, Rng& rng, Init last_init) {
  std::size_t prev = in;
  for (std::size_t k = 0; k < hidden.size(); ++k) {
    layers.emplace_back(store, name + ".l" + std::to_string(k), prev, hidden[k], rng);
    prev = hidden[k];
  }
  layers.emplace_back(store, name + ".l" + std::to_string(hidden.size()), prev, out, rng, last_init);
}

Var Mlp::operator()(const Bound& p, const Var& x) const {
  Var h = x;
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) h = tanh(layers[k](p, h));
  return layers.back()(p, h);
}

Var DiagGaussian::log_prob(const Var& x) const {
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Var quad = square(x - mean) / var + log(var);
  return scale(add_scalar(sum(quad, 1), static_cast<double>(x.cols()) * log2pi), -0.5);
}

Var DiagGaussian::reparam(const Var& eps) const { return mean + sqrt(var) * eps; }

GaussianHead::GaussianHead(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                           std::size_t out, Rng& rng)
    : shared(store, name + ".shared", in, hidden, rng),
      mean1(store, name + ".mean1", hidden, hidden, rng),
      mean2(store, name + ".mean2", hidden, out, rng),
      var1(store, name + ".var1", hidden, hidden, rng),
      var2(store, name + ".var2", hidden, out, rng) {}

DiagGaussian GaussianHead::operator()(const Bound& p, const Var& x) const {
  Var s = tanh(shared(p, x));
  Var mu = mean2(p, tanh(mean1(p, s)));
  Var var = add_scalar(softplus(var2(p, tanh(var1(p, s)))), kVarianceFloor);
  return {mu, var};
}

LstmStack::LstmStack(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden_dim,
                     std::size_t layers, Rng& rng)
    : hidden(hidden_dim) {
  std::size_t prev = in;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string prefix = name + ".layer" + std::to_string(l);
    input.emplace_back(store, prefix + ".input", prev, 4 * hidden_dim, rng);
    Array& b = store.value(input.back().bias);
    for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) b[j] = 1.0;
    Array rec({hidden_dim, 4 * hidden_dim});
    for (std::size_t gate = 0; gate < 4; ++gate) {
      Array q = init_array(hidden_dim, hidden_dim, Init::kOrthogonal, rng);
      for (std::size_t i = 0; i < hidden_dim; ++i)
        for (std::size_t j = 0; j < hidden_dim; ++j) rec(i, gate * hidden_dim + j) = q(i, j);
    }
    recurrent.push_back(store.add(prefix + ".recurrent", std::move(rec)));
    prev = hidden_dim;
  }
}

LstmState LstmStack::zero_state(std::size_t rows) const {
  LstmState s(input.size());
  for (auto& layer : s) {
    layer.h = Var(Array::zeros(rows, hidden));
    layer.c = Var(Array::zeros(rows, hidden));
  }
  return s;
}

LstmState LstmStack::step(const Bound& p, const LstmState& state, const Var& x) const {
  if (state.size() != input.size()) throw ShapeError("LstmStack: state has wrong layer count");
  LstmState next(state.size());
  Var in = x;
  const std::size_t H = hidden;
  for (std::size_t l = 0; l < input.size(); ++l) {
    Var pre = input[l](p, in) + matmul(state[l].h, p[recurrent[l]]);
    Var i = sigmoid(slice_cols(pre, 0, H));
    Var f = sigmoid(slice_cols(pre, H, 2 * H));
    Var g = tanh(slice_cols(pre, 2 * H, 3 * H));
    Var o = sigmoid(slice_cols(pre, 3 * H, 4 * H));
    next[l].c = f * state[l].c + i * g;
    next[l].h = o * tanh(next[l].c);
    in = next[l].h;
  }
  return next;
}

GruCell::GruCell(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden_dim, Rng& rng)
    : hidden(hidden_dim),
      input(store, name + ".input", in, 3 * hidden_dim, rng),
      recurrent(store, name + ".recurrent", hidden_dim, 3 * hidden_dim, rng) {}

Var GruCell::operator()(const Bound& p, const Var& h, const Var& x) const {
  const std::size_t H = hidden;
  Var xi = input(p, x);
  Var hr = recurrent(p, h);
  Var r = sigmoid(slice_cols(xi, 0, H) + slice_cols(hr, 0, H));
  Var z = sigmoid(slice_cols(xi, H, 2 * H) + slice_cols(hr, H, 2 * H));
  Var n = tanh(slice_cols(xi, 2 * H, 3 * H) + r * slice_cols(hr, 2 * H, 3 * H));
  return n + z * (h - n);
}

ResidualBlock::ResidualBlock(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                             std::size_t dim, Rng& rng)
    : inner(store, name + ".inner", in, hidden, rng), outer(store, name + ".outer", hidden, dim, rng) {}

Var ResidualBlock::operator()(const Bound& p, const Var& h, const Var& x) const {
  return h + outer(p, tanh(inner(p, x)));
}

Var rows_by_segment(const Var& per_segment, const std::vector<int>& row_segment) {
  return gather_rows(per_segment, row_segment);
}

}  // namespace rssm
