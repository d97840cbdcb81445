#pragma once

// Parameter storage and the small network pieces every model is built from.

#include <optional>
#include <string>
#include <vector>

#include "rssm/random.hpp"
#include "rssm/tensor.hpp"

namespace rssm {

class ParamStore {
 public:
  std::size_t add(std::string name, Array value);
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Array& value(std::size_t i) const { return values_.at(i); }
  Array& value(std::size_t i) { return values_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t total_size() const;

 private:
  std::vector<std::string> names_;
  std::vector<Array> values_;
};

// Parameters of a ParamStore bound for one evaluation: leaves on a tape when
// gradients are wanted, plain constants otherwise.
class Bound {
 public:
  explicit Bound(const ParamStore& store);
  Bound(const ParamStore& store, Tape& tape);

  const Var& operator[](std::size_t i) const { return vars_.at(i); }
  const std::vector<Var>& vars() const { return vars_; }
  Tape* tape() const { return tape_; }

 private:
  std::vector<Var> vars_;
  Tape* tape_ = nullptr;
};

enum class Init { kFanIn, kZero, kOrthogonal };

Array init_array(std::size_t rows, std::size_t cols, Init init, Rng& rng);

struct Linear {
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         Init init = Init::kFanIn);
  Var operator()(const Bound& p, const Var& x) const;

  std::size_t weight = 0, bias = 0;
  std::size_t in = 0, out = 0;
};

// tanh hidden layers, linear output.
struct Mlp {
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
      std::size_t out, Rng& rng, Init last_init = Init::kFanIn);
  Var operator()(const Bound& p, const Var& x) const;

  std::vector<Linear> layers;
};

inline constexpr double kVarianceFloor = 1e-6;

struct DiagGaussian {
  Var mean;
  Var var;

  // Row-wise log-density, R x 1.
  Var log_prob(const Var& x) const;
  // mean + sqrt(var) * eps.
  Var reparam(const Var& eps) const;
};

// Mean and variance heads: 3-layer MLPs sharing the first layer, softplus
// variance with a floor.
struct GaussianHead {
  GaussianHead() = default;
  GaussianHead(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
               Rng& rng);
  DiagGaussian operator()(const Bound& p, const Var& x) const;

  Linear shared, mean1, mean2, var1, var2;
};

struct LstmLayerState {
  Var h;
  Var c;
};
using LstmState = std::vector<LstmLayerState>;

// Stacked LSTM; forget-gate bias starts at 1, recurrent blocks orthogonal.
struct LstmStack {
  LstmStack() = default;
  LstmStack(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t layers,
            Rng& rng);
  LstmState zero_state(std::size_t rows) const;
  LstmState step(const Bound& p, const LstmState& state, const Var& x) const;

  std::size_t hidden = 0;
  std::vector<Linear> input;  // in -> 4H, carries the bias
  std::vector<std::size_t> recurrent;  // H x 4H
};

struct GruCell {
  GruCell() = default;
  GruCell(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  Var operator()(const Bound& p, const Var& h, const Var& x) const;

  std::size_t hidden = 0;
  Linear input;  // in -> 3H
  Linear recurrent;  // H -> 3H
};

// h + W2 tanh(W1 x + b1) + b2.
struct ResidualBlock {
  ResidualBlock() = default;
  ResidualBlock(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t dim,
                Rng& rng);
  Var operator()(const Bound& p, const Var& h, const Var& x) const;

  Linear inner, outer;
};

// Rows of `a` repeated per index; shorthand for gather_rows on a constant
// index vector built from segment ids.
Var rows_by_segment(const Var& per_segment, const std::vector<int>& row_segment);

}  // namespace rssm
