#include "rssm/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace rssm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC as_mat(const Array& a) {
  return MapC(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
MapM as_mat(Array& a) {
  return MapM(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_matrix(const char* op, const Array& a) {
  if (a.rank() > 2) throw ShapeError(std::string(op) + ": expected rank <= 2, got " + shape_str(a.shape()));
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class Bcast { kSame, kScalarA, kScalarB, kRowA, kRowB };

Bcast broadcast_mode(const char* op, const Shape& sa, const Shape& sb, std::size_t na, std::size_t nb) {
  if (sa == sb) return Bcast::kSame;
  if (nb == 1) return Bcast::kScalarB;
  if (na == 1) return Bcast::kScalarA;
  auto as_row = [](const Shape& s) -> std::size_t {
    if (s.size() == 1) return s[0];
    if (s.size() == 2 && s[0] == 1) return s[1];
    return 0;
  };
  if (sa.size() == 2 && as_row(sb) == sa[1]) return Bcast::kRowB;
  if (sb.size() == 2 && as_row(sa) == sb[1]) return Bcast::kRowA;
  shape_fail(op, sa, sb);
}

template <class F, class DA, class DB>
Var binary_op(const char* name, const Var& a, const Var& b, F f, DA da, DB db) {
  const Bcast mode = broadcast_mode(name, a.shape(), b.shape(), a.value().size(), b.value().size());
  auto index_a = [mode](std::size_t k, std::size_t cols) -> std::size_t {
    switch (mode) {
      case Bcast::kScalarA: return 0;
      case Bcast::kRowA: return k % cols;
      default: return k;
    }
  };
  auto index_b = [mode](std::size_t k, std::size_t cols) -> std::size_t {
    switch (mode) {
      case Bcast::kScalarB: return 0;
      case Bcast::kRowB: return k % cols;
      default: return k;
    }
  };
  auto fwd = [=](ArrayRefs in) {
    const Array& x = *in[0];
    const Array& y = *in[1];
    const bool a_small = mode == Bcast::kScalarA || mode == Bcast::kRowA;
    Array out(a_small ? y.shape() : x.shape());
    const std::size_t cols = out.cols(), n = out.size();
    if (mode == Bcast::kSame) {
      for (std::size_t k = 0; k < n; ++k) out[k] = f(x[k], y[k]);
    } else {
      for (std::size_t k = 0; k < n; ++k) out[k] = f(x[index_a(k, cols)], y[index_b(k, cols)]);
    }
    return out;
  };
  auto bwd = [=](ArrayRefs in, const Array& out, const Array& g, std::span<Array* const> gin) {
    const Array& x = *in[0];
    const Array& y = *in[1];
    const std::size_t cols = out.cols();
    if (mode == Bcast::kSame) {
      const std::size_t n = out.size();
      if (gin[0])
        for (std::size_t k = 0; k < n; ++k) (*gin[0])[k] += g[k] * da(x[k], y[k], out[k]);
      if (gin[1])
        for (std::size_t k = 0; k < n; ++k) (*gin[1])[k] += g[k] * db(x[k], y[k], out[k]);
      return;
    }
    if (gin[0]) {
      Array& gx = *gin[0];
      for (std::size_t k = 0; k < out.size(); ++k) {
        const std::size_t i = index_a(k, cols), j = index_b(k, cols);
        gx[i] += g[k] * da(x[i], y[j], out[k]);
      }
    }
    if (gin[1]) {
      Array& gy = *gin[1];
      for (std::size_t k = 0; k < out.size(); ++k) {
        const std::size_t i = index_a(k, cols), j = index_b(k, cols);
        gy[j] += g[k] * db(x[i], y[j], out[k]);
      }
    }
  };
  return Tape::record(name, {a, b}, fwd, bwd);
}

template <class F, class D>
Var unary_op(const char* name, const Var& a, F f, D d) {
  auto fwd = [=](ArrayRefs in) {
    const Array& x = *in[0];
    Array out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
    return out;
  };
  auto bwd = [=](ArrayRefs in, const Array& out, const Array& g, std::span<Array* const> gin) {
    const Array& x = *in[0];
    Array& gx = *gin[0];
    for (std::size_t k = 0; k < x.size(); ++k) gx[k] += g[k] * d(x[k], out[k]);
  };
  return Tape::record(name, {a}, fwd, bwd);
}

}  // namespace

// ---------------------------------------------------------------------------
// Array

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(n, fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size())
    throw ShapeError("Array: shape " + shape_str(shape_) + " needs " + std::to_string(n) + " values, got " +
                     std::to_string(data_.size()));
}

Array Array::eye(std::size_t n) {
  Array a({n, n});
  for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
  return a;
}

Array Array::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Array({1, n}, std::move(v));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Array({rows, cols}, std::move(v));
}

std::size_t Array::rows() const {
  if (shape_.size() <= 1) return 1;
  return shape_[0];
}

std::size_t Array::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("Array::item on shape " + shape_str(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Array Array::reshaped(Shape s) const {
  Array out(std::move(s), data_);
  return out;
}

// ---------------------------------------------------------------------------
// Var / Tape

Var::Var(Array value) : value_(std::make_shared<const Array>(std::move(value))) {}

void Tape::begin() { recording_ = true; }
void Tape::end() { recording_ = false; }

void Tape::clear() {
  nodes_.clear();
}

Var Tape::variable(Array value) {
  if (!recording_) throw std::logic_error("Tape::variable called outside a recording scope");
  Node n;
  n.value = std::make_shared<const Array>(std::move(value));
  nodes_.push_back(std::move(n));
  return Var(nodes_.back().value, this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(const char* name, std::initializer_list<Var> inputs, const ForwardFn& fwd, BackwardFn bwd) {
  return record(name, std::vector<Var>(inputs), fwd, std::move(bwd));
}

Var Tape::record(const char* name, const std::vector<Var>& inputs, const ForwardFn& fwd, BackwardFn bwd) {
  std::vector<const Array*> ptrs;
  ptrs.reserve(inputs.size());
  Tape* tape = nullptr;
  for (const Var& v : inputs) {
    if (!v.defined()) throw std::invalid_argument(std::string(name) + ": undefined input");
    ptrs.push_back(&v.value());
    if (v.tape_ && v.tape_->recording_) {
      if (tape && tape != v.tape_) throw std::logic_error(std::string(name) + ": inputs recorded on different tapes");
      tape = v.tape_;
    }
  }
  auto out = std::make_shared<const Array>(fwd(ArrayRefs(ptrs.data(), ptrs.size())));
  if (!tape) return Var(std::move(out), nullptr, -1);

  Node n;
  n.name = name;
  n.value = out;
  n.forward = fwd;
  n.backward = std::move(bwd);
  n.input_ids.reserve(inputs.size());
  n.input_values.reserve(inputs.size());
  for (const Var& v : inputs) {
    n.input_ids.push_back(v.tape_ == tape ? v.id_ : -1);
    n.input_values.push_back(v.value_);
  }
  tape->nodes_.push_back(std::move(n));
  return Var(std::move(out), tape, static_cast<int>(tape->nodes_.size() - 1));
}

std::vector<Array> Tape::gradient(const Var& output, std::span<const Var> wrt) {
  if (output.value().size() != 1)
    throw ShapeError("gradient: output must be scalar, got shape " + shape_str(output.shape()));
  std::vector<Array> result;
  result.reserve(wrt.size());
  if (output.tape_ != this || output.id_ < 0) {
    for (const Var& w : wrt) result.emplace_back(w.shape());
    return result;
  }
  std::vector<std::unique_ptr<Array>> adj(nodes_.size());
  adj[output.id_] = std::make_unique<Array>(output.shape(), 1.0);
  std::vector<const Array*> in_ptrs;
  std::vector<Array*> gin_ptrs;
  for (int i = output.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!adj[i] || !n.backward) continue;
    in_ptrs.clear();
    gin_ptrs.clear();
    for (std::size_t k = 0; k < n.input_ids.size(); ++k) {
      in_ptrs.push_back(n.input_values[k].get());
      const int id = n.input_ids[k];
      if (id < 0) {
        gin_ptrs.push_back(nullptr);
        continue;
      }
      if (!adj[id]) adj[id] = std::make_unique<Array>(nodes_[id].value->shape());
      gin_ptrs.push_back(adj[id].get());
    }
    n.backward(ArrayRefs(in_ptrs.data(), in_ptrs.size()), *n.value, *adj[i],
               std::span<Array* const>(gin_ptrs.data(), gin_ptrs.size()));
  }
  for (const Var& w : wrt) {
    if (w.tape_ == this && w.id_ >= 0 && w.id_ < static_cast<int>(adj.size()) && adj[w.id_])
      result.push_back(*adj[w.id_]);
    else
      result.emplace_back(w.shape());
  }
  return result;
}

bool Tape::replay_matches() const {
  std::vector<std::shared_ptr<const Array>> values(nodes_.size());
  std::vector<const Array*> ptrs;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.forward) {
      values[i] = n.value;
      continue;
    }
    ptrs.clear();
    for (std::size_t k = 0; k < n.input_ids.size(); ++k) {
      const int id = n.input_ids[k];
      ptrs.push_back(id >= 0 ? values[id].get() : n.input_values[k].get());
    }
    values[i] = std::make_shared<const Array>(n.forward(ArrayRefs(ptrs.data(), ptrs.size())));
    if (!(*values[i] == *n.value)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var add_scalar(const Var& a, double s) {
  return unary_op(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var scale(const Var& a, double s) {
  return unary_op(
      "scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary_op("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary_op("softplus", a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var square(const Var& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  require_matrix("matmul", a.value());
  require_matrix("matmul", b.value());
  if (a.cols() != b.rows()) shape_fail("matmul", a.shape(), b.shape());
  auto fwd = [](ArrayRefs in) {
    Array out({in[0]->rows(), in[1]->cols()});
    as_mat(out).noalias() = as_mat(*in[0]) * as_mat(*in[1]);
    return out;
  };
  auto bwd = [](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    if (gin[0]) as_mat(*gin[0]).noalias() += as_mat(g) * as_mat(*in[1]).transpose();
    if (gin[1]) as_mat(*gin[1]).noalias() += as_mat(*in[0]).transpose() * as_mat(g);
  };
  return Tape::record("matmul", {a, b}, fwd, bwd);
}

Var affine(const Var& x, const Var& w, const Var& b) {
  require_matrix("affine", x.value());
  require_matrix("affine", w.value());
  if (x.cols() != w.rows()) shape_fail("affine", x.shape(), w.shape());
  if (b.value().size() != w.cols()) shape_fail("affine", w.shape(), b.shape());
  auto fwd = [](ArrayRefs in) {
    Array out({in[0]->rows(), in[1]->cols()});
    auto o = as_mat(out);
    o.noalias() = as_mat(*in[0]) * as_mat(*in[1]);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(in[2]->data(), static_cast<Eigen::Index>(in[2]->size()));
    return out;
  };
  auto bwd = [](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    if (gin[0]) as_mat(*gin[0]).noalias() += as_mat(g) * as_mat(*in[1]).transpose();
    if (gin[1]) as_mat(*gin[1]).noalias() += as_mat(*in[0]).transpose() * as_mat(g);
    if (gin[2])
      Eigen::Map<Eigen::RowVectorXd>(gin[2]->data(), static_cast<Eigen::Index>(gin[2]->size())) +=
          as_mat(g).colwise().sum();
  };
  return Tape::record("affine", {x, w, b}, fwd, bwd);
}

Var transpose(const Var& a) {
  require_matrix("transpose", a.value());
  auto fwd = [](ArrayRefs in) {
    Array out({in[0]->cols(), in[0]->rows()});
    as_mat(out) = as_mat(*in[0]).transpose();
    return out;
  };
  auto bwd = [](ArrayRefs, const Array&, const Array& g, std::span<Array* const> gin) {
    as_mat(*gin[0]) += as_mat(g).transpose();
  };
  return Tape::record("transpose", {a}, fwd, bwd);
}

Var inverse(const Var& a) {
  if (a.value().rank() != 2 || a.rows() != a.cols())
    throw ShapeError("inverse: expected a square matrix, got " + shape_str(a.shape()));
  auto fwd = [](ArrayRefs in) {
    Eigen::PartialPivLU<RowMat> lu(as_mat(*in[0]));
    if (!std::isfinite(lu.determinant()) || lu.determinant() == 0.0) throw NumericError("inverse: singular matrix");
    Array out(in[0]->shape());
    as_mat(out) = lu.inverse();
    return out;
  };
  auto bwd = [](ArrayRefs, const Array& out, const Array& g, std::span<Array* const> gin) {
    as_mat(*gin[0]).noalias() -= as_mat(out).transpose() * as_mat(g) * as_mat(out).transpose();
  };
  return Tape::record("inverse", {a}, fwd, bwd);
}

// ---------------------------------------------------------------------------
// Structural

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  for (const Var& p : parts) {
    require_matrix("concat_cols", p.value());
    if (p.rows() != rows) shape_fail("concat_cols", parts[0].shape(), p.shape());
  }
  if (parts.size() == 1) return parts[0];
  auto fwd = [](ArrayRefs in) {
    std::size_t total = 0;
    for (const Array* p : in) total += p->cols();
    const std::size_t rows = in[0]->rows();
    Array out({rows, total});
    std::size_t off = 0;
    for (const Array* p : in) {
      const std::size_t c = p->cols();
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(p->data() + r * c, c, out.data() + r * total + off);
      off += c;
    }
    return out;
  };
  auto bwd = [](ArrayRefs in, const Array& out, const Array& g, std::span<Array* const> gin) {
    const std::size_t total = out.cols(), rows = out.rows();
    std::size_t off = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t c = in[k]->cols();
      if (gin[k]) {
        Array& gk = *gin[k];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gk[r * c + j] += g[r * total + off + j];
      }
      off += c;
    }
  };
  return Tape::record("concat_cols", parts, fwd, bwd);
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  for (const Var& p : parts) {
    require_matrix("concat_rows", p.value());
    if (p.cols() != cols) shape_fail("concat_rows", parts[0].shape(), p.shape());
  }
  auto fwd = [cols](ArrayRefs in) {
    std::size_t total = 0;
    for (const Array* p : in) total += p->rows();
    Array out({total, cols});
    std::size_t off = 0;
    for (const Array* p : in) {
      std::copy_n(p->data(), p->size(), out.data() + off);
      off += p->size();
    }
    return out;
  };
  auto bwd = [](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t n = in[k]->size();
      if (gin[k])
        for (std::size_t j = 0; j < n; ++j) (*gin[k])[j] += g[off + j];
      off += n;
    }
  };
  return Tape::record("concat_rows", parts, fwd, bwd);
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a.value());
  if (begin > end || end > a.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(a.shape()));
  auto fwd = [begin, end](ArrayRefs in) {
    const Array& x = *in[0];
    const std::size_t rows = x.rows(), c = x.cols(), w = end - begin;
    Array out({rows, w});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * c + begin, w, out.data() + r * w);
    return out;
  };
  auto bwd = [begin, end](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const std::size_t rows = in[0]->rows(), c = in[0]->cols(), w = end - begin;
    Array& gx = *gin[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] += g[r * w + j];
  };
  return Tape::record("slice_cols", {a}, fwd, bwd);
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a.value());
  if (begin > end || end > a.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(a.shape()));
  auto fwd = [begin, end](ArrayRefs in) {
    const std::size_t c = in[0]->cols();
    Array out({end - begin, c});
    std::copy_n(in[0]->data() + begin * c, (end - begin) * c, out.data());
    return out;
  };
  auto bwd = [begin](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const std::size_t c = in[0]->cols();
    for (std::size_t j = 0; j < g.size(); ++j) (*gin[0])[begin * c + j] += g[j];
  };
  return Tape::record("slice_rows", {a}, fwd, bwd);
}

Var reshape(const Var& a, Shape shape) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != a.value().size()) shape_fail("reshape", a.shape(), shape);
  auto fwd = [shape](ArrayRefs in) { return in[0]->reshaped(shape); };
  auto bwd = [](ArrayRefs, const Array&, const Array& g, std::span<Array* const> gin) {
    for (std::size_t j = 0; j < g.size(); ++j) (*gin[0])[j] += g[j];
  };
  return Tape::record("reshape", {a}, fwd, bwd);
}

Var gather_rows(const Var& a, std::vector<int> index) {
  require_matrix("gather_rows", a.value());
  const int rows = static_cast<int>(a.rows());
  for (int i : index)
    if (i < 0 || i >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
  auto idx = std::make_shared<const std::vector<int>>(std::move(index));
  auto fwd = [idx](ArrayRefs in) {
    const std::size_t c = in[0]->cols();
    Array out({idx->size(), c});
    for (std::size_t r = 0; r < idx->size(); ++r)
      std::copy_n(in[0]->data() + static_cast<std::size_t>((*idx)[r]) * c, c, out.data() + r * c);
    return out;
  };
  auto bwd = [idx](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const std::size_t c = in[0]->cols();
    Array& gx = *gin[0];
    for (std::size_t r = 0; r < idx->size(); ++r) {
      double* dst = gx.data() + static_cast<std::size_t>((*idx)[r]) * c;
      const double* src = g.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  };
  return Tape::record("gather_rows", {a}, fwd, bwd);
}

namespace {
void check_segments(const char* op, const Array& a, const std::vector<int>& seg, std::size_t n) {
  require_matrix(op, a);
  if (seg.size() != a.rows())
    throw ShapeError(std::string(op) + ": " + std::to_string(seg.size()) + " segment ids for " + shape_str(a.shape()));
  for (int s : seg)
    if (s < 0 || static_cast<std::size_t>(s) >= n)
      throw ShapeError(std::string(op) + ": segment id " + std::to_string(s) + " out of range " + std::to_string(n));
}
}  // namespace

Var segment_sum(const Var& a, std::vector<int> segment, std::size_t n_segments) {
  check_segments("segment_sum", a.value(), segment, n_segments);
  auto seg = std::make_shared<const std::vector<int>>(std::move(segment));
  auto fwd = [seg, n_segments](ArrayRefs in) {
    const std::size_t c = in[0]->cols();
    Array out({n_segments, c});
    for (std::size_t r = 0; r < seg->size(); ++r) {
      double* dst = out.data() + static_cast<std::size_t>((*seg)[r]) * c;
      const double* src = in[0]->data() + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    return out;
  };
  auto bwd = [seg](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const std::size_t c = in[0]->cols();
    Array& gx = *gin[0];
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const double* src = g.data() + static_cast<std::size_t>((*seg)[r]) * c;
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += src[j];
    }
  };
  return Tape::record("segment_sum", {a}, fwd, bwd);
}

Var segment_mean(const Var& a, std::vector<int> segment, std::size_t n_segments) {
  check_segments("segment_mean", a.value(), segment, n_segments);
  std::vector<double> inv(n_segments, 0.0);
  for (int s : segment) inv[static_cast<std::size_t>(s)] += 1.0;
  for (double& v : inv) v = v > 0 ? 1.0 / v : 0.0;
  auto seg = std::make_shared<const std::vector<int>>(std::move(segment));
  auto fwd = [seg, inv, n_segments](ArrayRefs in) {
    const std::size_t c = in[0]->cols();
    Array out({n_segments, c});
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const std::size_t s = static_cast<std::size_t>((*seg)[r]);
      const double* src = in[0]->data() + r * c;
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += src[j] * inv[s];
    }
    return out;
  };
  auto bwd = [seg, inv](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const std::size_t c = in[0]->cols();
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const std::size_t s = static_cast<std::size_t>((*seg)[r]);
      for (std::size_t j = 0; j < c; ++j) (*gin[0])[r * c + j] += g[s * c + j] * inv[s];
    }
  };
  return Tape::record("segment_mean", {a}, fwd, bwd);
}

namespace {
// Row index of the per-(segment, column) maximum, -1 for empty segments.
std::vector<int> segment_argmax(const Array& x, const std::vector<int>& seg, std::size_t n) {
  const std::size_t c = x.cols();
  std::vector<int> arg(n * c, -1);
  for (std::size_t r = 0; r < seg.size(); ++r) {
    const std::size_t s = static_cast<std::size_t>(seg[r]);
    for (std::size_t j = 0; j < c; ++j) {
      int& best = arg[s * c + j];
      if (best < 0 || x[r * c + j] > x[static_cast<std::size_t>(best) * c + j]) best = static_cast<int>(r);
    }
  }
  return arg;
}
}  // namespace

Var segment_max(const Var& a, std::vector<int> segment, std::size_t n_segments) {
  check_segments("segment_max", a.value(), segment, n_segments);
  auto seg = std::make_shared<const std::vector<int>>(std::move(segment));
  auto fwd = [seg, n_segments](ArrayRefs in) {
    const std::size_t c = in[0]->cols();
    const auto arg = segment_argmax(*in[0], *seg, n_segments);
    Array out({n_segments, c});
    for (std::size_t k = 0; k < arg.size(); ++k)
      if (arg[k] >= 0) out[k] = (*in[0])[static_cast<std::size_t>(arg[k]) * c + k % c];
    return out;
  };
  auto bwd = [seg, n_segments](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const std::size_t c = in[0]->cols();
    const auto arg = segment_argmax(*in[0], *seg, n_segments);
    for (std::size_t k = 0; k < arg.size(); ++k)
      if (arg[k] >= 0) (*gin[0])[static_cast<std::size_t>(arg[k]) * c + k % c] += g[k];
  };
  return Tape::record("segment_max", {a}, fwd, bwd);
}

Var segment_softmax(const Var& a, std::vector<int> segment, std::size_t n_segments) {
  check_segments("segment_softmax", a.value(), segment, n_segments);
  auto seg = std::make_shared<const std::vector<int>>(std::move(segment));
  auto fwd = [seg, n_segments](ArrayRefs in) {
    const Array& x = *in[0];
    const std::size_t c = x.cols();
    const auto arg = segment_argmax(x, *seg, n_segments);
    Array out(x.shape());
    std::vector<double> denom(n_segments * c, 0.0);
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const std::size_t s = static_cast<std::size_t>((*seg)[r]);
      for (std::size_t j = 0; j < c; ++j) {
        const double m = x[static_cast<std::size_t>(arg[s * c + j]) * c + j];
        out[r * c + j] = std::exp(x[r * c + j] - m);
        denom[s * c + j] += out[r * c + j];
      }
    }
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const std::size_t s = static_cast<std::size_t>((*seg)[r]);
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= denom[s * c + j];
    }
    return out;
  };
  auto bwd = [seg, n_segments](ArrayRefs, const Array& y, const Array& g, std::span<Array* const> gin) {
    const std::size_t c = y.cols();
    std::vector<double> dot(n_segments * c, 0.0);
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const std::size_t s = static_cast<std::size_t>((*seg)[r]);
      for (std::size_t j = 0; j < c; ++j) dot[s * c + j] += g[r * c + j] * y[r * c + j];
    }
    for (std::size_t r = 0; r < seg->size(); ++r) {
      const std::size_t s = static_cast<std::size_t>((*seg)[r]);
      for (std::size_t j = 0; j < c; ++j) (*gin[0])[r * c + j] += y[r * c + j] * (g[r * c + j] - dot[s * c + j]);
    }
  };
  return Tape::record("segment_softmax", {a}, fwd, bwd);
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
  auto fwd = [](ArrayRefs in) {
    double s = 0.0;
    for (double v : in[0]->vec()) s += v;
    return Array::scalar(s);
  };
  auto bwd = [](ArrayRefs, const Array&, const Array& g, std::span<Array* const> gin) {
    for (double& v : gin[0]->vec()) v += g[0];
  };
  return Tape::record("sum", {a}, fwd, bwd);
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty array");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var max(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("max: empty array");
  auto fwd = [](ArrayRefs in) {
    return Array::scalar(*std::max_element(in[0]->vec().begin(), in[0]->vec().end()));
  };
  auto bwd = [](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    const auto& v = in[0]->vec();
    (*gin[0])[static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin())] += g[0];
  };
  return Tape::record("max", {a}, fwd, bwd);
}

namespace {
void check_axis(const char* op, const Array& a, int axis) {
  require_matrix(op, a);
  if (axis != 0 && axis != 1) throw ShapeError(std::string(op) + ": axis must be 0 or 1");
}

// Visits each reduction lane: `lane(offset, stride, length)`.
template <class F>
void for_lanes(const Array& a, int axis, F lane) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (axis == 1)
    for (std::size_t r = 0; r < rows; ++r) lane(r, r * cols, std::size_t{1}, cols);
  else
    for (std::size_t c = 0; c < cols; ++c) lane(c, c, cols, rows);
}

Shape reduced_shape(const Array& a, int axis) {
  return axis == 1 ? Shape{a.rows(), 1} : Shape{1, a.cols()};
}
}  // namespace

Var sum(const Var& a, int axis) {
  check_axis("sum", a.value(), axis);
  auto fwd = [axis](ArrayRefs in) {
    Array out(reduced_shape(*in[0], axis));
    for_lanes(*in[0], axis, [&](std::size_t k, std::size_t off, std::size_t stride, std::size_t n) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (*in[0])[off + i * stride];
      out[k] = s;
    });
    return out;
  };
  auto bwd = [axis](ArrayRefs in, const Array&, const Array& g, std::span<Array* const> gin) {
    for_lanes(*in[0], axis, [&](std::size_t k, std::size_t off, std::size_t stride, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) (*gin[0])[off + i * stride] += g[k];
    });
  };
  return Tape::record("sum_axis", {a}, fwd, bwd);
}

Var mean(const Var& a, int axis) {
  check_axis("mean", a.value(), axis);
  const std::size_t n = axis == 1 ? a.cols() : a.rows();
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var logsumexp(const Var& a, int axis) {
  check_axis("logsumexp", a.value(), axis);
  auto fwd = [axis](ArrayRefs in) {
    const Array& x = *in[0];
    Array out(reduced_shape(x, axis));
    for_lanes(x, axis, [&](std::size_t k, std::size_t off, std::size_t stride, std::size_t n) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[off + i * stride]);
      if (!std::isfinite(m)) {
        out[k] = m;
        return;
      }
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::exp(x[off + i * stride] - m);
      out[k] = m + std::log(s);
    });
    return out;
  };
  auto bwd = [axis](ArrayRefs in, const Array& out, const Array& g, std::span<Array* const> gin) {
    const Array& x = *in[0];
    for_lanes(x, axis, [&](std::size_t k, std::size_t off, std::size_t stride, std::size_t n) {
      if (!std::isfinite(out[k])) return;
      for (std::size_t i = 0; i < n; ++i) (*gin[0])[off + i * stride] += g[k] * std::exp(x[off + i * stride] - out[k]);
    });
  };
  return Tape::record("logsumexp", {a}, fwd, bwd);
}

Var softmax(const Var& a, int axis) {
  check_axis("softmax", a.value(), axis);
  auto fwd = [axis](ArrayRefs in) {
    const Array& x = *in[0];
    Array out(x.shape());
    for_lanes(x, axis, [&](std::size_t, std::size_t off, std::size_t stride, std::size_t n) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[off + i * stride]);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (out[off + i * stride] = std::exp(x[off + i * stride] - m));
      for (std::size_t i = 0; i < n; ++i) out[off + i * stride] /= s;
    });
    return out;
  };
  auto bwd = [axis](ArrayRefs, const Array& y, const Array& g, std::span<Array* const> gin) {
    for_lanes(y, axis, [&](std::size_t, std::size_t off, std::size_t stride, std::size_t n) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[off + i * stride] * y[off + i * stride];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = off + i * stride;
        (*gin[0])[p] += y[p] * (g[p] - dot);
      }
    });
  };
  return Tape::record("softmax", {a}, fwd, bwd);
}

Var log_softmax(const Var& a, int axis) {
  check_axis("log_softmax", a.value(), axis);
  auto fwd = [axis](ArrayRefs in) {
    const Array& x = *in[0];
    Array out(x.shape());
    for_lanes(x, axis, [&](std::size_t, std::size_t off, std::size_t stride, std::size_t n) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[off + i * stride]);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::exp(x[off + i * stride] - m);
      const double lse = m + std::log(s);
      for (std::size_t i = 0; i < n; ++i) out[off + i * stride] = x[off + i * stride] - lse;
    });
    return out;
  };
  auto bwd = [axis](ArrayRefs, const Array& y, const Array& g, std::span<Array* const> gin) {
    for_lanes(y, axis, [&](std::size_t, std::size_t off, std::size_t stride, std::size_t n) {
      double gs = 0.0;
      for (std::size_t i = 0; i < n; ++i) gs += g[off + i * stride];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = off + i * stride;
        (*gin[0])[p] += g[p] - std::exp(y[p]) * gs;
      }
    });
  };
  return Tape::record("log_softmax", {a}, fwd, bwd);
}

Var stop_gradient(const Var& a) { return Var(a.shared()); }

}  // namespace rssm
