#pragma once

// Dense arrays and a reverse-mode tape.
//
// Arrays are immutable once wrapped in a Var. Every operation on Vars computes
// its value eagerly; when at least one input lives on a recording Tape the
// operation is appended to that tape together with its forward and backward
// rules, so the tape can later be replayed or differentiated.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rssm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major array of doubles. Rank-1 arrays behave as a single row wherever a
// matrix is expected.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array({1, 1}, v); }
  static Array zeros(std::size_t rows, std::size_t cols) { return Array({rows, cols}); }
  static Array full(std::size_t rows, std::size_t cols, double v) { return Array({rows, cols}, v); }
  static Array eye(std::size_t n);
  static Array row(std::vector<double> v);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const;
  Array reshaped(Shape s) const;

  bool operator==(const Array& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// A value flowing through the computation, optionally tracked by a tape.
class Var {
 public:
  Var() = default;
  Var(Array value);  // NOLINT: implicit constant
  explicit Var(std::shared_ptr<const Array> value) : value_(std::move(value)) {}

  const Array& value() const { return *value_; }
  const std::shared_ptr<const Array>& shared() const { return value_; }
  const Shape& shape() const { return value_->shape(); }
  std::size_t rows() const { return value_->rows(); }
  std::size_t cols() const { return value_->cols(); }
  bool defined() const { return static_cast<bool>(value_); }
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(std::shared_ptr<const Array> v, Tape* tape, int id) : value_(std::move(v)), tape_(tape), id_(id) {}

  std::shared_ptr<const Array> value_;
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using ArrayRefs = std::span<const Array* const>;
using ForwardFn = std::function<Array(ArrayRefs)>;
// Accumulates into the non-null entries of `grad_in`.
using BackwardFn =
    std::function<void(ArrayRefs in, const Array& out, const Array& grad_out, std::span<Array* const> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void begin();
  void end();
  bool recording() const { return recording_; }

  // RAII recording scope.
  class Scope {
   public:
    explicit Scope(Tape& t) : tape_(t) { tape_.begin(); }
    ~Scope() { tape_.end(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
  };

  // Leaf node whose adjoint can be queried.
  Var variable(Array value);

  // Adjoints of scalar `output` with respect to `wrt`. Vars that are not on
  // this tape (constants, or leaves the output never touched) get zeros.
  std::vector<Array> gradient(const Var& output, std::span<const Var> wrt);

  // Re-executes every recorded operation from the leaves and reports whether
  // all outputs are bit-identical to the recorded ones.
  bool replay_matches() const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  static Var record(const char* name, std::initializer_list<Var> inputs, const ForwardFn& fwd, BackwardFn bwd);
  static Var record(const char* name, const std::vector<Var>& inputs, const ForwardFn& fwd, BackwardFn bwd);

 private:
  struct Node {
    const char* name = "leaf";
    std::shared_ptr<const Array> value;
    std::vector<int> input_ids;
    std::vector<std::shared_ptr<const Array>> input_values;
    ForwardFn forward;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_ = false;
};

// ---------------------------------------------------------------------------
// Primitive operations. Binary elementwise ops accept equal shapes, a size-1
// operand on either side, or a 1xC row against an RxC matrix.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var neg(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);

Var matmul(const Var& a, const Var& b);
// x W + b with b a row broadcast over the rows of x W.
Var affine(const Var& x, const Var& w, const Var& b);
Var transpose(const Var& a);
Var inverse(const Var& a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);

Var gather_rows(const Var& a, std::vector<int> index);
// out[s] = sum of rows r with segment[r] == s.
Var segment_sum(const Var& a, std::vector<int> segment, std::size_t n_segments);
// Mean of the rows of each segment; empty segments produce zeros.
Var segment_mean(const Var& a, std::vector<int> segment, std::size_t n_segments);
// Element-wise max per segment; empty segments produce zeros.
Var segment_max(const Var& a, std::vector<int> segment, std::size_t n_segments);
// Column-wise softmax of rows sharing a segment.
Var segment_softmax(const Var& a, std::vector<int> segment, std::size_t n_segments);

Var sum(const Var& a);
Var mean(const Var& a);
Var max(const Var& a);
// axis 0 collapses rows (result 1xC); axis 1 collapses columns (result Rx1).
Var sum(const Var& a, int axis);
Var mean(const Var& a, int axis);
Var logsumexp(const Var& a, int axis);
Var softmax(const Var& a, int axis);
Var log_softmax(const Var& a, int axis);

Var stop_gradient(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace rssm
