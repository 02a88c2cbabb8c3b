#pragma once

// Define-by-run reverse-mode differentiation over dense row-major float64
// matrices. Every tensor is two-dimensional: scalars are 1x1, a row vector is
// 1xc. Broadcasting is limited to scalar-vs-tensor and row-vs-matrix.
//
// A Tape is confined to one thread. Nodes are appended in evaluation order,
// so reverse insertion order is a reverse topological order.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crl::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor from_eigen(const Eigen::MatrixXd& m);
  Eigen::MatrixXd to_eigen() const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const;

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator[](std::size_t k) const { return data_[k]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Sum,
  SumAxis,
  Mean,
  Concat,
  Slice,
  Exp,
  Log,
  Tanh,
  Softplus,
  LeakyRelu,
  Square,
  Abs,
  Broadcast,
  Neg,
};

const char* op_name(Op op);

class Tape;

/// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Non-differentiable input; receives no gradient.
  Var constant(Tensor value);

  /// Accumulates d root / d node into every node that requires a gradient.
  /// The root must be 1x1. A second call without zero_grad() throws.
  void backward(Var root);
  void zero_grad();

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Zero tensor of the right shape for nodes that received no gradient.
  const Tensor& grad(std::size_t id) const;
  const Tensor& grad(Var v) const { return grad(v.id()); }
  Op op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  Var push(Op op, Tensor value, std::vector<std::size_t> inputs, std::vector<double> aux = {});

 private:
  struct Node {
    Op op = Op::Leaf;
    Tensor value;
    mutable Tensor grad;
    std::vector<std::size_t> inputs;
    std::vector<double> aux;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;

  void propagate(std::size_t id);
  Tensor& grad_buffer(std::size_t id);
};

// ---- ops --------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Throws DomainError on a zero divisor.
Var div(Var a, Var b);
Var matmul(Var a, Var b);
/// Sum of all entries, 1x1.
Var sum(Var a);
/// axis 0: column sums (1 x cols); axis 1: row sums (rows x 1).
Var sum(Var a, int axis);
Var mean(Var a);
/// axis 0 stacks rows, axis 1 stacks columns.
Var concat(const std::vector<Var>& parts, int axis);
/// Half-open range [begin, end) along the axis.
Var slice(Var a, int axis, std::size_t begin, std::size_t end);
Var exp(Var a);
/// Throws DomainError on non-positive input.
Var log(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var leaky_relu(Var a, double alpha);
Var square(Var a);
Var abs(Var a);
Var neg(Var a);
/// Expands a 1x1 or 1xc tensor to rows x cols.
Var broadcast(Var a, std::size_t rows, std::size_t cols);

Var scale(Var a, double c);
Var add_scalar(Var a, double c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }

// ---- gradient checking ------------------------------------------------------

/// Builds a scalar from leaves created for each input tensor.
using TapeFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates where one-sided differences disagree (kinks); not compared.
  std::size_t excluded = 0;
};

/// Reverse-mode gradient against central differences with step h, error
/// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
GradcheckResult gradcheck(const TapeFunction& f, const std::vector<Tensor>& point, double h = 1e-5);

}  // namespace crl::ad
