#include "crl/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace crl::ad {

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
}

Tensor Tensor::from_eigen(const Eigen::MatrixXd& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      t(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
  return t;
}

Eigen::MatrixXd Tensor::to_eigen() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*this)(i, j);
  return m;
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_string());
  return data_[0];
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Sum: return "sum";
    case Op::SumAxis: return "sum_axis";
    case Op::Mean: return "mean";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Softplus: return "softplus";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Square: return "square";
    case Op::Abs: return "abs";
    case Op::Broadcast: return "broadcast";
    case Op::Neg: return "neg";
  }
  return "?";
}

// ---- Var / Tape ---------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Op op, Tensor value, std::vector<std::size_t> inputs, std::vector<double> aux) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.aux = std::move(aux);
  for (auto i : n.inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("root belongs to another tape");
  if (!value(root.id()).is_scalar())
    throw ShapeError("backward needs a scalar root, got " + value(root.id()).shape_string());
  if (backward_done_) throw std::logic_error("backward called twice without zero_grad()");
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.inputs.empty() || !n.grad.same_shape(n.value)) continue;
    propagate(id);
  }
}

namespace {

enum class Bcast { Same, Scalar, Row };

Bcast classify(const Tensor& operand, const Tensor& result) {
  if (operand.same_shape(result)) return Bcast::Same;
  if (operand.is_scalar()) return Bcast::Scalar;
  return Bcast::Row;
}

// Result shape of a broadcasting binary op.
std::pair<std::size_t, std::size_t> broadcast_shape(const Tensor& a, const Tensor& b,
                                                    const char* what) {
  if (a.same_shape(b)) return {a.rows(), a.cols()};
  if (a.is_scalar()) return {b.rows(), b.cols()};
  if (b.is_scalar()) return {a.rows(), a.cols()};
  if (a.rows() == 1 && a.cols() == b.cols()) return {b.rows(), b.cols()};
  if (b.rows() == 1 && b.cols() == a.cols()) return {a.rows(), a.cols()};
  throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

inline double at(const Tensor& t, Bcast mode, std::size_t r, std::size_t c, std::size_t cols) {
  switch (mode) {
    case Bcast::Same: return t[r * cols + c];
    case Bcast::Scalar: return t[0];
    case Bcast::Row: return t[c];
  }
  return 0.0;
}

// Adds g (result-shaped) into the operand gradient, reducing broadcast axes.
void accumulate(Tensor& dst, Bcast mode, const Tensor& g) {
  switch (mode) {
    case Bcast::Same:
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
      break;
    case Bcast::Scalar: {
      double s = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) s += g[k];
      dst[0] += s;
      break;
    }
    case Bcast::Row:
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += g(r, c);
      break;
  }
}

template <typename F>
Var binary(Var a, Var b, Op op, const char* what, F f) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(what) + ": mixed tapes");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto [rows, cols] = broadcast_shape(av, bv, what);
  Tensor out(rows, cols);
  Bcast ma = av.same_shape(out) ? Bcast::Same : (av.is_scalar() ? Bcast::Scalar : Bcast::Row);
  Bcast mb = bv.same_shape(out) ? Bcast::Same : (bv.is_scalar() ? Bcast::Scalar : Bcast::Row);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = f(at(av, ma, r, c, cols), at(bv, mb, r, c, cols));
  return a.tape()->push(op, std::move(out), {a.id(), b.id()});
}

template <typename F>
Var unary(Var a, Op op, F f, std::vector<double> aux = {}) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t k = 0; k < av.size(); ++k) out[k] = f(av[k]);
  return a.tape()->push(op, std::move(out), {a.id()}, std::move(aux));
}

using RowMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstRowMap view(const Tensor& t) {
  return ConstRowMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
RowMap view(Tensor& t) {
  return RowMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Tape::propagate(std::size_t id) {
  const Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto input = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      break;

    case Op::Add:
    case Op::Sub: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        Bcast mode = classify(input(k), n.value);
        if (n.op == Op::Sub && k == 1) {
          Tensor ng = g;
          for (std::size_t i = 0; i < ng.size(); ++i) ng[i] = -ng[i];
          accumulate(grad_buffer(n.inputs[k]), mode, ng);
        } else {
          accumulate(grad_buffer(n.inputs[k]), mode, g);
        }
      }
      break;
    }

    case Op::Mul:
    case Op::Div: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const Bcast ma = classify(a, n.value), mb = classify(b, n.value);
      const std::size_t cols = n.value.cols();
      if (wants(0)) {
        Tensor ga(n.value.rows(), cols);
        for (std::size_t r = 0; r < n.value.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const double bv = at(b, mb, r, c, cols);
            ga[r * cols + c] = g[r * cols + c] * (n.op == Op::Mul ? bv : 1.0 / bv);
          }
        accumulate(grad_buffer(n.inputs[0]), ma, ga);
      }
      if (wants(1)) {
        Tensor gb(n.value.rows(), cols);
        for (std::size_t r = 0; r < n.value.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const double av = at(a, ma, r, c, cols);
            const double bv = at(b, mb, r, c, cols);
            gb[r * cols + c] = g[r * cols + c] * (n.op == Op::Mul ? av : -av / (bv * bv));
          }
        accumulate(grad_buffer(n.inputs[1]), mb, gb);
      }
      break;
    }

    case Op::MatMul: {
      if (wants(0)) view(grad_buffer(n.inputs[0])).noalias() += view(g) * view(input(1)).transpose();
      if (wants(1)) view(grad_buffer(n.inputs[1])).noalias() += view(input(0)).transpose() * view(g);
      break;
    }

    case Op::Sum:
    case Op::Mean: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      const double s = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += s;
      break;
    }

    case Op::SumAxis: {
      Tensor& ga = grad_buffer(n.inputs[0]);
      const bool over_rows = n.aux[0] == 0.0;
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += over_rows ? g[c] : g[r];
      break;
    }

    case Op::Concat: {
      const bool rows_axis = n.aux[0] == 0.0;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = input(k);
        if (wants(k)) {
          Tensor& gp = grad_buffer(n.inputs[k]);
          for (std::size_t r = 0; r < part.rows(); ++r)
            for (std::size_t c = 0; c < part.cols(); ++c)
              gp(r, c) += rows_axis ? g(r + offset, c) : g(r, c + offset);
        }
        offset += rows_axis ? part.rows() : part.cols();
      }
      break;
    }

    case Op::Slice: {
      const bool rows_axis = n.aux[0] == 0.0;
      const auto begin = static_cast<std::size_t>(n.aux[1]);
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c)
          (rows_axis ? ga(r + begin, c) : ga(r, c + begin)) += g(r, c);
      break;
    }

    case Op::Broadcast: {
      accumulate(grad_buffer(n.inputs[0]), classify(input(0), n.value), g);
      break;
    }

    default: {
      // elementwise unary ops
      const Tensor& a = input(0);
      Tensor& ga = grad_buffer(n.inputs[0]);
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double x = a[k];
        double d = 0.0;
        switch (n.op) {
          case Op::Exp: d = n.value[k]; break;
          case Op::Log: d = 1.0 / x; break;
          case Op::Tanh: d = 1.0 - n.value[k] * n.value[k]; break;
          case Op::Softplus: d = sigmoid(x); break;
          case Op::LeakyRelu: d = x > 0 ? 1.0 : n.aux[0]; break;
          case Op::Square: d = 2.0 * x; break;
          case Op::Abs: d = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); break;
          case Op::Neg: d = -1.0; break;
          default: throw std::logic_error(std::string("no backward rule for ") + op_name(n.op));
        }
        ga[k] += g[k] * d;
      }
      break;
    }
  }
}

// ---- ops ----------------------------------------------------------------------

Var add(Var a, Var b) {
  return binary(a, b, Op::Add, "add", [](double x, double y) { return x + y; });
}

Var sub(Var a, Var b) {
  return binary(a, b, Op::Sub, "sub", [](double x, double y) { return x - y; });
}

Var mul(Var a, Var b) {
  return binary(a, b, Op::Mul, "mul", [](double x, double y) { return x * y; });
}

Var div(Var a, Var b) {
  for (double v : b.value().data())
    if (v == 0.0) throw DomainError("div: zero divisor");
  return binary(a, b, Op::Div, "div", [](double x, double y) { return x / y; });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ " + av.shape_string() + " and " +
                     bv.shape_string());
  Tensor out(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  return a.tape()->push(Op::MatMul, std::move(out), {a.id(), b.id()});
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->push(Op::Sum, Tensor::scalar(s), {a.id()});
}

Var sum(Var a, int axis) {
  const Tensor& av = a.value();
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  Tensor out = axis == 0 ? Tensor(1, av.cols()) : Tensor(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) (axis == 0 ? out[c] : out[r]) += av(r, c);
  return a.tape()->push(Op::SumAxis, std::move(out), {a.id()}, {static_cast<double>(axis)});
}

Var mean(Var a) {
  const Tensor& av = a.value();
  if (av.size() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : av.data()) s += v;
  return a.tape()->push(Op::Mean, Tensor::scalar(s / static_cast<double>(av.size())), {a.id()});
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    if (axis == 0) {
      if (cols == 0 && rows == 0) cols = v.cols();
      if (v.cols() != cols)
        throw ShapeError("concat: column count mismatch at " + v.shape_string());
      rows += v.rows();
    } else {
      if (cols == 0 && rows == 0) rows = v.rows();
      if (v.rows() != rows) throw ShapeError("concat: row count mismatch at " + v.shape_string());
      cols += v.cols();
    }
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < v.rows(); ++r)
      for (std::size_t c = 0; c < v.cols(); ++c)
        (axis == 0 ? out(r + offset, c) : out(r, c + offset)) = v(r, c);
    offset += axis == 0 ? v.rows() : v.cols();
    ids.push_back(p.id());
  }
  return parts.front().tape()->push(Op::Concat, std::move(out), std::move(ids),
                                    {static_cast<double>(axis)});
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? av.rows() : av.cols();
  if (begin > end || end > extent)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + av.shape_string());
  Tensor out = axis == 0 ? Tensor(end - begin, av.cols()) : Tensor(av.rows(), end - begin);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = axis == 0 ? av(r + begin, c) : av(r, c + begin);
  return a.tape()->push(Op::Slice, std::move(out), {a.id()},
                        {static_cast<double>(axis), static_cast<double>(begin)});
}

Var exp(Var a) {
  return unary(a, Op::Exp, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  return unary(a, Op::Log, [](double x) { return std::log(x); });
}

Var tanh(Var a) {
  return unary(a, Op::Tanh, [](double x) { return std::tanh(x); });
}

Var softplus(Var a) {
  return unary(a, Op::Softplus, [](double x) { return stable_softplus(x); });
}

Var leaky_relu(Var a, double alpha) {
  return unary(a, Op::LeakyRelu, [alpha](double x) { return x > 0 ? x : alpha * x; }, {alpha});
}

Var square(Var a) {
  return unary(a, Op::Square, [](double x) { return x * x; });
}

Var abs(Var a) {
  return unary(a, Op::Abs, [](double x) { return std::abs(x); });
}

Var neg(Var a) {
  return unary(a, Op::Neg, [](double x) { return -x; });
}

Var broadcast(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  const bool ok = av.is_scalar() || (av.rows() == 1 && av.cols() == cols) ||
                  (av.rows() == rows && av.cols() == cols);
  if (!ok)
    throw ShapeError("broadcast: cannot expand " + av.shape_string() + " to [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  Tensor out(rows, cols);
  const Bcast mode = classify(av, out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = at(av, mode, r, c, cols);
  return a.tape()->push(Op::Broadcast, std::move(out), {a.id()});
}

Var scale(Var a, double c) {
  return mul(a, a.tape()->constant(Tensor::scalar(c)));
}

Var add_scalar(Var a, double c) {
  return add(a, a.tape()->constant(Tensor::scalar(c)));
}

// ---- gradcheck ----------------------------------------------------------------

GradcheckResult gradcheck(const TapeFunction& f, const std::vector<Tensor>& point, double h) {
  auto evaluate = [&](const std::vector<Tensor>& at_point) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& p : at_point) leaves.push_back(t.leaf(p));
    return f(t, leaves).value().item();
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : point) leaves.push_back(tape.leaf(p));
  Var root = f(tape, leaves);
  tape.backward(root);

  GradcheckResult res;
  const double f0 = root.value().item();
  std::vector<Tensor> probe = point;
  for (std::size_t li = 0; li < point.size(); ++li) {
    const Tensor& g = tape.grad(leaves[li]);
    for (std::size_t k = 0; k < point[li].size(); ++k) {
      const double x0 = point[li][k];
      probe[li][k] = x0 + h;
      const double fp = evaluate(probe);
      probe[li][k] = x0 - h;
      const double fm = evaluate(probe);
      probe[li][k] = x0;
      // The gap between one-sided slopes shrinks with h on smooth functions
      // and stays put at a kink.
      const double gap = (fp - f0) / h - (f0 - fm) / h;
      if (std::abs(gap) > 1e-3 * std::max(1.0, std::abs(g[k]))) {
        probe[li][k] = x0 + 0.5 * h;
        const double fp2 = evaluate(probe);
        probe[li][k] = x0 - 0.5 * h;
        const double fm2 = evaluate(probe);
        probe[li][k] = x0;
        const double gap2 = (fp2 - f0) / (0.5 * h) - (f0 - fm2) / (0.5 * h);
        if (std::abs(gap2) > 0.75 * std::abs(gap)) {
          ++res.excluded;
          continue;
        }
      }
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = g[k];
      const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace crl::ad
