#pragma once

// Tape-based reverse-mode automatic differentiation over dense matrices.
//
// Every op appends one node to a Tape, so the node vector is already in
// topological order and backward is a single reverse sweep. Learnable
// weights live outside the tape in Parameter objects; a tape only holds a
// reference to them and adds into Parameter::grad during backward.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include "uignn/errors.hpp"

namespace uignn::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// A named learnable array together with its gradient buffer.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

inline void zero_grad(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

class Tape;

/// Lightweight handle to a node recorded on a Tape. Valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  const Matrix& value() const;
  bool requires_grad() const;
  bool has_grad() const;
  /// Gradient accumulated by the last backward pass; throws if none reached this node.
  const Matrix& grad() const;
  /// Value of a 1x1 tensor.
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value) { return push(Kind::Constant, std::move(value), false, nullptr, {}); }
  Tensor variable(Matrix value) { return push(Kind::Variable, std::move(value), true, nullptr, {}); }
  Tensor parameter(Parameter& p) { return push(Kind::ParameterRef, p.value, true, &p, {}); }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Record the result of an op. `backward` is only kept when some input needs a gradient.
  Tensor record(std::string_view op, Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
    bool needs_grad = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw ContractError(std::string(op) + ": operand recorded on a different tape");
      needs_grad = needs_grad || nodes_[in.id_].requires_grad;
    }
    if (!value.allFinite()) throw NumericError(std::string(op) + ": produced a non-finite value");
    return push(Kind::Op, std::move(value), needs_grad, nullptr, needs_grad ? std::move(backward) : BackwardFn{});
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad.size() != 0; }
  const Matrix& grad(std::size_t id) const {
    const auto& n = nodes_.at(id);
    if (n.grad.size() == 0) throw ContractError("tensor has no gradient");
    return n.grad;
  }

  template <typename Derived>
  void accumulate(const Tensor& t, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[t.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Reverse sweep from a scalar loss. Variable leaves and Parameter buffers
  /// accumulate across calls; intermediate gradients are recomputed each call.
  void backward(const Tensor& loss) {
    if (loss.tape_ != this) throw ContractError("backward: loss recorded on a different tape");
    const Node& root = nodes_[loss.id_];
    if (root.value.rows() != 1 || root.value.cols() != 1)
      throw ContractError("backward: loss must be 1x1, got " + std::to_string(root.value.rows()) + "x" +
                          std::to_string(root.value.cols()));
    if (!root.requires_grad) return;

    for (auto& n : nodes_)
      if (n.kind != Kind::Variable) n.grad.resize(0, 0);

    accumulate(loss, Matrix::Ones(1, 1));
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
      if (n.kind == Kind::ParameterRef && n.grad.size() != 0) n.param->grad += n.grad;
    }
  }

 private:
  enum class Kind { Constant, Variable, ParameterRef, Op };

  struct Node {
    Kind kind;
    Matrix value;
    Matrix grad;
    bool requires_grad;
    Parameter* param;
    BackwardFn backward;
  };

  Tensor push(Kind kind, Matrix value, bool requires_grad, Parameter* param, BackwardFn fn) {
    nodes_.push_back(Node{kind, std::move(value), Matrix(), requires_grad, param, std::move(fn)});
    return Tensor(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Tensor::value() const { return tape_->value(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }
inline bool Tensor::has_grad() const { return tape_->has_grad(id_); }
inline const Matrix& Tensor::grad() const { return tape_->grad(id_); }
inline double Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("item: tensor is not 1x1");
  return v(0, 0);
}

namespace detail {

inline std::string shape(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

template <typename Fn, typename DFn>
Tensor unary(std::string_view op, const Tensor& a, Fn f, DFn df) {
  Matrix out = a.value().unaryExpr(f);
  return a.tape().record(op, std::move(out), {a}, [a, df](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g.cwiseProduct(a.value().unaryExpr(df)));
  });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ " + detail::shape(a) + " * " + detail::shape(b));
  Matrix out = a.value() * b.value();
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (a.requires_grad()) tape.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tape.accumulate(b, a.value().transpose() * g);
  });
}

/// Elementwise product. `b` may also be a rows x 1 column broadcast across a's columns.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.cols() == 1 && a.cols() != 1 && b.rows() == a.rows();
  if (!broadcast) detail::require_same_shape("hadamard", a, b);
  Matrix out = broadcast ? Matrix(a.value().array().colwise() * b.value().col(0).array())
                         : Matrix(a.value().cwiseProduct(b.value()));
  return a.tape().record("hadamard", std::move(out), {a, b}, [a, b, broadcast](Tape& tape, const Matrix& g) {
    if (broadcast) {
      if (a.requires_grad()) tape.accumulate(a, Matrix(g.array().colwise() * b.value().col(0).array()));
      if (b.requires_grad()) tape.accumulate(b, g.cwiseProduct(a.value()).rowwise().sum());
    } else {
      if (a.requires_grad()) tape.accumulate(a, g.cwiseProduct(b.value()));
      if (b.requires_grad()) tape.accumulate(b, g.cwiseProduct(a.value()));
    }
  });
}

/// Elementwise sum. `b` may also be a 1 x cols row (bias) broadcast over a's rows.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!broadcast) detail::require_same_shape("add", a, b);
  Matrix out = broadcast ? Matrix(a.value().rowwise() + b.value().row(0)) : Matrix(a.value() + b.value());
  return a.tape().record("add", std::move(out), {a, b}, [a, b, broadcast](Tape& tape, const Matrix& g) {
    if (a.requires_grad()) tape.accumulate(a, g);
    if (b.requires_grad()) {
      if (broadcast)
        tape.accumulate(b, g.colwise().sum());
      else
        tape.accumulate(b, g);
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (a.requires_grad()) tape.accumulate(a, g);
    if (b.requires_grad()) tape.accumulate(b, -g);
  });
}

inline Tensor scale(const Tensor& a, double c) {
  Matrix out = a.value() * c;
  return a.tape().record("scale", std::move(out), {a}, [a, c](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g * c);
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  Matrix out = a.value().array() + c;
  return a.tape().record("add_scalar", std::move(out), {a}, [a](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
  });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

/// ln(1 + e^x); returns x itself above 30 where the difference is below double precision.
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      "softplus", a, [](double x) { return softplus(x); },
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

inline Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("log: non-positive entry");
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

/// |x| with subgradient 0 at the origin.
inline Tensor abs(const Tensor& a) {
  return detail::unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

/// log Gamma(x) for x > 0; derivative is the digamma function.
inline Tensor lgamma(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("lgamma: non-positive entry");
  return detail::unary(
      "lgamma", a, [](double x) { return std::lgamma(x); },
      [](double x) { return boost::math::digamma(x); });
}

inline Tensor reduce_sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("reduce_sum", std::move(out), {a}, [a](Tape& tape, const Matrix& g) {
    tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Tensor reduce_mean(const Tensor& a) {
  if (a.value().size() == 0) throw DimensionError("reduce_mean: empty tensor");
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape().record("reduce_mean", std::move(out), {a}, [a, n](Tape& tape, const Matrix& g) {
    tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

/// Column j as a rows x 1 tensor.
inline Tensor column(const Tensor& a, Index j) {
  if (j < 0 || j >= a.cols()) throw DimensionError("column: index out of range");
  Matrix out = a.value().col(j);
  return a.tape().record("column", std::move(out), {a}, [a, j](Tape& tape, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.col(j) = g.col(0);
    tape.accumulate(a, full);
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound positionally to the
/// parameter list passed to step(), which must stay the same across calls.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {
    if (!(config.lr > 0.0) || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 ||
        config.beta2 >= 1.0 || !(config.eps > 0.0))
      throw ParameterError("Adam: invalid hyperparameters");
  }

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return step_; }

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step(std::span<Parameter* const> params) {
    if (first_moment_.empty()) {
      for (auto* p : params) {
        first_moment_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        second_moment_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (first_moment_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!p.grad.allFinite()) throw NumericError("Adam: non-finite gradient in " + p.name);
      Matrix& m = first_moment_[i];
      Matrix& v = second_moment_[i];
      m = config_.beta1 * m + (1.0 - config_.beta1) * p.grad;
      v = config_.beta2 * v + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
      p.value.array() -= config_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
      p.zero_grad();
    }
  }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<Matrix> first_moment_;
  std::vector<Matrix> second_moment_;
};

}  // namespace uignn::ad
