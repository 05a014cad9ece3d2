#pragma once

// Uncertainty-aware inductive GNN: masked input layer, stacked diffusion
// graph convolutions with a residual on the second layer, an evidential
// (Normal-Inverse-Gamma) output head and a reconstruction head.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "uignn/autodiff.hpp"
#include "uignn/errors.hpp"
#include "uignn/graph.hpp"

namespace uignn {

enum class Activation { Relu, Tanh, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "relu";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw ParameterError("unknown activation '" + s + "'");
}

inline ad::Tensor activate(const ad::Tensor& x, Activation a) {
  switch (a) {
    case Activation::Relu: return ad::relu(x);
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

struct ModelConfig {
  std::size_t history = 24;  ///< input width T (one column per past step)
  std::size_t hidden = 100;
  std::size_t layers = 3;    ///< DGCN layers, >= 2 so the residual layer exists
  int order = 2;             ///< Chebyshev order K
  Activation activation = Activation::Relu;

  void validate() const {
    if (history < 1) throw ParameterError("model: history must be >= 1");
    if (hidden < 1) throw ParameterError("model: hidden must be >= 1");
    if (layers < 2) throw ParameterError("model: at least 2 DGCN layers are required");
    if (order < 1) throw ParameterError("model: Chebyshev order must be >= 1");
  }
};

/// Number of raw evidential outputs per node: gamma, nu, alpha, beta.
inline constexpr Eigen::Index kEvidentialWidth = 4;

/// Lower bound added after softplus so nu, beta > 0 and alpha > 1 survive underflow.
inline constexpr double kEvidenceFloor = 1e-6;

class ModelParams {
 public:
  ModelParams() = default;

  /// Glorot-uniform weights, zero biases.
  static ModelParams initialize(const ModelConfig& config, std::mt19937_64& rng) {
    config.validate();
    ModelParams p;
    p.config_ = config;
    auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Matrix m(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
      return m;
    };
    const auto hidden = static_cast<Eigen::Index>(config.hidden);
    for (std::size_t l = 0; l < config.layers; ++l) {
      const auto in = l == 0 ? static_cast<Eigen::Index>(config.history) : hidden;
      for (int k = 1; k <= config.order; ++k) {
        p.params_.emplace_back(theta_name('f', l, k), glorot(in, hidden));
        p.params_.emplace_back(theta_name('b', l, k), glorot(in, hidden));
      }
    }
    p.params_.emplace_back("head.weight", glorot(hidden, kEvidentialWidth));
    p.params_.emplace_back("head.bias", Matrix::Zero(1, kEvidentialWidth));
    p.params_.emplace_back("recovery.weight", glorot(hidden, static_cast<Eigen::Index>(config.history)));
    p.params_.emplace_back("recovery.bias", Matrix::Zero(1, static_cast<Eigen::Index>(config.history)));
    return p;
  }

  /// Rebuilds from named arrays (checkpoint load); shapes are checked against `config`.
  static ModelParams from_arrays(const ModelConfig& config, std::vector<ad::Parameter> arrays) {
    std::mt19937_64 rng(0);
    ModelParams p = initialize(config, rng);
    if (arrays.size() != p.params_.size())
      throw FormatError("model parameters: expected " + std::to_string(p.params_.size()) + " arrays, got " +
                        std::to_string(arrays.size()));
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      auto& dst = p.params_[i];
      auto& src = arrays[i];
      if (src.name != dst.name) throw FormatError("model parameters: unexpected array '" + src.name + "'");
      if (src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols())
        throw FormatError("model parameters: shape mismatch for '" + src.name + "'");
      dst.value = std::move(src.value);
      dst.zero_grad();
    }
    return p;
  }

  const ModelConfig& config() const noexcept { return config_; }

  ad::Parameter& theta_f(std::size_t layer, int k) { return params_[theta_index(layer, k)]; }
  ad::Parameter& theta_b(std::size_t layer, int k) { return params_[theta_index(layer, k) + 1]; }
  const ad::Parameter& theta_f(std::size_t layer, int k) const { return params_[theta_index(layer, k)]; }
  const ad::Parameter& theta_b(std::size_t layer, int k) const { return params_[theta_index(layer, k) + 1]; }
  ad::Parameter& head_weight() { return params_[head_offset()]; }
  ad::Parameter& head_bias() { return params_[head_offset() + 1]; }
  ad::Parameter& recovery_weight() { return params_[head_offset() + 2]; }
  ad::Parameter& recovery_bias() { return params_[head_offset() + 3]; }

  std::vector<ad::Parameter>& arrays() noexcept { return params_; }
  const std::vector<ad::Parameter>& arrays() const noexcept { return params_; }

  std::vector<ad::Parameter*> pointers() {
    std::vector<ad::Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Raw speeds enter the network as (x - input_offset) / input_scale.
  double input_offset = 0.0;
  double input_scale = 1.0;

 private:
  static std::string theta_name(char dir, std::size_t layer, int k) {
    return "layer" + std::to_string(layer) + ".theta_" + dir + "." + std::to_string(k);
  }

  std::size_t theta_index(std::size_t layer, int k) const {
    if (layer >= config_.layers || k < 1 || k > config_.order) throw ContractError("theta: index out of range");
    return 2 * (layer * static_cast<std::size_t>(config_.order) + static_cast<std::size_t>(k - 1));
  }

  std::size_t head_offset() const { return 2 * config_.layers * static_cast<std::size_t>(config_.order); }

  ModelConfig config_;
  std::vector<ad::Parameter> params_;
};

/// Parameters placed on a tape, either as trainable references or frozen constants.
class BoundModel {
 public:
  BoundModel(ad::Tape& tape, ModelParams& params, bool trainable = true) : tape_(&tape), config_(params.config()) {
    tensors_.reserve(params.arrays().size());
    for (auto& p : params.arrays()) tensors_.push_back(trainable ? tape.parameter(p) : tape.constant(p.value));
    offset_ = 2 * config_.layers * static_cast<std::size_t>(config_.order);
  }

  BoundModel(ad::Tape& tape, const ModelParams& params) : tape_(&tape), config_(params.config()) {
    tensors_.reserve(params.arrays().size());
    for (const auto& p : params.arrays()) tensors_.push_back(tape.constant(p.value));
    offset_ = 2 * config_.layers * static_cast<std::size_t>(config_.order);
  }

  ad::Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return config_; }
  const ad::Tensor& theta_f(std::size_t layer, int k) const { return tensors_[index(layer, k)]; }
  const ad::Tensor& theta_b(std::size_t layer, int k) const { return tensors_[index(layer, k) + 1]; }
  const ad::Tensor& head_weight() const { return tensors_[offset_]; }
  const ad::Tensor& head_bias() const { return tensors_[offset_ + 1]; }
  const ad::Tensor& recovery_weight() const { return tensors_[offset_ + 2]; }
  const ad::Tensor& recovery_bias() const { return tensors_[offset_ + 3]; }

 private:
  std::size_t index(std::size_t layer, int k) const {
    return 2 * (layer * static_cast<std::size_t>(config_.order) + static_cast<std::size_t>(k - 1));
  }

  ad::Tape* tape_;
  ModelConfig config_;
  std::vector<ad::Tensor> tensors_;
  std::size_t offset_ = 0;
};

/// H_0 = X (.) M.
inline ad::Tensor input_layer(ad::Tape& tape, const Matrix& features, const Matrix& mask) {
  if (features.rows() != mask.rows() || features.cols() != mask.cols())
    throw DimensionError("input_layer: features and mask differ in shape");
  return ad::hadamard(tape.constant(features), tape.constant(mask));
}

/// One diffusion convolution. `layer` is 0-based, so layer 1 produces H_2 and
/// carries the activation and the residual from its input.
inline ad::Tensor dgcn_layer(const BoundModel& model, const ad::Tensor& h, const ad::Tensor& forward_transition,
                             const ad::Tensor& backward_transition, std::size_t layer) {
  const int order = model.config().order;
  if (h.cols() != model.theta_f(layer, 1).rows())
    throw DimensionError("dgcn_layer: input width " + std::to_string(h.cols()) + " does not match layer " +
                         std::to_string(layer));
  const auto fwd_terms = chebyshev_terms(forward_transition, h, order);
  const auto bwd_terms = chebyshev_terms(backward_transition, h, order);
  ad::Tensor out;
  for (int k = 1; k <= order; ++k) {
    // Pairing follows the published layer: forward transition with theta_b, backward with theta_f.
    ad::Tensor term = ad::matmul(fwd_terms[static_cast<std::size_t>(k - 1)], model.theta_b(layer, k)) +
                      ad::matmul(bwd_terms[static_cast<std::size_t>(k - 1)], model.theta_f(layer, k));
    out = out.valid() ? out + term : term;
  }
  if (layer == 1) out = activate(out, model.config().activation) + h;
  return out;
}

struct EvidentialTensors {
  ad::Tensor gamma;  ///< n x 1
  ad::Tensor nu;
  ad::Tensor alpha;
  ad::Tensor beta;
};

struct ForwardOutput {
  ad::Tensor h0;
  std::vector<ad::Tensor> hidden;  ///< H_1 .. H_L
  ad::Tensor head_raw;             ///< n x 4 before constraints
  EvidentialTensors evidential;
  ad::Tensor recovery;  ///< n x T
};

inline EvidentialTensors evidential_head(const ad::Tensor& raw) {
  EvidentialTensors ev;
  ev.gamma = ad::column(raw, 0);
  ev.nu = ad::add_scalar(ad::softplus(ad::column(raw, 1)), kEvidenceFloor);
  ev.alpha = ad::add_scalar(ad::softplus(ad::column(raw, 2)), 1.0 + kEvidenceFloor);
  ev.beta = ad::add_scalar(ad::softplus(ad::column(raw, 3)), kEvidenceFloor);
  return ev;
}

/// Full network on an n-node (sub)graph. `features` and `mask` are n x T.
inline ForwardOutput forward(const BoundModel& model, const Matrix& features, const Matrix& mask,
                             const TransitionPair& transitions) {
  const auto n = features.rows();
  if (transitions.forward.rows() != n || transitions.backward.rows() != n)
    throw DimensionError("forward: transition size does not match node count");
  if (features.cols() != static_cast<Eigen::Index>(model.config().history))
    throw DimensionError("forward: feature width does not match model history");
  ad::Tape& tape = model.tape();
  ForwardOutput out;
  out.h0 = input_layer(tape, features, mask);
  const ad::Tensor fwd = tape.constant(transitions.forward);
  const ad::Tensor bwd = tape.constant(transitions.backward);
  ad::Tensor h = out.h0;
  for (std::size_t l = 0; l < model.config().layers; ++l) {
    h = dgcn_layer(model, h, fwd, bwd, l);
    out.hidden.push_back(h);
  }
  out.head_raw = ad::add(ad::matmul(h, model.head_weight()), model.head_bias());
  out.evidential = evidential_head(out.head_raw);
  out.recovery = ad::add(ad::matmul(h, model.recovery_weight()), model.recovery_bias());
  return out;
}

inline ForwardOutput forward(const BoundModel& model, const Matrix& features, const Matrix& mask,
                             const Matrix& adjacency) {
  return forward(model, features, mask, normalize(adjacency));
}

/// Per-node Normal-Inverse-Gamma parameters with derived uncertainties.
struct EvidentialOutput {
  Vector gamma;
  Vector nu;
  Vector alpha;
  Vector beta;

  Eigen::Index size() const { return gamma.size(); }

  /// beta / (nu (alpha - 1))
  Vector epistemic() const { return beta.array() / (nu.array() * (alpha.array() - 1.0)); }
  /// beta / (alpha - 1)
  Vector aleatoric() const { return beta.array() / (alpha.array() - 1.0); }

  /// Parameters of s * y + c when y follows this distribution.
  EvidentialOutput rescaled(double s, double c = 0.0) const {
    return {(gamma * s).array() + c, nu, alpha, beta * (s * s)};
  }
};

inline EvidentialOutput to_output(const EvidentialTensors& ev) {
  return {ev.gamma.value().col(0), ev.nu.value().col(0), ev.alpha.value().col(0), ev.beta.value().col(0)};
}

inline void check_nig(double nu, double alpha, double beta) {
  if (!(nu > 0.0) || !(alpha > 1.0) || !(beta > 0.0))
    throw DomainError("NIG parameters require nu > 0, alpha > 1, beta > 0");
}

struct Uncertainty {
  Vector epistemic;
  Vector aleatoric;
};

inline Uncertainty uncertainty(const EvidentialOutput& ev) {
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!(ev.alpha[i] > 1.0)) throw DomainError("uncertainty: alpha must exceed 1");
    check_nig(ev.nu[i], ev.alpha[i], ev.beta[i]);
  }
  return {ev.epistemic(), ev.aleatoric()};
}

/// Negative log of the Student-t marginal of a NIG prior at y.
inline double nig_nll(double y, double gamma, double nu, double alpha, double beta) {
  check_nig(nu, alpha, beta);
  const double omega = 2.0 * beta * (1.0 + nu);
  const double r = y - gamma;
  return 0.5 * std::log(std::numbers::pi / nu) - alpha * std::log(omega) +
         (alpha + 0.5) * std::log(r * r * nu + omega) + std::lgamma(alpha) - std::lgamma(alpha + 0.5);
}

/// Per-node NLL as an n x 1 tensor.
inline ad::Tensor nig_nll_nodes(const EvidentialTensors& ev, const ad::Tensor& target) {
  using namespace ad;
  if (target.rows() != ev.gamma.rows() || target.cols() != 1)
    throw DimensionError("nig_nll: target must be n x 1");
  const auto& nu = ev.nu;
  const auto& alpha = ev.alpha;
  for (Eigen::Index i = 0; i < nu.rows(); ++i) check_nig(nu.value()(i, 0), alpha.value()(i, 0), ev.beta.value()(i, 0));
  Tensor omega = scale(hadamard(ev.beta, add_scalar(nu, 1.0)), 2.0);
  Tensor resid_sq = square(target - ev.gamma);
  Tensor half_log = scale(log(nu), -0.5);
  Tensor t1 = add_scalar(half_log, 0.5 * std::log(std::numbers::pi));
  Tensor t2 = scale(hadamard(alpha, log(omega)), -1.0);
  Tensor t3 = hadamard(add_scalar(alpha, 0.5), log(hadamard(resid_sq, nu) + omega));
  Tensor t4 = lgamma(alpha) - lgamma(add_scalar(alpha, 0.5));
  return t1 + t2 + t3 + t4;
}

/// Mean NLL over nodes plus `reg * mean(|y - gamma| (2 nu + alpha))`.
inline ad::Tensor nig_nll_loss(const EvidentialTensors& ev, const ad::Tensor& target, double reg = 0.01) {
  using namespace ad;
  Tensor nll = reduce_mean(nig_nll_nodes(ev, target));
  if (reg == 0.0) return nll;
  Tensor evidence = add(scale(ev.nu, 2.0), ev.alpha);
  Tensor penalty = reduce_mean(hadamard(abs(target - ev.gamma), evidence));
  return nll + scale(penalty, reg);
}

}  // namespace uignn
