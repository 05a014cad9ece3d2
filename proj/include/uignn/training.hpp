#pragma once

// Subgraph sampling with random masking, loss assembly and the optimisation
// loop, plus full-graph inference at observable and missing nodes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uignn/autodiff.hpp"
#include "uignn/data.hpp"
#include "uignn/errors.hpp"
#include "uignn/graph.hpp"
#include "uignn/model.hpp"

namespace uignn {

enum class LossMode { Evidential, Mse };
enum class RecoveryTarget {
  MaskedInput,    ///< reconstruct H_0 (masked rows are zero)
  UnmaskedInput,  ///< reconstruct the raw window, including masked rows
};
enum class Normalization {
  Standardize,  ///< (x - mean) / std over observable training readings
  Scale,        ///< x / mean
};
enum class SamplingMode {
  Subgraph,   ///< random node subsets with random masking
  FullGraph,  ///< every observable node, no masking (two-step baselines)
};

struct TrainConfig {
  std::size_t iterations = 750;  ///< one iteration = one epoch of `samples_per_iter` draws
  std::size_t samples_per_iter = 8;
  std::size_t batch_size = 4;
  std::size_t history = 24;
  std::size_t horizon = 6;
  double loss_alpha = 1.0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double evidence_reg = 0.01;
  LossMode loss = LossMode::Evidential;
  RecoveryTarget recovery = RecoveryTarget::MaskedInput;
  SamplingMode sampling = SamplingMode::Subgraph;
  BackwardTransition backward_rule = BackwardTransition::Transpose;
  Normalization normalization = Normalization::Standardize;

  void validate() const {
    if (batch_size < 1) throw ParameterError("train: batch_size must be >= 1");
    if (history < 1) throw ParameterError("train: history must be >= 1");
    if (horizon < 1) throw ParameterError("train: horizon must be >= 1");
    if (loss_alpha < 0.0) throw ParameterError("train: loss alpha must be >= 0");
    if (samples_per_iter < 1) throw ParameterError("train: samples per iteration must be >= 1");
  }
};

struct SubgraphSample {
  NodeList nodes;     ///< sampled nodes, ascending
  NodeList reserved;  ///< nodes whose history stays visible
  NodeList masked;    ///< nodes whose history is hidden
  Matrix mask;        ///< n_s x T, row i all ones iff nodes[i] is reserved
  Matrix adjacency;   ///< A restricted to `nodes`
  Matrix features;    ///< n_s x T raw readings t-T+1 .. t
  Vector target;      ///< n_s raw readings at t + horizon
  std::size_t time = 0;
};

/// Valid anchor times t: every observable reading in [t-T+1, t+horizon] is present.
inline std::vector<std::size_t> valid_anchor_times(const SpeedSeries& series, const NodeList& nodes,
                                                   std::size_t history, std::size_t horizon) {
  std::vector<std::size_t> out;
  const std::size_t steps = series.steps();
  if (steps < history + horizon) return out;
  // Count of bad rows in a sliding window.
  std::vector<int> bad(steps, 0);
  for (std::size_t t = 0; t < steps; ++t)
    for (auto j : nodes)
      if (!std::isfinite(series.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)))) {
        bad[t] = 1;
        break;
      }
  std::vector<int> prefix(steps + 1, 0);
  for (std::size_t t = 0; t < steps; ++t) prefix[t + 1] = prefix[t] + bad[t];
  for (std::size_t t = history - 1; t + horizon < steps; ++t)
    if (prefix[t + horizon + 1] - prefix[t + 1 - history] == 0) out.push_back(t);
  return out;
}

/// n_s x T window of raw readings ending at t for the given nodes.
inline Matrix window_features(const SpeedSeries& series, const NodeList& nodes, std::size_t t, std::size_t history) {
  Matrix x(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(history));
  for (std::size_t p = 0; p < nodes.size(); ++p)
    for (std::size_t c = 0; c < history; ++c)
      x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) =
          series.values(static_cast<Eigen::Index>(t + 1 - history + c), static_cast<Eigen::Index>(nodes[p]));
  return x;
}

/// Draws training samples from the observable part of a graph.
class SampleSource {
 public:
  SampleSource(const RoadGraph& graph, const SpeedSeries& series, const TrainConfig& cfg)
      : graph_(&graph), series_(&series), cfg_(cfg) {
    cfg.validate();
    if (series.nodes() != graph.n) throw DimensionError("sampling: series and graph node counts differ");
    if (cfg.sampling == SamplingMode::Subgraph && graph.num_observable() < 2)
      throw DataError("sampling: need at least two observable nodes");
    if (graph.num_observable() < 1) throw DataError("sampling: no observable nodes");
    if (series.steps() < cfg.history + cfg.horizon)
      throw DataError("sampling: series of " + std::to_string(series.steps()) + " steps is shorter than history " +
                      std::to_string(cfg.history) + " + horizon " + std::to_string(cfg.horizon));
    times_ = valid_anchor_times(series, graph.observable, cfg.history, cfg.horizon);
    if (times_.empty()) throw DataError("sampling: no gap-free window in the series");
  }

  const std::vector<std::size_t>& anchor_times() const noexcept { return times_; }

  SubgraphSample draw(std::mt19937_64& rng) const {
    const auto& obs = graph_->observable;
    const std::size_t n_obs = obs.size();
    SubgraphSample s;
    std::vector<bool> masked_flag;
    if (cfg_.sampling == SamplingMode::FullGraph) {
      s.nodes = obs;
      s.reserved = obs;
      masked_flag.assign(n_obs, false);
    } else {
      const std::size_t lo = std::max<std::size_t>(2, n_obs / 3);
      std::uniform_int_distribution<std::size_t> size_dist(lo, n_obs);
      const std::size_t n_s = size_dist(rng);
      std::uniform_int_distribution<std::size_t> mask_dist(1, n_s - 1);
      const std::size_t n_m = mask_dist(rng);
      NodeList shuffled = obs;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      s.reserved.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_s - n_m));
      s.masked.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_s - n_m),
                      shuffled.begin() + static_cast<std::ptrdiff_t>(n_s));
      std::sort(s.reserved.begin(), s.reserved.end());
      std::sort(s.masked.begin(), s.masked.end());
      std::merge(s.reserved.begin(), s.reserved.end(), s.masked.begin(), s.masked.end(), std::back_inserter(s.nodes));
      for (auto node : s.nodes) masked_flag.push_back(std::binary_search(s.masked.begin(), s.masked.end(), node));
    }
    std::uniform_int_distribution<std::size_t> time_dist(0, times_.size() - 1);
    s.time = times_[time_dist(rng)];

    const auto n_s = static_cast<Eigen::Index>(s.nodes.size());
    s.mask = Matrix::Ones(n_s, static_cast<Eigen::Index>(cfg_.history));
    for (Eigen::Index i = 0; i < n_s; ++i)
      if (masked_flag[static_cast<std::size_t>(i)]) s.mask.row(i).setZero();
    s.adjacency = subgraph(*graph_, s.nodes);
    s.features = window_features(*series_, s.nodes, s.time, cfg_.history);
    s.target.resize(n_s);
    for (Eigen::Index i = 0; i < n_s; ++i)
      s.target[i] = series_->values(static_cast<Eigen::Index>(s.time + cfg_.horizon),
                                    static_cast<Eigen::Index>(s.nodes[static_cast<std::size_t>(i)]));
    return s;
  }

 private:
  const RoadGraph* graph_;
  const SpeedSeries* series_;
  TrainConfig cfg_;
  std::vector<std::size_t> times_;
};

inline SubgraphSample draw_sample(const RoadGraph& graph, const SpeedSeries& series, const TrainConfig& cfg,
                                  std::mt19937_64& rng) {
  return SampleSource(graph, series, cfg).draw(rng);
}

struct LossTerms {
  ad::Tensor prediction;  ///< J_pre
  ad::Tensor recovery;    ///< J_rec
  ad::Tensor total;       ///< J_pre + alpha J_rec
};

/// Losses for one sample. `target` (n x 1) and `recovery_target` (n x T) are
/// in the network's normalised units.
inline LossTerms compute_loss(const ForwardOutput& out, const Matrix& target, const Matrix& recovery_target,
                              const TrainConfig& cfg) {
  ad::Tape& tape = out.h0.tape();
  if (target.rows() != out.evidential.gamma.rows() || target.cols() != 1)
    throw DimensionError("compute_loss: target does not match prediction");
  if (recovery_target.rows() != out.recovery.rows() || recovery_target.cols() != out.recovery.cols())
    throw DimensionError("compute_loss: recovery target does not match recovery output");
  const ad::Tensor y = tape.constant(target);
  LossTerms terms;
  if (cfg.loss == LossMode::Evidential)
    terms.prediction = nig_nll_loss(out.evidential, y, cfg.evidence_reg);
  else
    terms.prediction = ad::reduce_mean(ad::square(out.evidential.gamma - y));
  terms.recovery = ad::reduce_mean(ad::square(out.recovery - tape.constant(recovery_target)));
  terms.total = cfg.loss_alpha == 0.0 ? terms.prediction
                                      : terms.prediction + ad::scale(terms.recovery, cfg.loss_alpha);
  return terms;
}

/// Forward pass and losses for one drawn sample.
inline LossTerms sample_loss(const BoundModel& model, const SubgraphSample& s, double input_offset,
                             double input_scale, const TrainConfig& cfg) {
  const Matrix features = (s.features.array() - input_offset) / input_scale;
  const TransitionPair transitions = normalize(s.adjacency, cfg.backward_rule);
  const ForwardOutput out = forward(model, features, s.mask, transitions);
  const Matrix target = (s.target.array() - input_offset) / input_scale;
  const Matrix recovery_target =
      cfg.recovery == RecoveryTarget::MaskedInput ? out.h0.value() : features;
  return compute_loss(out, target, recovery_target, cfg);
}

struct LossRecord {
  std::size_t iteration = 0;
  double prediction = 0.0;
  double recovery = 0.0;
  double total = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> trace;
  std::size_t optimizer_steps = 0;
};

/// Mean observable reading.
inline double observable_mean(const RoadGraph& graph, const SpeedSeries& series) {
  double sum = 0.0;
  std::size_t count = 0;
  for (auto j : graph.observable)
    for (Eigen::Index t = 0; t < series.values.rows(); ++t) {
      const double v = series.values(t, static_cast<Eigen::Index>(j));
      if (std::isfinite(v)) {
        sum += v;
        ++count;
      }
    }
  if (count == 0) throw DataError("no observable readings");
  return sum / static_cast<double>(count);
}

/// (offset, scale) used to bring observable readings to order one.
inline std::pair<double, double> observable_normalization(const RoadGraph& graph, const SpeedSeries& series,
                                                          Normalization mode) {
  const double mean = observable_mean(graph, series);
  if (mode == Normalization::Scale) return {0.0, mean > 0.0 ? mean : 1.0};
  double ss = 0.0;
  std::size_t count = 0;
  for (auto j : graph.observable)
    for (Eigen::Index t = 0; t < series.values.rows(); ++t) {
      const double v = series.values(t, static_cast<Eigen::Index>(j));
      if (std::isfinite(v)) {
        ss += (v - mean) * (v - mean);
        ++count;
      }
    }
  const double sd = std::sqrt(ss / static_cast<double>(count));
  return {mean, sd > 0.0 ? sd : 1.0};
}

/// Iterations of S draws, split into batches with averaged gradients, one
/// Adam step per batch. Passing `warm_start` continues from existing weights.
inline TrainResult train(const RoadGraph& graph, const SpeedSeries& series, const TrainConfig& cfg,
                         const ModelConfig& model_cfg, std::mt19937_64& rng,
                         const ModelParams* warm_start = nullptr) {
  cfg.validate();
  if (model_cfg.history != cfg.history) throw ParameterError("train: model history differs from train history");
  const SampleSource source(graph, series, cfg);

  TrainResult result;
  if (warm_start) {
    result.params = *warm_start;
    if (result.params.config().history != cfg.history)
      throw ParameterError("train: warm-start model has a different history length");
  } else {
    result.params = ModelParams::initialize(model_cfg, rng);
    const auto [offset, scale] = observable_normalization(graph, series, cfg.normalization);
    result.params.input_offset = offset;
    result.params.input_scale = scale;
  }
  ModelParams& params = result.params;
  params.zero_grad();
  const auto param_ptrs = params.pointers();
  ad::Adam adam({cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

  std::vector<SubgraphSample> samples;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    samples.clear();
    for (std::size_t s = 0; s < cfg.samples_per_iter; ++s) samples.push_back(source.draw(rng));

    LossRecord rec;
    rec.iteration = it;
    for (std::size_t b = 0; b < samples.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(samples.size(), b + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - b);
      for (std::size_t s = b; s < end; ++s) {
        try {
          ad::Tape tape;
          BoundModel model(tape, params, true);
          LossTerms terms = sample_loss(model, samples[s], params.input_offset, params.input_scale, cfg);
          if (!std::isfinite(terms.total.item())) throw NumericError("non-finite loss");
          tape.backward(ad::scale(terms.total, weight));
          rec.prediction += terms.prediction.item();
          rec.recovery += terms.recovery.item();
          rec.total += terms.total.item();
        } catch (const NumericError& e) {
          throw DivergenceError("training diverged at iteration " + std::to_string(it) + ", sample " +
                                std::to_string(s) + ": " + e.what());
        }
      }
      try {
        adam.step(param_ptrs);
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
      }
    }
    const double count = static_cast<double>(samples.size());
    rec.prediction /= count;
    rec.recovery /= count;
    rec.total /= count;
    result.trace.push_back(rec);
  }
  result.optimizer_steps = adam.steps();
  return result;
}

/// Builds the full-graph input from a T x N window: observable rows carry the
/// readings, missing rows are zero and masked.
struct FullGraphInput {
  Matrix features;  ///< N x T, normalised
  Matrix mask;      ///< N x T
};

inline FullGraphInput full_graph_input(const RoadGraph& graph, const Matrix& recent, double input_offset,
                                       double input_scale) {
  if (recent.cols() != static_cast<Eigen::Index>(graph.n))
    throw DimensionError("predict_full: window has " + std::to_string(recent.cols()) + " columns for " +
                         std::to_string(graph.n) + " nodes");
  const auto n = static_cast<Eigen::Index>(graph.n);
  const auto T = recent.rows();
  FullGraphInput in{Matrix::Zero(n, T), Matrix::Zero(n, T)};
  for (auto j : graph.observable) {
    const auto r = static_cast<Eigen::Index>(j);
    in.features.row(r) = (recent.col(r).transpose().array() - input_offset) / input_scale;
    in.mask.row(r).setOnes();
  }
  if (!in.features.allFinite()) throw DataError("predict_full: window has gaps at observable nodes");
  return in;
}

/// One forward pass over the whole graph. `recent` is T x N raw readings
/// (columns of missing nodes are ignored); results are in raw units.
inline EvidentialOutput predict_full(const RoadGraph& graph, const TransitionPair& transitions,
                                     const ModelParams& params, const Matrix& recent) {
  if (recent.rows() != static_cast<Eigen::Index>(params.config().history))
    throw DimensionError("predict_full: window length " + std::to_string(recent.rows()) + " != history " +
                         std::to_string(params.config().history));
  const FullGraphInput in = full_graph_input(graph, recent, params.input_offset, params.input_scale);
  ad::Tape tape;
  const BoundModel model(tape, params);
  const ForwardOutput out = forward(model, in.features, in.mask, transitions);
  return to_output(out.evidential).rescaled(params.input_scale, params.input_offset);
}

inline EvidentialOutput predict_full(const RoadGraph& graph, const ModelParams& params, const Matrix& recent) {
  return predict_full(graph, normalize(graph), params, recent);
}

}  // namespace uignn
