#pragma once

// Error metrics, observable/missing reporting and impute-then-forecast baselines.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "uignn/data.hpp"
#include "uignn/errors.hpp"
#include "uignn/graph.hpp"
#include "uignn/model.hpp"
#include "uignn/training.hpp"

namespace uignn {

inline void require_paired(std::span<const double> pred, std::span<const double> truth, const char* name) {
  if (pred.size() != truth.size()) throw DimensionError(std::string(name) + ": length mismatch");
  if (pred.empty()) throw ContractError(std::string(name) + ": empty input");
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  require_paired(pred, truth, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

inline double mae(std::span<const double> pred, std::span<const double> truth) {
  require_paired(pred, truth, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

/// 1 - SSE/SST about the truth mean; empty when the truth has no variance.
inline std::optional<double> r2(std::span<const double> pred, std::span<const double> truth) {
  require_paired(pred, truth, "r2");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    sst += (truth[i] - mean) * (truth[i] - mean);
  }
  if (sst == 0.0) return std::nullopt;
  return 1.0 - sse / sst;
}

/// Ranks with ties averaged (1-based).
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  require_paired(x, y, "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  require_paired(x, y, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Forecasts for a run of anchor times, all nodes. Rows are windows, columns nodes.
struct PredictionSet {
  std::vector<std::size_t> times;
  Matrix prediction;
  Matrix truth;
  Matrix nll;
  Matrix epistemic;
  Matrix aleatoric;

  std::size_t windows() const noexcept { return times.size(); }
};

/// Runs the model at every anchor time of `inputs` where the observable
/// window and the full target row are present. `truth` supplies targets and
/// must be aligned row-for-row with `inputs`.
inline PredictionSet collect_predictions(const RoadGraph& graph, const ModelParams& params, const SpeedSeries& inputs,
                                         const SpeedSeries& truth, std::size_t horizon, std::size_t stride = 1) {
  if (inputs.steps() != truth.steps() || inputs.nodes() != truth.nodes())
    throw DimensionError("collect_predictions: input and truth series differ in shape");
  if (stride < 1) throw ParameterError("collect_predictions: stride must be >= 1");
  const std::size_t T = params.config().history;
  auto anchors = valid_anchor_times(inputs, graph.observable, T, horizon);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < anchors.size(); i += stride) {
    const auto row = truth.values.row(static_cast<Eigen::Index>(anchors[i] + horizon));
    if (row.allFinite()) kept.push_back(anchors[i]);
  }
  if (kept.empty()) throw DataError("collect_predictions: no complete evaluation window");

  const auto W = static_cast<Eigen::Index>(kept.size());
  const auto N = static_cast<Eigen::Index>(graph.n);
  PredictionSet ps;
  ps.times = kept;
  ps.prediction.resize(W, N);
  ps.truth.resize(W, N);
  ps.nll.resize(W, N);
  ps.epistemic.resize(W, N);
  ps.aleatoric.resize(W, N);
  const TransitionPair transitions = normalize(graph);
  for (Eigen::Index w = 0; w < W; ++w) {
    const std::size_t t = kept[static_cast<std::size_t>(w)];
    const Matrix recent = inputs.values.middleRows(static_cast<Eigen::Index>(t + 1 - T), static_cast<Eigen::Index>(T));
    Matrix safe = recent;
    for (Eigen::Index j = 0; j < safe.size(); ++j)
      if (!std::isfinite(safe.data()[j])) safe.data()[j] = 0.0;
    const EvidentialOutput ev = predict_full(graph, transitions, params, safe);
    const Vector epi = ev.epistemic();
    const Vector ale = ev.aleatoric();
    for (Eigen::Index j = 0; j < N; ++j) {
      const double y = truth.values(static_cast<Eigen::Index>(t + horizon), j);
      ps.prediction(w, j) = ev.gamma[j];
      ps.truth(w, j) = y;
      ps.nll(w, j) = nig_nll(y, ev.gamma[j], ev.nu[j], ev.alpha[j], ev.beta[j]);
      ps.epistemic(w, j) = epi[j];
      ps.aleatoric(w, j) = ale[j];
    }
  }
  return ps;
}

/// Same windows and truth as `like`, with a constant forecast and no uncertainty.
inline PredictionSet constant_prediction(const PredictionSet& like, double value) {
  PredictionSet ps = like;
  ps.prediction.setConstant(value);
  ps.nll.setConstant(std::numeric_limits<double>::quiet_NaN());
  ps.epistemic.setConstant(std::numeric_limits<double>::quiet_NaN());
  ps.aleatoric.setConstant(std::numeric_limits<double>::quiet_NaN());
  return ps;
}

struct NllReport {
  Vector per_node;
  std::optional<double> observable;
  std::optional<double> missing;
};

inline std::optional<double> group_mean(const Vector& per_node, const NodeList& group) {
  if (group.empty()) return std::nullopt;
  double acc = 0.0;
  for (auto j : group) acc += per_node[static_cast<Eigen::Index>(j)];
  return acc / static_cast<double>(group.size());
}

/// Mean NLL per node across windows, and per group. `truth` is windows x N.
inline NllReport nll_report(const std::vector<EvidentialOutput>& outputs, const Matrix& truth,
                            const RoadGraph& graph) {
  if (static_cast<Eigen::Index>(outputs.size()) != truth.rows())
    throw DimensionError("nll_report: one output per truth row required");
  if (outputs.empty()) throw ContractError("nll_report: no outputs");
  NllReport r;
  r.per_node = Vector::Zero(truth.cols());
  for (std::size_t w = 0; w < outputs.size(); ++w) {
    const auto& ev = outputs[w];
    if (ev.size() != truth.cols()) throw DimensionError("nll_report: output size does not match node count");
    for (Eigen::Index j = 0; j < truth.cols(); ++j)
      r.per_node[j] += nig_nll(truth(static_cast<Eigen::Index>(w), j), ev.gamma[j], ev.nu[j], ev.alpha[j], ev.beta[j]);
  }
  r.per_node /= static_cast<double>(outputs.size());
  r.observable = group_mean(r.per_node, graph.observable);
  r.missing = group_mean(r.per_node, graph.missing);
  return r;
}

struct GroupMetrics {
  std::size_t nodes = 0;
  std::optional<double> rmse;
  std::optional<double> mae;
  std::optional<double> r2;
  std::optional<double> nll;
  std::optional<double> epistemic;
};

struct MetricReport {
  std::string method;
  std::size_t horizon = 0;
  GroupMetrics observable;
  GroupMetrics missing;
  std::vector<std::string> node_ids;
  std::vector<bool> node_observable;
  Vector node_rmse;
  Vector node_mae;
  Vector node_nll;
  Vector node_epistemic;
};

namespace detail {

inline std::optional<double> finite_or_empty(double v) {
  if (std::isfinite(v)) return v;
  return std::nullopt;
}

inline GroupMetrics group_metrics(const PredictionSet& ps, const NodeList& group) {
  GroupMetrics g;
  g.nodes = group.size();
  if (group.empty()) return g;
  std::vector<double> pred, truth;
  double nll = 0.0, epi = 0.0;
  for (auto j : group) {
    const auto c = static_cast<Eigen::Index>(j);
    for (Eigen::Index w = 0; w < ps.prediction.rows(); ++w) {
      pred.push_back(ps.prediction(w, c));
      truth.push_back(ps.truth(w, c));
      nll += ps.nll(w, c);
      epi += ps.epistemic(w, c);
    }
  }
  g.rmse = rmse(pred, truth);
  g.mae = mae(pred, truth);
  g.r2 = r2(pred, truth);
  g.nll = finite_or_empty(nll / static_cast<double>(pred.size()));
  g.epistemic = finite_or_empty(epi / static_cast<double>(pred.size()));
  return g;
}

}  // namespace detail

/// Splits a prediction set into observable and missing groups. Each group's
/// R^2 uses that group's own truth mean.
inline MetricReport build_report(const PredictionSet& ps, const RoadGraph& graph, std::size_t horizon,
                                 std::string method = "uignn") {
  MetricReport r;
  r.method = std::move(method);
  r.horizon = horizon;
  r.observable = detail::group_metrics(ps, graph.observable);
  r.missing = detail::group_metrics(ps, graph.missing);
  const auto N = ps.prediction.cols();
  r.node_ids = graph.ids;
  if (r.node_ids.size() != graph.n) {
    r.node_ids.clear();
    for (std::size_t i = 0; i < graph.n; ++i) r.node_ids.push_back(std::to_string(i));
  }
  r.node_observable = graph.observable_mask();
  r.node_rmse.resize(N);
  r.node_mae.resize(N);
  r.node_nll.resize(N);
  r.node_epistemic.resize(N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const Vector err = ps.prediction.col(j) - ps.truth.col(j);
    r.node_rmse[j] = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
    r.node_mae[j] = err.cwiseAbs().mean();
    r.node_nll[j] = ps.nll.col(j).mean();
    r.node_epistemic[j] = ps.epistemic.col(j).mean();
  }
  return r;
}

namespace detail {

inline std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  return format_double(*v);
}

inline std::string pretty(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace detail

inline void write_report_csv(const std::string& path, std::span<const MetricReport> reports) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "method,horizon,group,nodes,rmse,mae,r2,nll,epistemic\n";
  for (const auto& r : reports) {
    for (int g = 0; g < 2; ++g) {
      const GroupMetrics& m = g == 0 ? r.observable : r.missing;
      out << r.method << ',' << r.horizon << ',' << (g == 0 ? "observable" : "missing") << ',' << m.nodes << ','
          << detail::cell(m.rmse) << ',' << detail::cell(m.mae) << ',' << detail::cell(m.r2) << ','
          << detail::cell(m.nll) << ',' << detail::cell(m.epistemic) << '\n';
    }
  }
}

inline std::string format_report_table(std::span<const MetricReport> reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-14s %7s %-10s %5s %9s %9s %9s %9s %10s\n", "method", "horizon", "group",
                "nodes", "RMSE", "MAE", "R2", "NLL", "epistemic");
  os << line;
  for (const auto& r : reports) {
    for (int g = 0; g < 2; ++g) {
      const GroupMetrics& m = g == 0 ? r.observable : r.missing;
      std::snprintf(line, sizeof(line), "%-14s %7zu %-10s %5zu %9s %9s %9s %9s %10s\n", r.method.c_str(), r.horizon,
                    g == 0 ? "observable" : "missing", m.nodes, detail::pretty(m.rmse).c_str(),
                    detail::pretty(m.mae).c_str(), detail::pretty(m.r2).c_str(), detail::pretty(m.nll).c_str(),
                    detail::pretty(m.epistemic).c_str());
      os << line;
    }
  }
  return os.str();
}

/// node_id,group,rmse,mae,nll,epistemic
inline void write_per_node_csv(const std::string& path, const MetricReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "node_id,group,rmse,mae,nll,epistemic\n";
  for (std::size_t j = 0; j < r.node_ids.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    out << r.node_ids[j] << ',' << (r.node_observable[j] ? "observable" : "missing") << ','
        << detail::format_double(r.node_rmse[c]) << ',' << detail::format_double(r.node_mae[c]) << ',';
    if (std::isfinite(r.node_nll[c])) out << detail::format_double(r.node_nll[c]);
    out << ',';
    if (std::isfinite(r.node_epistemic[c])) out << detail::format_double(r.node_epistemic[c]);
    out << '\n';
  }
}

enum class Imputer { Mean, Knn };

inline std::string to_string(Imputer i) { return i == Imputer::Mean ? "mean" : "knn"; }

/// Missing columns replaced by the per-timestep mean of the observable columns.
inline SpeedSeries mean_impute(const SpeedSeries& series, const RoadGraph& graph) {
  if (graph.observable.empty()) throw DataError("mean_impute: no observable node");
  SpeedSeries out = series;
  for (Eigen::Index t = 0; t < series.values.rows(); ++t) {
    double acc = 0.0;
    std::size_t count = 0;
    for (auto j : graph.observable) {
      const double v = series.values(t, static_cast<Eigen::Index>(j));
      if (std::isfinite(v)) {
        acc += v;
        ++count;
      }
    }
    const double fill = count ? acc / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    for (auto e : graph.missing) out.values(t, static_cast<Eigen::Index>(e)) = fill;
  }
  return out;
}

/// The k observable nodes nearest to `node` by road distance (shorter of the
/// two directions), ties broken by index.
inline NodeList nearest_observable(const RoadGraph& graph, NodeIndex node, std::size_t k) {
  std::vector<std::pair<double, NodeIndex>> cand;
  for (auto o : graph.observable) {
    const double d = std::min(graph.distances(static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(o)),
                              graph.distances(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(node)));
    if (std::isfinite(d)) cand.emplace_back(d, o);
  }
  std::sort(cand.begin(), cand.end());
  NodeList out;
  for (std::size_t i = 0; i < std::min(k, cand.size()); ++i) out.push_back(cand[i].second);
  return out;
}

/// Missing columns replaced by the unweighted mean of the k nearest observable columns.
inline SpeedSeries knn_impute(const SpeedSeries& series, const RoadGraph& graph, std::size_t k = 3) {
  if (k < 1) throw ParameterError("knn_impute: k must be >= 1");
  if (graph.distances.rows() != static_cast<Eigen::Index>(graph.n))
    throw DataError("knn_impute: graph has no distance matrix");
  SpeedSeries out = series;
  for (auto e : graph.missing) {
    const NodeList nn = nearest_observable(graph, e, k);
    if (nn.empty()) throw DataError("knn_impute: missing node " + std::to_string(e) + " has no reachable sensor");
    for (Eigen::Index t = 0; t < series.values.rows(); ++t) {
      double acc = 0.0;
      std::size_t count = 0;
      for (auto o : nn) {
        const double v = series.values(t, static_cast<Eigen::Index>(o));
        if (std::isfinite(v)) {
          acc += v;
          ++count;
        }
      }
      out.values(t, static_cast<Eigen::Index>(e)) =
          count ? acc / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

inline SpeedSeries impute(Imputer imputer, const SpeedSeries& series, const RoadGraph& graph, std::size_t k = 3) {
  return imputer == Imputer::Mean ? mean_impute(series, graph) : knn_impute(series, graph, k);
}

struct TwoStepResult {
  MetricReport report;
  PredictionSet predictions;
  ModelParams params;
};

/// Impute missing columns, train the same network on the completed matrix
/// without masking, then forecast the test slice from imputed inputs.
inline TwoStepResult two_step_pipeline(Imputer imputer, const RoadGraph& graph, const SpeedSeries& train_data,
                                       const SpeedSeries& test_data, const TrainConfig& cfg,
                                       const ModelConfig& model_cfg, std::mt19937_64& rng, std::size_t knn_k = 3) {
  const SpeedSeries train_full = impute(imputer, train_data, graph, knn_k);
  const SpeedSeries test_full = impute(imputer, test_data, graph, knn_k);
  RoadGraph completed = graph;
  completed.set_missing({});

  TrainConfig baseline_cfg = cfg;
  baseline_cfg.sampling = SamplingMode::FullGraph;
  baseline_cfg.loss_alpha = 0.0;
  TrainResult trained = train(completed, train_full, baseline_cfg, model_cfg, rng);

  TwoStepResult out;
  out.predictions = collect_predictions(completed, trained.params, test_full, test_data, cfg.horizon);
  out.report = build_report(out.predictions, graph, cfg.horizon, to_string(imputer) + "+dgcn");
  out.params = std::move(trained.params);
  return out;
}

}  // namespace uignn
