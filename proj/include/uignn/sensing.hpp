#pragma once

// Sequential sensor deployment: retrain on the current sensor set, then add
// the candidates with the highest epistemic uncertainty (or random ones).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uignn/data.hpp"
#include "uignn/eval.hpp"
#include "uignn/training.hpp"

namespace uignn {

enum class Policy { Uncertainty, Random };

inline std::string to_string(Policy p) { return p == Policy::Uncertainty ? "uncertainty" : "random"; }

inline Policy parse_policy(const std::string& s) {
  if (s == "uncertainty") return Policy::Uncertainty;
  if (s == "random") return Policy::Random;
  throw ParameterError("unknown policy '" + s + "'");
}

struct SensingConfig {
  std::size_t initial_count = 10;
  std::size_t budget = 5;
  std::size_t steps = 5;
  TrainConfig train;
  ModelConfig model;
  bool warm_start = false;
};

struct SensingStep {
  std::size_t step = 0;
  std::size_t n_observable = 0;
  NodeList added;  ///< nodes revealed right before this step's training (initial set at step 0)
  std::optional<double> rmse_observable;
  std::optional<double> rmse_missing;
  bool truncated = false;  ///< fewer than `budget` candidates were left
};

struct SensingEpisode {
  Policy policy = Policy::Uncertainty;
  std::size_t initial_count = 0;
  std::size_t budget = 0;
  std::size_t steps = 0;
  std::vector<SensingStep> records;
  std::vector<NodeList> observable_sets;  ///< sensor set used at each step
};

/// Top `budget` candidates by value, ties to the lower index. Excluded nodes
/// are never chosen.
inline NodeList selection(std::span<const double> uncertainty, const std::vector<bool>& excluded,
                          std::size_t budget) {
  if (excluded.size() != uncertainty.size()) throw DimensionError("selection: exclusion mask size mismatch");
  NodeList cand;
  for (std::size_t i = 0; i < uncertainty.size(); ++i)
    if (!excluded[i]) cand.push_back(i);
  std::stable_sort(cand.begin(), cand.end(),
                   [&](NodeIndex a, NodeIndex b) { return uncertainty[a] > uncertainty[b]; });
  cand.resize(std::min(budget, cand.size()));
  std::sort(cand.begin(), cand.end());
  return cand;
}

/// Mean epistemic uncertainty per node across a prediction set.
inline std::vector<double> mean_epistemic(const PredictionSet& ps) {
  std::vector<double> out(static_cast<std::size_t>(ps.epistemic.cols()));
  for (Eigen::Index j = 0; j < ps.epistemic.cols(); ++j) out[static_cast<std::size_t>(j)] = ps.epistemic.col(j).mean();
  return out;
}

/// Runs one deployment episode. Every graph node is a candidate site; the
/// series carries readings at all of them, revealed as sensors are added.
/// Uncertainty is scored on the validation slice, errors on the test slice.
inline SensingEpisode run_episode(const RoadGraph& graph, const SplitSeries& data, const SensingConfig& cfg,
                                  Policy policy, std::mt19937_64& rng,
                                  std::optional<NodeList> initial = std::nullopt) {
  if (cfg.initial_count < 1 || cfg.initial_count >= graph.n)
    throw ParameterError("sensing: initial sensor count must be in [1, N)");
  if (cfg.budget < 1) throw ParameterError("sensing: budget must be >= 1");

  NodeList observed;
  if (initial) {
    observed = *initial;
  } else {
    NodeList all(graph.n);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    observed.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.initial_count));
  }
  std::sort(observed.begin(), observed.end());

  SensingEpisode ep;
  ep.policy = policy;
  ep.initial_count = observed.size();
  ep.budget = cfg.budget;
  ep.steps = cfg.steps;

  NodeList added = observed;
  bool truncated = false;
  std::optional<ModelParams> previous;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    RoadGraph g = graph;
    std::vector<bool> is_obs(graph.n, false);
    for (auto i : observed) is_obs[i] = true;
    NodeList missing;
    for (std::size_t i = 0; i < graph.n; ++i)
      if (!is_obs[i]) missing.push_back(i);
    g.set_missing(missing);

    const ModelParams* warm = cfg.warm_start && previous ? &*previous : nullptr;
    TrainResult trained = train(g, data.train, cfg.train, cfg.model, rng, warm);
    const PredictionSet test_ps = collect_predictions(g, trained.params, data.test, data.test, cfg.train.horizon);
    const MetricReport report = build_report(test_ps, g, cfg.train.horizon);

    SensingStep rec;
    rec.step = step;
    rec.n_observable = observed.size();
    rec.added = added;
    rec.rmse_observable = report.observable.rmse;
    rec.rmse_missing = report.missing.rmse;
    rec.truncated = truncated;
    ep.records.push_back(rec);
    ep.observable_sets.push_back(observed);

    if (step == cfg.steps || missing.empty()) break;
    const std::size_t take = std::min(cfg.budget, missing.size());
    truncated = take < cfg.budget;
    if (policy == Policy::Uncertainty) {
      const PredictionSet val_ps = collect_predictions(g, trained.params, data.val, data.val, cfg.train.horizon);
      const auto epi = mean_epistemic(val_ps);
      added = selection(epi, is_obs, take);
    } else {
      NodeList pool = missing;
      std::shuffle(pool.begin(), pool.end(), rng);
      added.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
      std::sort(added.begin(), added.end());
    }
    observed.insert(observed.end(), added.begin(), added.end());
    std::sort(observed.begin(), observed.end());
    if (cfg.warm_start) previous = std::move(trained.params);
  }
  return ep;
}

/// step,policy,n_observable,node_ids_added,rmse_obs,rmse_missing
inline void write_episode_csv(const std::string& path, const SensingEpisode& ep,
                              const std::vector<std::string>& ids = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "step,policy,n_observable,node_ids_added,rmse_obs,rmse_missing\n";
  for (const auto& r : ep.records) {
    out << r.step << ',' << to_string(ep.policy) << ',' << r.n_observable << ',';
    for (std::size_t i = 0; i < r.added.size(); ++i) {
      if (i) out << ';';
      out << (r.added[i] < ids.size() ? ids[r.added[i]] : std::to_string(r.added[i]));
    }
    out << ',' << detail::cell(r.rmse_observable) << ',' << detail::cell(r.rmse_missing) << '\n';
  }
}

}  // namespace uignn
