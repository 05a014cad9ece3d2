#pragma once

// Command implementations behind tools/uignn. Each command takes a resolved
// option struct and writes its files under `out`; argument parsing lives in
// the tool itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "uignn/checkpoint.hpp"
#include "uignn/data.hpp"
#include "uignn/eval.hpp"
#include "uignn/sensing.hpp"
#include "uignn/training.hpp"

namespace uignn::cli {

using nlohmann::json;

/// "30min", "1h", "90s" or a bare step count.
inline std::size_t parse_horizon(const std::string& text, std::int64_t resolution_seconds) {
  if (text.empty()) throw ParameterError("horizon is empty");
  std::size_t pos = 0;
  double amount = 0.0;
  try {
    amount = std::stod(text, &pos);
  } catch (const std::logic_error&) {
    throw ParameterError("unparsable horizon '" + text + "'");
  }
  const std::string unit = text.substr(pos);
  double seconds = 0.0;
  if (unit.empty()) {
    if (amount < 1.0 || amount != std::floor(amount)) throw ParameterError("horizon steps must be a positive integer");
    return static_cast<std::size_t>(amount);
  }
  if (unit == "min" || unit == "m")
    seconds = amount * 60.0;
  else if (unit == "h")
    seconds = amount * 3600.0;
  else if (unit == "s")
    seconds = amount;
  else
    throw ParameterError("unknown horizon unit '" + unit + "'");
  const double steps = seconds / static_cast<double>(resolution_seconds);
  if (steps < 1.0 || std::abs(steps - std::round(steps)) > 1e-9)
    throw ParameterError("horizon '" + text + "' is not a positive multiple of the " +
                         std::to_string(resolution_seconds) + " s resolution");
  return static_cast<std::size_t>(std::llround(steps));
}

inline json kappa_json(double kappa) { return std::isfinite(kappa) ? json(kappa) : json(nullptr); }

inline double kappa_from_json(const json& j) { return j.is_null() ? kInfiniteDistance : j.get<double>(); }

// ---------------------------------------------------------------- datasets

struct GraphOptions {
  std::string data;       ///< speed CSV
  std::string distances;  ///< from,to,cost CSV
  std::string manifest;   ///< optional; supplies kernel sigma/kappa
  std::optional<double> sigma;
  std::optional<double> kappa;
};

struct Dataset {
  RoadGraph graph;
  SpeedSeries series;
  std::size_t gaps_filled = 0;
};

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

/// Loads speeds and distances, fills short gaps and builds the kernel graph.
/// Explicit sigma/kappa win over the manifest; without either, sigma is the
/// std of finite distances and nothing is thresholded.
inline Dataset load_dataset(const GraphOptions& opt) {
  if (opt.data.empty()) throw ParameterError("--data is required");
  if (opt.distances.empty()) throw ParameterError("--distances is required");
  Dataset ds;
  ds.series = load_speed_csv(opt.data);
  ds.gaps_filled = fill_short_gaps(ds.series);
  const Matrix dist = load_distances_csv(opt.distances, ds.series.sensor_ids);
  std::optional<double> sigma = opt.sigma;
  double kappa = opt.kappa.value_or(kInfiniteDistance);
  if (!opt.manifest.empty()) {
    const json m = read_json(opt.manifest);
    if (!sigma && m.contains("kernel_sigma")) sigma = m.at("kernel_sigma").get<double>();
    if (!opt.kappa && m.contains("kernel_kappa")) kappa = kappa_from_json(m.at("kernel_kappa"));
  }
  ds.graph = build_adjacency(dist, sigma, kappa);
  ds.graph.ids = ds.series.sensor_ids;
  return ds;
}

inline NodeList indices_of(const std::vector<std::string>& ids, const std::vector<std::string>& wanted) {
  NodeList out;
  for (const auto& w : wanted) {
    const auto it = std::find(ids.begin(), ids.end(), w);
    if (it == ids.end()) throw DataError("sensor '" + w + "' is not in the dataset");
    out.push_back(static_cast<NodeIndex>(it - ids.begin()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> ids_of(const RoadGraph& g, const NodeList& nodes) {
  std::vector<std::string> out;
  for (auto i : nodes) out.push_back(g.ids[i]);
  return out;
}

// ---------------------------------------------------------------- training knobs

struct TrainingOptions {
  std::size_t epochs = 750;
  std::size_t samples = 8;
  std::size_t batch = 4;
  double lr = 1e-4;
  double alpha = 1.0;
  double evidence_reg = 0.01;
  int k_order = 2;
  std::size_t layers = 3;
  std::size_t hidden = 100;
  std::size_t history = 24;
  std::string horizon = "6";
  std::string activation = "relu";
  std::string recovery = "masked";
  std::string loss = "evidential";

  TrainConfig train_config(std::int64_t resolution) const {
    TrainConfig c;
    c.iterations = epochs;
    c.samples_per_iter = samples;
    c.batch_size = batch;
    c.lr = lr;
    c.loss_alpha = alpha;
    c.evidence_reg = evidence_reg;
    c.history = history;
    c.horizon = parse_horizon(horizon, resolution);
    if (recovery == "masked")
      c.recovery = RecoveryTarget::MaskedInput;
    else if (recovery == "unmasked")
      c.recovery = RecoveryTarget::UnmaskedInput;
    else
      throw ParameterError("recovery target must be 'masked' or 'unmasked'");
    if (loss == "evidential")
      c.loss = LossMode::Evidential;
    else if (loss == "mse")
      c.loss = LossMode::Mse;
    else
      throw ParameterError("loss must be 'evidential' or 'mse'");
    c.validate();
    return c;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.history = history;
    m.hidden = hidden;
    m.layers = layers;
    m.order = k_order;
    m.activation = parse_activation(activation);
    m.validate();
    return m;
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"samples_per_iter", c.samples_per_iter},
          {"batch_size", c.batch_size},
          {"history", c.history},
          {"horizon", c.horizon},
          {"loss_alpha", c.loss_alpha},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"evidence_reg", c.evidence_reg},
          {"loss", c.loss == LossMode::Evidential ? "evidential" : "mse"},
          {"recovery", c.recovery == RecoveryTarget::MaskedInput ? "masked" : "unmasked"}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.iterations = j.at("iterations").get<std::size_t>();
  c.samples_per_iter = j.at("samples_per_iter").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.history = j.at("history").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.loss_alpha = j.at("loss_alpha").get<double>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.evidence_reg = j.at("evidence_reg").get<double>();
  c.loss = j.at("loss").get<std::string>() == "mse" ? LossMode::Mse : LossMode::Evidential;
  c.recovery = j.at("recovery").get<std::string>() == "unmasked" ? RecoveryTarget::UnmaskedInput
                                                                 : RecoveryTarget::MaskedInput;
  c.validate();
  return c;
}

inline json graph_json(const RoadGraph& g) {
  return {{"nodes", g.n}, {"kernel_sigma", g.kernel_sigma}, {"kernel_kappa", kappa_json(g.kernel_kappa)}};
}

inline std::filesystem::path prepare_out(const std::string& out) {
  std::filesystem::path p(out.empty() ? "." : out);
  std::filesystem::create_directories(p);
  return p;
}

inline SplitSeries split_for(const SpeedSeries& s, const TrainConfig& c) {
  return split(s, {}, c.history + c.horizon + 1);
}

// ---------------------------------------------------------------- generate

struct GenerateOptions {
  std::size_t nodes = 20;
  std::size_t steps = 2000;
  double noise = SyntheticConfig{}.noise;
  double noise_spread = SyntheticConfig{}.noise_spread;
  double kernel_width = SyntheticConfig{}.kernel_width;
  double kappa_factor = SyntheticConfig{}.kappa_factor;
  std::uint64_t seed = 0;
  std::string out = ".";
};

inline int cmd_generate(const GenerateOptions& opt, std::ostream& log) {
  SyntheticConfig sc;
  sc.nodes = opt.nodes;
  sc.steps = opt.steps;
  sc.noise = opt.noise;
  sc.noise_spread = opt.noise_spread;
  sc.kernel_width = opt.kernel_width;
  sc.kappa_factor = opt.kappa_factor;
  std::mt19937_64 rng(opt.seed);
  const SyntheticDataset ds = generate_synthetic(sc, rng);
  const auto dir = prepare_out(opt.out);
  write_speed_csv((dir / "speeds.csv").string(), ds.series);
  write_distances_csv((dir / "distances.csv").string(), ds.graph.distances, ds.series.sensor_ids);

  json coords = json::array();
  for (Eigen::Index i = 0; i < ds.coordinates.rows(); ++i)
    coords.push_back({ds.coordinates(i, 0), ds.coordinates(i, 1)});
  write_json(dir / "manifest.json", {{"nodes", sc.nodes},
                                     {"steps", sc.steps},
                                     {"resolution", sc.resolution},
                                     {"kernel_sigma", ds.graph.kernel_sigma},
                                     {"kernel_kappa", kappa_json(ds.graph.kernel_kappa)},
                                     {"sensor_ids", ds.series.sensor_ids},
                                     {"coordinates_km", coords}});
  write_json(dir / "resolved_config.json",
             {{"command", "generate"}, {"seed", opt.seed}, {"nodes", sc.nodes}, {"steps", sc.steps},
              {"noise", sc.noise}, {"noise_spread", sc.noise_spread}, {"kernel_width", sc.kernel_width},
              {"kappa_factor", sc.kappa_factor}});
  log << "wrote " << sc.steps << " x " << sc.nodes << " speeds to " << (dir / "speeds.csv").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  GraphOptions graph;
  TrainingOptions training;
  std::size_t hide_count = 0;
  std::uint64_t seed = 0;
  std::string out = ".";
};

inline int cmd_train(const TrainOptions& opt, std::ostream& log) {
  Dataset ds = load_dataset(opt.graph);
  const TrainConfig tc = opt.training.train_config(ds.series.resolution);
  const ModelConfig mc = opt.training.model_config();
  std::mt19937_64 rng(opt.seed);
  if (opt.hide_count >= ds.graph.n) throw ParameterError("--hide-count must leave at least one observable sensor");
  RoadGraph g = hide_locations(ds.graph, opt.hide_count, rng);
  const SplitSeries parts = split_for(ds.series, tc);

  log << "training on " << g.num_observable() << " observable sensors, " << g.num_missing() << " hidden, "
      << tc.iterations << " iterations\n";
  TrainResult res = train(g, parts.train, tc, mc, rng);

  const auto dir = prepare_out(opt.out);
  Checkpoint ck;
  ck.params = res.params;
  ck.metadata = {{"seed", opt.seed},
                 {"train", to_json(tc)},
                 {"graph", graph_json(g)},
                 {"missing", ids_of(g, g.missing)}};
  save_checkpoint((dir / "model.ckpt").string(), ck);

  std::ofstream trace(dir / "loss_trace.csv");
  if (!trace) throw Error("cannot write loss trace");
  trace << "iteration,J_pre,J_rec,J_total\n";
  for (const auto& r : res.trace)
    trace << r.iteration << ',' << detail::format_double(r.prediction) << ',' << detail::format_double(r.recovery)
          << ',' << detail::format_double(r.total) << '\n';

  write_json(dir / "resolved_config.json", {{"command", "train"},
                                            {"seed", opt.seed},
                                            {"data", opt.graph.data},
                                            {"distances", opt.graph.distances},
                                            {"hide_count", opt.hide_count},
                                            {"graph", graph_json(g)},
                                            {"missing", ids_of(g, g.missing)},
                                            {"train", to_json(tc)},
                                            {"model", to_json(mc)}});
  if (!res.trace.empty()) log << "final J_total " << res.trace.back().total << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  GraphOptions graph;
  std::string checkpoint;
  std::vector<std::string> baselines;  ///< "mean", "knn", "global"
  std::string split = "test";
  std::size_t knn_k = 3;
  std::uint64_t seed = 0;
  std::string out = ".";
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& log) {
  if (opt.checkpoint.empty()) throw ParameterError("--checkpoint is required");
  if (!std::filesystem::exists(opt.checkpoint)) throw Error("checkpoint '" + opt.checkpoint + "' does not exist");
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  const json& run = ck.metadata;
  GraphOptions gopt = opt.graph;
  if (run.contains("graph")) {
    if (!gopt.sigma && gopt.manifest.empty()) gopt.sigma = run["graph"].at("kernel_sigma").get<double>();
    if (!gopt.kappa && gopt.manifest.empty()) gopt.kappa = kappa_from_json(run["graph"].at("kernel_kappa"));
  }
  Dataset ds = load_dataset(gopt);
  RoadGraph g = ds.graph;
  if (run.contains("missing")) g.set_missing(indices_of(g.ids, run["missing"].get<std::vector<std::string>>()));
  TrainConfig tc = run.contains("train") ? train_config_from_json(run["train"]) : TrainConfig{};
  tc.history = ck.params.config().history;

  const SplitSeries parts = split_for(ds.series, tc);
  const SpeedSeries* target = nullptr;
  if (opt.split == "test")
    target = &parts.test;
  else if (opt.split == "val")
    target = &parts.val;
  else
    throw ParameterError("--split must be 'test' or 'val'");

  std::vector<MetricReport> reports;
  const PredictionSet ps = collect_predictions(g, ck.params, *target, *target, tc.horizon);
  reports.push_back(build_report(ps, g, tc.horizon, "uignn"));

  std::mt19937_64 rng(opt.seed);
  for (const auto& b : opt.baselines) {
    if (b == "global") {
      reports.push_back(
          build_report(constant_prediction(ps, observable_mean(g, parts.train)), g, tc.horizon, "global-mean"));
    } else if (b == "mean" || b == "knn") {
      log << "training " << b << " two-step baseline\n";
      const Imputer imp = b == "mean" ? Imputer::Mean : Imputer::Knn;
      reports.push_back(
          two_step_pipeline(imp, g, parts.train, *target, tc, ck.params.config(), rng, opt.knn_k).report);
    } else {
      throw ParameterError("unknown baseline '" + b + "' (use mean, knn or global)");
    }
  }

  const auto dir = prepare_out(opt.out);
  write_report_csv((dir / "metrics.csv").string(), reports);
  const std::string table = format_report_table(reports);
  {
    std::ofstream t(dir / "metrics.txt");
    t << table;
  }
  write_per_node_csv((dir / "per_node.csv").string(), reports.front());
  write_json(dir / "resolved_config.json", {{"command", "eval"},
                                            {"seed", opt.seed},
                                            {"data", opt.graph.data},
                                            {"distances", opt.graph.distances},
                                            {"checkpoint", opt.checkpoint},
                                            {"split", opt.split},
                                            {"baselines", opt.baselines},
                                            {"knn_k", opt.knn_k},
                                            {"horizon", tc.horizon},
                                            {"graph", graph_json(g)},
                                            {"missing", ids_of(g, g.missing)}});
  log << table;
  return 0;
}

// ---------------------------------------------------------------- sense

struct SenseOptions {
  GraphOptions graph;
  TrainingOptions training{.epochs = 200};  ///< shorter per-step budget; every step retrains from scratch
  std::vector<std::string> policies{"uncertainty", "random"};
  std::size_t budget = 5;
  std::size_t steps = 5;
  std::size_t init_sensors = 10;
  bool warm_start = false;
  std::uint64_t seed = 0;
  std::string out = ".";
};

inline int cmd_sense(const SenseOptions& opt, std::ostream& log) {
  Dataset ds = load_dataset(opt.graph);
  SensingConfig sc;
  sc.initial_count = opt.init_sensors;
  sc.budget = opt.budget;
  sc.steps = opt.steps;
  sc.warm_start = opt.warm_start;
  sc.train = opt.training.train_config(ds.series.resolution);
  sc.model = opt.training.model_config();
  const SplitSeries parts = split_for(ds.series, sc.train);
  if (opt.policies.empty()) throw ParameterError("at least one --policy is required");
  if (opt.init_sensors < 1 || opt.init_sensors >= ds.graph.n)
    throw ParameterError("--init-sensors must be in [1, N)");

  // Both policies start from the same sensor set and consume the same
  // training randomness, so their curves are paired.
  std::mt19937_64 rng(opt.seed);
  NodeList all(ds.graph.n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  NodeList initial(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opt.init_sensors));
  std::sort(initial.begin(), initial.end());
  const std::uint64_t episode_seed = rng();

  const auto dir = prepare_out(opt.out);
  for (const auto& name : opt.policies) {
    const Policy p = parse_policy(name);
    std::mt19937_64 episode_rng(episode_seed);
    log << "running " << name << " policy\n";
    const SensingEpisode ep = run_episode(ds.graph, parts, sc, p, episode_rng, initial);
    write_episode_csv((dir / ("sense_" + name + ".csv")).string(), ep, ds.graph.ids);
  }
  write_json(dir / "resolved_config.json", {{"command", "sense"},
                                            {"seed", opt.seed},
                                            {"data", opt.graph.data},
                                            {"distances", opt.graph.distances},
                                            {"policies", opt.policies},
                                            {"budget", opt.budget},
                                            {"steps", opt.steps},
                                            {"init_sensors", opt.init_sensors},
                                            {"warm_start", opt.warm_start},
                                            {"initial", ids_of(ds.graph, initial)},
                                            {"graph", graph_json(ds.graph)},
                                            {"train", to_json(sc.train)},
                                            {"model", to_json(sc.model)}});
  return 0;
}

}  // namespace uignn::cli
