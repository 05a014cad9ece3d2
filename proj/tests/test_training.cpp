#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>
#include <set>

#include "support.hpp"
#include "uignn/data.hpp"
#include "uignn/training.hpp"

using namespace uignn;
using testing_support::random_matrix;

namespace {

SyntheticDataset small_dataset(std::uint64_t seed, std::size_t nodes = 20, std::size_t steps = 400) {
  SyntheticConfig c;
  c.nodes = nodes;
  c.steps = steps;
  std::mt19937_64 rng(seed);
  return generate_synthetic(c, rng);
}

TrainConfig quick_config(std::size_t iterations = 3) {
  TrainConfig c;
  c.iterations = iterations;
  c.history = 6;
  c.horizon = 2;
  return c;
}

ModelConfig quick_model(std::size_t history = 6, std::size_t hidden = 8) {
  ModelConfig m;
  m.history = history;
  m.hidden = hidden;
  return m;
}

ForwardOutput fixed_output(ad::Tape& tape, const Matrix& raw_head, const Matrix& recovery, const Matrix& h0) {
  ForwardOutput out;
  out.h0 = tape.constant(h0);
  out.head_raw = tape.constant(raw_head);
  out.evidential = evidential_head(out.head_raw);
  out.recovery = tape.constant(recovery);
  return out;
}

}  // namespace

TEST(Sampling, TwoObservableNodesGiveOneReservedOneMasked) {
  auto ds = small_dataset(1, 6, 100);
  ds.graph.set_missing({0, 1, 2, 3});
  std::mt19937_64 rng(2);
  const SampleSource src(ds.graph, ds.series, quick_config());
  for (int i = 0; i < 50; ++i) {
    const auto s = src.draw(rng);
    EXPECT_EQ(s.reserved.size(), 1u);
    EXPECT_EQ(s.masked.size(), 1u);
  }
}

TEST(Sampling, SameSeedSameSample) {
  const auto ds = small_dataset(3);
  std::mt19937_64 a(9), b(9);
  const auto s1 = draw_sample(ds.graph, ds.series, quick_config(), a);
  const auto s2 = draw_sample(ds.graph, ds.series, quick_config(), b);
  EXPECT_EQ(s1.nodes, s2.nodes);
  EXPECT_EQ(s1.masked, s2.masked);
  EXPECT_EQ(s1.time, s2.time);
  EXPECT_EQ(s1.features, s2.features);
}

TEST(Sampling, EveryObservableNodeIsEventuallyMasked) {
  auto ds = small_dataset(4);
  std::mt19937_64 rng(5);
  ds.graph = hide_locations(ds.graph, 4, rng);
  const SampleSource src(ds.graph, ds.series, quick_config());
  std::set<NodeIndex> seen;
  for (int i = 0; i < 10000; ++i)
    for (auto v : src.draw(rng).masked) seen.insert(v);
  EXPECT_EQ(seen, std::set<NodeIndex>(ds.graph.observable.begin(), ds.graph.observable.end()));
}

TEST(Sampling, ContractsHoldOverManyDraws) {
  auto ds = small_dataset(6);
  std::mt19937_64 rng(7);
  ds.graph = hide_locations(ds.graph, 5, rng);
  const auto obs = ds.graph.observable_mask();
  const SampleSource src(ds.graph, ds.series, quick_config());
  for (int i = 0; i < 20000; ++i) {
    const auto s = src.draw(rng);
    ASSERT_GE(s.reserved.size(), 1u);
    ASSERT_GE(s.masked.size(), 1u);
    std::vector<NodeIndex> both;
    std::set_intersection(s.reserved.begin(), s.reserved.end(), s.masked.begin(), s.masked.end(),
                          std::back_inserter(both));
    ASSERT_TRUE(both.empty());
    ASSERT_EQ(s.reserved.size() + s.masked.size(), s.nodes.size());
    for (std::size_t r = 0; r < s.nodes.size(); ++r) {
      ASSERT_TRUE(obs[s.nodes[r]]);
      const auto row = s.mask.row(static_cast<Eigen::Index>(r));
      const bool reserved = std::binary_search(s.reserved.begin(), s.reserved.end(), s.nodes[r]);
      ASSERT_TRUE(reserved ? (row.array() == 1.0).all() : (row.array() == 0.0).all());
    }
  }
}

TEST(Sampling, SubgraphAdjacencyIsRawNotNormalized) {
  const auto ds = small_dataset(8);
  std::mt19937_64 rng(9);
  const auto s = draw_sample(ds.graph, ds.series, quick_config(), rng);
  EXPECT_EQ(s.adjacency, subgraph(ds.graph, s.nodes));
}

TEST(Sampling, FeaturesAndTargetComeFromTheSeries) {
  const auto ds = small_dataset(10);
  std::mt19937_64 rng(11);
  const TrainConfig cfg = quick_config();
  const auto s = draw_sample(ds.graph, ds.series, cfg, rng);
  for (std::size_t r = 0; r < s.nodes.size(); ++r) {
    const auto node = static_cast<Eigen::Index>(s.nodes[r]);
    for (std::size_t k = 0; k < cfg.history; ++k)
      ASSERT_EQ(s.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)),
                ds.series.values(static_cast<Eigen::Index>(s.time + 1 - cfg.history + k), node));
    ASSERT_EQ(s.target[static_cast<Eigen::Index>(r)],
              ds.series.values(static_cast<Eigen::Index>(s.time + cfg.horizon), node));
  }
}

TEST(Sampling, SeriesTooShortIsADataError) {
  const auto ds = small_dataset(12, 6, 100);
  SpeedSeries tiny = ds.series.slice(0, 5);
  EXPECT_THROW(SampleSource(ds.graph, tiny, quick_config()), DataError);
}

TEST(Loss, PerfectOutputsGiveNllFloorAndZeroRecovery) {
  std::mt19937_64 rng(13);
  Matrix raw = random_matrix(3, 4, rng);
  const Matrix rec = random_matrix(3, 2, rng);
  ad::Tape t;
  const auto out = fixed_output(t, raw, rec, rec);
  const Matrix target = raw.col(0);
  TrainConfig cfg;
  const LossTerms terms = compute_loss(out, target, rec, cfg);
  double floor = 0.0;
  for (Eigen::Index i = 0; i < 3; ++i)
    floor += nig_nll(target(i, 0), target(i, 0), out.evidential.nu.value()(i, 0), out.evidential.alpha.value()(i, 0),
                     out.evidential.beta.value()(i, 0));
  EXPECT_NEAR(terms.prediction.item(), floor / 3.0, 1e-12);
  EXPECT_EQ(terms.recovery.item(), 0.0);
}

TEST(Loss, AlphaZeroLeavesPredictionTerm) {
  std::mt19937_64 rng(14);
  ad::Tape t;
  const auto out = fixed_output(t, random_matrix(3, 4, rng), random_matrix(3, 2, rng), Matrix::Zero(3, 2));
  TrainConfig cfg;
  cfg.loss_alpha = 0.0;
  const LossTerms terms = compute_loss(out, random_matrix(3, 1, rng), random_matrix(3, 2, rng), cfg);
  EXPECT_EQ(terms.total.item(), terms.prediction.item());
}

TEST(Loss, HandComputedRecovery) {
  ad::Tape t;
  Matrix rec(2, 1);
  rec << 1, 2;
  const auto out = fixed_output(t, Matrix::Zero(2, 4), rec, Matrix::Zero(2, 1));
  const LossTerms terms = compute_loss(out, Matrix::Zero(2, 1), Matrix::Zero(2, 1), TrainConfig{});
  EXPECT_DOUBLE_EQ(terms.recovery.item(), 2.5);
}

TEST(Loss, TotalIsMonotoneInAlpha) {
  std::mt19937_64 rng(15);
  const Matrix raw = random_matrix(4, 4, rng), rec = random_matrix(4, 3, rng), y = random_matrix(4, 1, rng);
  const Matrix rt = random_matrix(4, 3, rng);
  double previous = -std::numeric_limits<double>::infinity();
  for (double alpha : {0.0, 0.1, 0.5, 1.0, 3.0}) {
    ad::Tape t;
    TrainConfig cfg;
    cfg.loss_alpha = alpha;
    const LossTerms terms = compute_loss(fixed_output(t, raw, rec, rec), y, rt, cfg);
    ASSERT_GT(terms.recovery.item(), 0.0);
    EXPECT_GT(terms.total.item(), previous);
    previous = terms.total.item();
  }
}

TEST(Loss, MseModeUsesSquaredError) {
  ad::Tape t;
  Matrix raw = Matrix::Zero(2, 4);
  raw(0, 0) = 1.0;
  const auto out = fixed_output(t, raw, Matrix::Zero(2, 1), Matrix::Zero(2, 1));
  TrainConfig cfg;
  cfg.loss = LossMode::Mse;
  Matrix y(2, 1);
  y << 3, -1;
  EXPECT_DOUBLE_EQ(compute_loss(out, y, Matrix::Zero(2, 1), cfg).prediction.item(), (4.0 + 1.0) / 2.0);
}

TEST(Loss, RecoveryTargetChoice) {
  const auto ds = small_dataset(16);
  std::mt19937_64 rng(17);
  TrainConfig cfg = quick_config();
  const auto s = draw_sample(ds.graph, ds.series, cfg, rng);
  ModelParams p = ModelParams::initialize(quick_model(), rng);
  ad::Tape t;
  const BoundModel m(t, p);
  const double masked = sample_loss(m, s, 50.0, 10.0, cfg).recovery.item();
  cfg.recovery = RecoveryTarget::UnmaskedInput;
  const double unmasked = sample_loss(m, s, 50.0, 10.0, cfg).recovery.item();
  EXPECT_NE(masked, unmasked);
}

TEST(Train, OneIterationOneSampleIsOneStep) {
  const auto ds = small_dataset(18);
  std::mt19937_64 rng(19);
  TrainConfig cfg = quick_config(1);
  cfg.samples_per_iter = 1;
  const auto res = train(ds.graph, ds.series, cfg, quick_model(), rng);
  EXPECT_EQ(res.optimizer_steps, 1u);
  EXPECT_EQ(res.trace.size(), 1u);
}

TEST(Train, StepsFollowBatching) {
  const auto ds = small_dataset(20);
  std::mt19937_64 rng(21);
  TrainConfig cfg = quick_config(3);
  cfg.samples_per_iter = 8;
  cfg.batch_size = 3;
  EXPECT_EQ(train(ds.graph, ds.series, cfg, quick_model(), rng).optimizer_steps, 9u);
}

TEST(Train, BitwiseReproducible) {
  const auto ds = small_dataset(22);
  auto run = [&] {
    std::mt19937_64 rng(23);
    return train(ds.graph, ds.series, quick_config(4), quick_model(), rng);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].total, b.trace[i].total);
  for (std::size_t i = 0; i < a.params.arrays().size(); ++i) {
    const auto& x = a.params.arrays()[i].value;
    const auto& y = b.params.arrays()[i].value;
    EXPECT_EQ(0, std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())));
  }
}

TEST(Train, NeverTouchesMissingReadings) {
  auto ds = small_dataset(24);
  std::mt19937_64 rng(25);
  ds.graph = hide_locations(ds.graph, 4, rng);
  SpeedSeries poisoned = ds.series;
  for (auto j : ds.graph.missing) poisoned.values.col(static_cast<Eigen::Index>(j)).setConstant(std::nan(""));
  std::mt19937_64 a(26), b(26);
  const auto clean = train(ds.graph, ds.series, quick_config(3), quick_model(), a);
  const auto dirty = train(ds.graph, poisoned, quick_config(3), quick_model(), b);
  EXPECT_EQ(clean.trace.back().total, dirty.trace.back().total);
}

TEST(Train, LossDecreasesFromUntrainedModel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticConfig sc;
    std::mt19937_64 rng(seed);
    const auto ds = generate_synthetic(sc, rng);
    TrainConfig cfg;
    cfg.iterations = 300;
    ModelConfig mc;

    // Untrained loss on a fixed sample set, then the smoothed training trace.
    const SampleSource src(ds.graph, ds.series, cfg);
    std::mt19937_64 eval_rng(1000 + seed);
    std::vector<SubgraphSample> probe;
    for (int i = 0; i < 64; ++i) probe.push_back(src.draw(eval_rng));
    std::mt19937_64 init_rng(seed);
    ModelParams untrained = ModelParams::initialize(mc, init_rng);
    const auto [offset, scale] = observable_normalization(ds.graph, ds.series, cfg.normalization);
    double initial = 0.0;
    for (const auto& s : probe) {
      ad::Tape t;
      const BoundModel m(t, untrained);
      initial += sample_loss(m, s, offset, scale, cfg).total.item();
    }
    initial /= static_cast<double>(probe.size());

    std::mt19937_64 train_rng(seed);
    const auto res = train(ds.graph, ds.series, cfg, mc, train_rng);
    double smoothed = 0.0;
    for (std::size_t i = res.trace.size() - 50; i < res.trace.size(); ++i) smoothed += res.trace[i].total;
    smoothed /= 50.0;
    EXPECT_LT(smoothed, initial) << "seed " << seed;
  }
}

TEST(PredictFull, ShapeIsAllNodesAndMissingRowsAreZeroed) {
  auto ds = small_dataset(27);
  std::mt19937_64 rng(28);
  ds.graph = hide_locations(ds.graph, 7, rng);
  ModelParams p = ModelParams::initialize(quick_model(), rng);
  p.input_offset = 50.0;
  p.input_scale = 10.0;
  const Matrix recent = ds.series.values.topRows(6);
  const auto in = full_graph_input(ds.graph, recent, p.input_offset, p.input_scale);
  for (auto j : ds.graph.missing) {
    EXPECT_EQ(in.features.row(static_cast<Eigen::Index>(j)), Matrix::Zero(1, 6));
    EXPECT_EQ(in.mask.row(static_cast<Eigen::Index>(j)), Matrix::Zero(1, 6));
  }
  const auto out = predict_full(ds.graph, p, recent);
  EXPECT_EQ(out.size(), static_cast<Eigen::Index>(ds.graph.n));
}

TEST(PredictFull, NoMissingNodesEqualsPlainForward) {
  const auto ds = small_dataset(29);
  std::mt19937_64 rng(30);
  ModelParams p = ModelParams::initialize(quick_model(), rng);
  p.input_offset = 40.0;
  p.input_scale = 8.0;
  const Matrix recent = ds.series.values.topRows(6);
  const auto out = predict_full(ds.graph, p, recent);

  ad::Tape t;
  const BoundModel m(t, p);
  const Matrix features = (recent.transpose().array() - 40.0) / 8.0;
  const auto ref = to_output(forward(m, features, Matrix::Ones(20, 6), ds.graph.adjacency).evidential);
  const Vector expected_gamma = (ref.gamma * 8.0).array() + 40.0;
  EXPECT_TRUE(out.gamma.isApprox(expected_gamma, 1e-14));
  EXPECT_TRUE(out.beta.isApprox(ref.beta * 64.0, 1e-14));
  EXPECT_EQ(out.nu, ref.nu);
}

TEST(PredictFull, WindowLengthMismatchThrows) {
  const auto ds = small_dataset(31);
  std::mt19937_64 rng(32);
  const ModelParams p = ModelParams::initialize(quick_model(), rng);
  EXPECT_THROW(predict_full(ds.graph, p, ds.series.values.topRows(5)), DimensionError);
}

TEST(Normalization, StandardizeUsesObservableTrainingReadings) {
  auto ds = small_dataset(33, 6, 50);
  ds.graph.set_missing({5});
  ds.series.values.col(5).setConstant(1000.0);
  const auto [offset, scale] = observable_normalization(ds.graph, ds.series, Normalization::Standardize);
  const Matrix obs = ds.series.values.leftCols(5);
  const double mean = obs.mean();
  const double sd = std::sqrt((obs.array() - mean).square().mean());
  EXPECT_NEAR(offset, mean, 1e-10);
  EXPECT_NEAR(scale, sd, 1e-10);
}

TEST(Config, Validation) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = TrainConfig{};
  c.loss_alpha = -1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = TrainConfig{};
  c.horizon = 0;
  EXPECT_THROW(c.validate(), ParameterError);
}
