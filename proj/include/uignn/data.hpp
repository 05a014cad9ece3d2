#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "uignn/errors.hpp"
#include "uignn/graph.hpp"

namespace uignn {

/// Traffic speed readings, one row per timestep and one column per sensor.
/// Missing readings are NaN.
struct SpeedSeries {
  std::vector<std::int64_t> timestamps;  ///< seconds since the Unix epoch
  Matrix values;                         ///< time x node
  std::vector<std::string> sensor_ids;
  std::int64_t resolution = 300;  ///< seconds between consecutive rows

  std::size_t steps() const noexcept { return timestamps.size(); }
  std::size_t nodes() const noexcept { return sensor_ids.size(); }

  /// Rows [begin, begin + count).
  SpeedSeries slice(std::size_t begin, std::size_t count) const {
    if (begin + count > steps()) throw ContractError("SpeedSeries::slice: range out of bounds");
    SpeedSeries s;
    s.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
    s.values = values.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
    s.sensor_ids = sensor_ids;
    s.resolution = resolution;
    return s;
  }

  std::size_t gap_count() const {
    return static_cast<std::size_t>(values.array().isNaN().count());
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw FormatError("unparsable number '" + s + "'", line);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("unparsable number '" + s + "'", line);
  }
}

/// Accepts integer epoch seconds or "YYYY-MM-DD[ T]HH:MM[:SS]".
inline std::int64_t parse_timestamp(const std::string& s, std::size_t line) {
  if (!s.empty() && s.find('-', 1) == std::string::npos) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw FormatError("unparsable timestamp '" + s + "'", line);
  }
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = ' ';
  const int got = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &sec);
  if (got < 3 || (got > 3 && got < 6)) throw FormatError("unparsable timestamp '" + s + "'", line);
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw FormatError("invalid date '" + s + "'", line);
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + sec;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads "timestamp,<id>,<id>,..." followed by one row per timestep. Empty
/// cells and NaN become gaps.
inline SpeedSeries load_speed_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open speed file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("speed file '" + path + "' is empty", 1);
  auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw FormatError("speed header needs a timestamp column and at least one sensor", 1);
  SpeedSeries s;
  s.sensor_ids.assign(header.begin() + 1, header.end());
  std::vector<double> cells;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto row = detail::split_csv_line(line);
    if (row.size() != header.size())
      throw FormatError("ragged row: expected " + std::to_string(header.size()) + " cells, got " +
                            std::to_string(row.size()),
                        lineno);
    const auto ts = detail::parse_timestamp(row[0], lineno);
    if (!s.timestamps.empty()) {
      if (ts <= s.timestamps.back()) throw FormatError("timestamps must be strictly increasing", lineno);
      const auto delta = ts - s.timestamps.back();
      if (s.timestamps.size() == 1)
        s.resolution = delta;
      else if (delta != s.resolution)
        throw FormatError("non-uniform timestamp spacing", lineno);
    }
    s.timestamps.push_back(ts);
    for (std::size_t j = 1; j < row.size(); ++j) {
      const auto& c = row[j];
      if (c.empty() || c == "nan" || c == "NaN" || c == "NA")
        cells.push_back(std::numeric_limits<double>::quiet_NaN());
      else
        cells.push_back(detail::parse_double(c, lineno));
    }
  }
  const auto rows = static_cast<Eigen::Index>(s.timestamps.size());
  const auto cols = static_cast<Eigen::Index>(s.sensor_ids.size());
  s.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cells.data(), rows,
                                                                                                 cols);
  return s;
}

inline void write_speed_csv(const std::string& path, const SpeedSeries& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "timestamp";
  for (const auto& id : s.sensor_ids) out << ',' << id;
  out << '\n';
  for (std::size_t t = 0; t < s.steps(); ++t) {
    out << s.timestamps[t];
    for (Eigen::Index j = 0; j < s.values.cols(); ++j) {
      out << ',';
      const double v = s.values(static_cast<Eigen::Index>(t), j);
      if (!std::isnan(v)) out << detail::format_double(v);
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing '" + path + "'");
}

/// Directed road distances from "from,to,cost" rows. Absent pairs are +inf,
/// the diagonal is 0.
inline Matrix load_distances_csv(const std::string& path, const std::vector<std::string>& sensor_ids) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open distance file '" + path + "'");
  std::unordered_map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < sensor_ids.size(); ++i) index.emplace(sensor_ids[i], static_cast<Eigen::Index>(i));
  const auto n = static_cast<Eigen::Index>(sensor_ids.size());
  Matrix d = Matrix::Constant(n, n, kInfiniteDistance);
  d.diagonal().setZero();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto row = detail::split_csv_line(line);
    if (row.size() != 3) throw FormatError("distance rows need exactly 3 cells", lineno);
    if (lineno == 1 && (row[0] == "from" || row[2] == "cost" || row[2] == "distance")) continue;
    auto a = index.find(row[0]);
    auto b = index.find(row[1]);
    if (a == index.end()) throw FormatError("unknown sensor id '" + row[0] + "'", lineno);
    if (b == index.end()) throw FormatError("unknown sensor id '" + row[1] + "'", lineno);
    const double cost = detail::parse_double(row[2], lineno);
    if (!(cost >= 0.0)) throw FormatError("negative distance", lineno);
    d(a->second, b->second) = std::min(d(a->second, b->second), cost);
  }
  return d;
}

inline void write_distances_csv(const std::string& path, const Matrix& distances,
                                const std::vector<std::string>& sensor_ids) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "from,to,cost\n";
  for (Eigen::Index i = 0; i < distances.rows(); ++i)
    for (Eigen::Index j = 0; j < distances.cols(); ++j)
      if (std::isfinite(distances(i, j)))
        out << sensor_ids[static_cast<std::size_t>(i)] << ',' << sensor_ids[static_cast<std::size_t>(j)] << ','
            << detail::format_double(distances(i, j)) << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

/// Linearly interpolates interior runs of at most `max_gap` NaN readings per
/// sensor. Longer runs and runs touching either end stay NaN. Returns the
/// number of filled cells.
inline std::size_t fill_short_gaps(SpeedSeries& s, std::size_t max_gap = 2) {
  std::size_t filled = 0;
  const auto steps = s.values.rows();
  for (Eigen::Index j = 0; j < s.values.cols(); ++j) {
    Eigen::Index t = 0;
    while (t < steps) {
      if (!std::isnan(s.values(t, j))) {
        ++t;
        continue;
      }
      Eigen::Index end = t;
      while (end < steps && std::isnan(s.values(end, j))) ++end;
      const auto len = static_cast<std::size_t>(end - t);
      if (t > 0 && end < steps && len <= max_gap) {
        const double lo = s.values(t - 1, j);
        const double hi = s.values(end, j);
        for (Eigen::Index k = t; k < end; ++k) {
          const double w = static_cast<double>(k - t + 1) / static_cast<double>(len + 1);
          s.values(k, j) = lo + w * (hi - lo);
          ++filled;
        }
      }
      t = end;
    }
  }
  return filled;
}

struct SplitSpec {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;

  void validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw ParameterError("split fractions must be nonnegative and sum to 1");
  }
};

struct SplitSeries {
  SpeedSeries train;
  SpeedSeries val;
  SpeedSeries test;
};

/// Contiguous chronological slices. Boundaries are floor(frac * steps); the
/// test slice takes the remainder. Any slice with a positive fraction but
/// fewer than `min_length` rows is rejected.
inline SplitSeries split(const SpeedSeries& s, const SplitSpec& spec, std::size_t min_length = 0) {
  spec.validate();
  const auto n = static_cast<double>(s.steps());
  const auto b1 = static_cast<std::size_t>(std::floor(spec.train * n + 1e-9));
  auto b2 = static_cast<std::size_t>(std::floor((spec.train + spec.val) * n + 1e-9));
  b2 = std::min(b2, s.steps());
  if (spec.test == 0.0) b2 = s.steps();
  SplitSeries out{s.slice(0, b1), s.slice(b1, b2 - b1), s.slice(b2, s.steps() - b2)};
  auto check = [min_length](const SpeedSeries& part, double frac, const char* name) {
    if (frac > 0.0 && part.steps() < min_length)
      throw DataError(std::string(name) + " slice has " + std::to_string(part.steps()) + " steps, need " +
                      std::to_string(min_length));
  };
  check(out.train, spec.train, "train");
  check(out.val, spec.val, "validation");
  check(out.test, spec.test, "test");
  return out;
}

/// Copy of `g` with `count` uniformly chosen nodes moved to the missing set.
inline RoadGraph hide_locations(const RoadGraph& g, std::size_t count, std::mt19937_64& rng) {
  if (count >= g.n) throw ParameterError("hide_locations: must leave at least one observable node");
  NodeList order(g.n);
  for (std::size_t i = 0; i < g.n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  NodeList hidden(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(hidden.begin(), hidden.end());
  RoadGraph out = g;
  out.set_missing(std::move(hidden));
  return out;
}

inline RoadGraph hide_fraction(const RoadGraph& g, double fraction, std::mt19937_64& rng) {
  if (fraction < 0.0 || fraction >= 1.0) throw ParameterError("hide_fraction: fraction must be in [0, 1)");
  return hide_locations(g, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(g.n))), rng);
}

struct SyntheticConfig {
  std::size_t nodes = 20;
  std::size_t steps = 2000;
  double noise = 3.0;           ///< mean half-width of the uniform per-reading noise (mph)
  std::size_t period = 288;     ///< steps per day at 5-minute resolution
  std::int64_t resolution = 300;
  std::int64_t start = 1333238400;  // 2012-04-01 00:00:00 UTC
  double free_flow = 60.0;
  std::size_t waves = 4;        ///< congestion waves per day
  double noise_spread = 0.95;    ///< per-sensor noise varies in (1 -+ spread) * noise along the ring
  double kernel_width = 0.0;    ///< kernel sigma in mean sensor spacings; 0 uses the distance std
  double kappa_factor = 1.5;    ///< kernel threshold as a multiple of sigma
};

struct SyntheticDataset {
  RoadGraph graph;
  SpeedSeries series;
  Matrix coordinates;  ///< n x 2, km
};

/// Ring road with irregular sensor spacing. Speeds combine a spatially smooth
/// free-flow level, two rush-hour dips with spatially varying depth, and
/// congestion waves travelling upstream; everything except the noise depends
/// on time of day only.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  if (cfg.nodes < 4) throw ParameterError("generate_synthetic: need at least 4 nodes");
  if (cfg.period < 2) throw ParameterError("generate_synthetic: period must be >= 2");
  if (cfg.noise < 0.0 || cfg.noise_spread < 0.0 || cfg.noise_spread > 1.0)
    throw ParameterError("generate_synthetic: need noise >= 0 and spread in [0, 1]");
  if (cfg.kernel_width < 0.0 || cfg.kappa_factor <= 0.0)
    throw ParameterError("generate_synthetic: need kernel width >= 0 and kappa factor > 0");
  const auto n = cfg.nodes;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> pos(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = acc;
    acc += 0.6 + 0.8 * unit(rng);
  }
  const double length = acc;
  const double radius = length / (2.0 * std::numbers::pi);

  SyntheticDataset ds;
  ds.coordinates.resize(static_cast<Eigen::Index>(n), 2);
  Matrix dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  auto ring_gap = [length](double a, double b) {
    const double d = std::fmod(std::abs(a - b), length);
    return std::min(d, length - d);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * pos[i] / length;
    ds.coordinates(static_cast<Eigen::Index>(i), 0) = radius * std::cos(angle);
    ds.coordinates(static_cast<Eigen::Index>(i), 1) = radius * std::sin(angle);
    for (std::size_t j = 0; j < n; ++j)
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ring_gap(pos[i], pos[j]);
  }

  // Smooth random fields on the ring: a few low-frequency Fourier modes.
  const int modes = 3;
  auto smooth_field = [&](double amplitude) {
    std::vector<double> amp(static_cast<std::size_t>(modes)), phase(static_cast<std::size_t>(modes));
    for (int m = 0; m < modes; ++m) {
      amp[static_cast<std::size_t>(m)] = amplitude * (0.5 + unit(rng)) / (m + 1);
      phase[static_cast<std::size_t>(m)] = 2.0 * std::numbers::pi * unit(rng);
    }
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (int m = 0; m < modes; ++m)
        v += amp[static_cast<std::size_t>(m)] *
             std::sin(2.0 * std::numbers::pi * (m + 1) * pos[i] / length + phase[static_cast<std::size_t>(m)]);
      f[i] = v;
    }
    return f;
  };
  const auto base = smooth_field(5.0);
  const auto rush_depth = smooth_field(5.0);
  const auto roughness = smooth_field(1.0);

  struct Wave {
    double origin, start, duration, speed, width, amplitude;
  };
  std::vector<Wave> waves(cfg.waves);
  const double p = static_cast<double>(cfg.period);
  for (auto& w : waves) {
    w.origin = length * unit(rng);
    w.start = p * (0.25 + 0.5 * unit(rng));
    w.duration = p * (0.08 + 0.06 * unit(rng));
    w.speed = 0.1 + 0.2 * unit(rng);
    w.width = 0.8 + 1.2 * unit(rng);
    w.amplitude = 12.0 + 12.0 * unit(rng);
  }

  auto profile = [&](std::size_t i, std::size_t tod) {
    const double tau = static_cast<double>(tod) / p;
    auto bump = [](double x, double c, double w) { return std::exp(-((x - c) * (x - c)) / (2.0 * w * w)); };
    const double rush = bump(tau, 0.33, 0.05) + 0.8 * bump(tau, 0.72, 0.06);
    double v = cfg.free_flow + base[i] - (10.0 + rush_depth[i]) * rush;
    for (const auto& w : waves) {
      double age = static_cast<double>(tod) - w.start;
      if (age < 0.0) age += p;
      if (age > w.duration) continue;
      const double front = w.origin - w.speed * age;
      const double d = ring_gap(pos[i], front);
      v -= w.amplitude * std::sin(std::numbers::pi * age / w.duration) * std::exp(-(d * d) / (2.0 * w.width * w.width));
    }
    return v;
  };

  ds.series.resolution = cfg.resolution;
  ds.series.sensor_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.series.sensor_ids[i] = "s" + std::to_string(i);
  ds.series.timestamps.resize(cfg.steps);
  ds.series.values.resize(static_cast<Eigen::Index>(cfg.steps), static_cast<Eigen::Index>(n));
  // Per-sensor noise half-width in [1 - spread, 1 + spread] * cfg.noise, smooth along the ring.
  std::vector<double> noise_width(n);
  {
    const auto [lo, hi] = std::minmax_element(roughness.begin(), roughness.end());
    for (std::size_t i = 0; i < n; ++i) {
      const double u = *hi > *lo ? (roughness[i] - *lo) / (*hi - *lo) : 0.5;
      noise_width[i] = cfg.noise * (1.0 + cfg.noise_spread * (2.0 * u - 1.0));
    }
  }
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    ds.series.timestamps[t] = cfg.start + static_cast<std::int64_t>(t) * cfg.resolution;
    const std::size_t tod = t % cfg.period;
    for (std::size_t i = 0; i < n; ++i) {
      double v = profile(i, tod);
      if (cfg.noise > 0.0) v += noise_width[i] * noise(rng);
      ds.series.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = std::clamp(v, 0.0, 80.0);
    }
  }

  const double sigma = cfg.kernel_width > 0.0 ? cfg.kernel_width * length / static_cast<double>(n)
                                              : build_adjacency(dist).kernel_sigma;
  ds.graph = build_adjacency(dist, sigma, cfg.kappa_factor * sigma);
  ds.graph.ids = ds.series.sensor_ids;
  return ds;
}

}  // namespace uignn
