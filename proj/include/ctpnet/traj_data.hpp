#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctpnet/errors.hpp"

namespace ctp {

using Vec2 = std::array<double, 2>;

struct RawRow {
  long frame = 0;
  long ped = 0;
  double x = 0.0;
  double y = 0.0;
};

/// World-coordinate annotation rows. (frame, ped) pairs are unique; rows for
/// one pedestrian are sortable by strictly increasing frame.
struct RawAnnotationTable {
  std::vector<RawRow> rows;
};

/// One pedestrian's fixed-length observation/future pair, in meters.
struct TrajectoryWindow {
  long ped_id = 0;
  long start_frame = 0;
  std::vector<Vec2> obs;
  std::vector<Vec2> fut;
};

/// Per-step coordinate deltas plus the coordinate preceding the first delta.
struct OffsetSequence {
  std::vector<Vec2> offsets;
  Vec2 origin{0.0, 0.0};
};

enum class Domain { source, target };

struct DomainSplit {
  std::vector<TrajectoryWindow> source_train;
  std::vector<TrajectoryWindow> source_val;
  std::vector<TrajectoryWindow> target_train;
  std::vector<TrajectoryWindow> target_test;
};

/// Affine-plus-noise domain shift: c -> linear * (speed_scale * c) +
/// translation + gaussian(0, noise_std^2) per coordinate.
struct SyntheticShiftSpec {
  std::array<std::array<double, 2>, 2> linear{{{1.0, 0.0}, {0.0, 1.0}}};
  Vec2 translation{0.0, 0.0};
  double speed_scale = 1.0;
  double noise_std = 0.0;

  double det() const { return linear[0][0] * linear[1][1] - linear[0][1] * linear[1][0]; }

  void validate() const {
    if (std::abs(det()) <= 1e-8) throw ConfigError("shift spec: linear map is singular");
    if (speed_scale <= 0.0) throw ConfigError("shift spec: speed_scale must be positive");
    if (noise_std < 0.0) throw ConfigError("shift spec: noise_std must be non-negative");
  }
};

/// Which whitespace-separated field holds which quantity.
struct ColumnOrder {
  int frame = 0, ped = 1, x = 2, y = 3;

  /// Parses e.g. "frame,ped,x,y". All four names must appear exactly once.
  static ColumnOrder parse(const std::string& s) {
    ColumnOrder order;
    std::array<bool, 4> seen{};
    int idx = 0;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (idx >= 4) throw ConfigError("column order: too many fields in '" + s + "'");
      int which;
      if (tok == "frame")
        which = 0, order.frame = idx;
      else if (tok == "ped")
        which = 1, order.ped = idx;
      else if (tok == "x")
        which = 2, order.x = idx;
      else if (tok == "y")
        which = 3, order.y = idx;
      else
        throw ConfigError("column order: unknown field '" + tok + "'");
      if (seen[which]) throw ConfigError("column order: duplicate field '" + tok + "'");
      seen[which] = true;
      ++idx;
    }
    if (idx != 4) throw ConfigError("column order: expected 4 fields in '" + s + "'");
    return order;
  }
};

namespace detail {

inline long to_integer_field(double v, int line_no, const char* what) {
  double r = std::round(v);
  if (std::abs(v - r) > 1e-6)
    throw ParseError("line " + std::to_string(line_no) + ": non-integer " + what + " value");
  return static_cast<long>(r);
}

}  // namespace detail

/// Reads whitespace-separated annotation rows. Frames are retained only where
/// frame % downsample_stride == 0, which turns per-frame data into the usual
/// 0.4 s sampling at stride 10.
inline RawAnnotationTable parse_annotations(const std::string& path, const ColumnOrder& order,
                                            int downsample_stride) {
  if (downsample_stride < 1) throw ConfigError("parse_annotations: stride must be positive");
  std::ifstream in(path);
  if (!in) throw IoError("parse_annotations: cannot open '" + path + "'");

  RawAnnotationTable table;
  std::set<std::pair<long, long>> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<double> values;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        values.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric field '" + tok + "'");
      }
    }
    if (values.empty()) continue;  // blank line
    if (values.size() < 4)
      throw ParseError("line " + std::to_string(line_no) + ": expected at least 4 fields, got " +
                       std::to_string(values.size()));
    RawRow row;
    row.frame = detail::to_integer_field(values[order.frame], line_no, "frame");
    row.ped = detail::to_integer_field(values[order.ped], line_no, "ped");
    row.x = values[order.x];
    row.y = values[order.y];
    if (!seen.insert({row.frame, row.ped}).second)
      throw DataError("line " + std::to_string(line_no) + ": duplicate (frame, ped) = (" +
                      std::to_string(row.frame) + ", " + std::to_string(row.ped) + ")");
    if (row.frame % downsample_stride == 0) table.rows.push_back(row);
  }
  return table;
}

namespace detail {

/// The table's sampling period: the most common positive frame delta between
/// consecutive samples of one pedestrian.
inline long sampling_period(const std::map<long, std::vector<std::pair<long, Vec2>>>& by_ped) {
  std::map<long, std::size_t> delta_counts;
  for (const auto& [ped, samples] : by_ped)
    for (std::size_t i = 1; i < samples.size(); ++i) {
      long d = samples[i].first - samples[i - 1].first;
      if (d > 0) ++delta_counts[d];
    }
  long best = 1;
  std::size_t best_count = 0;
  for (const auto& [d, count] : delta_counts)
    if (count > best_count) best = d, best_count = count;
  return best;
}

}  // namespace detail

/// Slides a window of lo observed plus lf future samples over every
/// pedestrian's trajectory, advancing by `slide`. Runs break where the frame
/// gap differs from the table's sampling period, so only temporally
/// contiguous windows are produced.
inline std::vector<TrajectoryWindow> extract_windows(const RawAnnotationTable& table, int lo,
                                                     int lf, int slide) {
  if (lo < 2) throw ConfigError("extract_windows: lo must be >= 2");
  if (lf < 1) throw ConfigError("extract_windows: lf must be >= 1");
  if (slide < 1) throw ConfigError("extract_windows: slide must be positive");

  std::map<long, std::vector<std::pair<long, Vec2>>> by_ped;
  for (const auto& r : table.rows) by_ped[r.ped].push_back({r.frame, Vec2{r.x, r.y}});
  for (auto& [ped, samples] : by_ped) {
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < samples.size(); ++i)
      if (samples[i].first == samples[i - 1].first)
        throw DataError("pedestrian " + std::to_string(ped) + ": repeated frame " +
                        std::to_string(samples[i].first));
  }
  long period = detail::sampling_period(by_ped);

  std::vector<TrajectoryWindow> out;
  int span = lo + lf;
  for (const auto& [ped, samples] : by_ped) {
    // contiguous runs at the sampling period
    std::size_t run_start = 0;
    for (std::size_t i = 1; i <= samples.size(); ++i) {
      bool broken = i == samples.size() || samples[i].first - samples[i - 1].first != period;
      if (!broken) continue;
      std::size_t run_len = i - run_start;
      if (run_len >= std::size_t(span)) {
        for (std::size_t s = run_start; s + span <= i; s += std::size_t(slide)) {
          TrajectoryWindow w;
          w.ped_id = ped;
          w.start_frame = samples[s].first;
          w.obs.reserve(lo);
          w.fut.reserve(lf);
          for (int k = 0; k < lo; ++k) w.obs.push_back(samples[s + k].second);
          for (int k = 0; k < lf; ++k) w.fut.push_back(samples[s + lo + k].second);
          out.push_back(std::move(w));
        }
      }
      run_start = i;
    }
  }
  return out;
}

/// offsets[k] = coords[k+1] - coords[k]; origin = coords[0].
inline OffsetSequence to_offsets(std::span<const Vec2> coords) {
  if (coords.size() < 2) throw ShapeError("to_offsets: need at least 2 coordinates");
  OffsetSequence seq;
  seq.origin = coords[0];
  seq.offsets.reserve(coords.size() - 1);
  for (std::size_t k = 0; k + 1 < coords.size(); ++k)
    seq.offsets.push_back({coords[k + 1][0] - coords[k][0], coords[k + 1][1] - coords[k][1]});
  return seq;
}

/// coords[0] = origin; coords[k+1] = coords[k] + offsets[k].
inline std::vector<Vec2> from_offsets(const Vec2& origin, std::span<const Vec2> offsets) {
  std::vector<Vec2> coords;
  coords.reserve(offsets.size() + 1);
  coords.push_back(origin);
  for (const auto& d : offsets)
    coords.push_back({coords.back()[0] + d[0], coords.back()[1] + d[1]});
  return coords;
}

/// Partitions windows into contiguous time blocks, earlier windows first.
/// Source domains split 8:2 (train:val); target domains 4:6 (train:test).
/// The seed is accepted for interface stability; block splitting needs none.
inline std::pair<std::vector<TrajectoryWindow>, std::vector<TrajectoryWindow>> make_split(
    std::vector<TrajectoryWindow> windows, Domain domain, std::uint64_t /*seed*/) {
  if (windows.size() < 5)
    throw SplitError("make_split: need at least 5 windows, got " + std::to_string(windows.size()));
  std::stable_sort(windows.begin(), windows.end(), [](const auto& a, const auto& b) {
    if (a.start_frame != b.start_frame) return a.start_frame < b.start_frame;
    return a.ped_id < b.ped_id;
  });
  double frac = domain == Domain::source ? 0.8 : 0.4;
  auto n_first = std::size_t(std::llround(frac * double(windows.size())));
  n_first = std::min(std::max<std::size_t>(n_first, 1), windows.size() - 1);
  std::vector<TrajectoryWindow> first(windows.begin(), windows.begin() + n_first);
  std::vector<TrajectoryWindow> second(windows.begin() + n_first, windows.end());
  return {std::move(first), std::move(second)};
}

/// Maps every coordinate through the shift spec. Deterministic given seed;
/// with noise_std = 0 the map is exactly invertible through the spec inverse.
inline std::vector<TrajectoryWindow> apply_shift(const std::vector<TrajectoryWindow>& windows,
                                                 const SyntheticShiftSpec& spec,
                                                 std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
  auto map_point = [&](const Vec2& c) -> Vec2 {
    double sx = c[0] * spec.speed_scale, sy = c[1] * spec.speed_scale;
    Vec2 out{spec.linear[0][0] * sx + spec.linear[0][1] * sy + spec.translation[0],
             spec.linear[1][0] * sx + spec.linear[1][1] * sy + spec.translation[1]};
    if (spec.noise_std > 0.0) {
      out[0] += noise(rng);
      out[1] += noise(rng);
    }
    return out;
  };
  std::vector<TrajectoryWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    TrajectoryWindow shifted;
    shifted.ped_id = w.ped_id;
    shifted.start_frame = w.start_frame;
    shifted.obs.reserve(w.obs.size());
    shifted.fut.reserve(w.fut.size());
    for (const auto& c : w.obs) shifted.obs.push_back(map_point(c));
    for (const auto& c : w.fut) shifted.fut.push_back(map_point(c));
    out.push_back(std::move(shifted));
  }
  return out;
}

/// Desk-scale trajectory generator: straight-ish walks with per-pedestrian
/// speed and heading, optional heading jitter and coordinate noise.
/// Pedestrians occupy disjoint frame ranges so time-block splits fall at
/// trajectory boundaries.
struct SynthSpec {
  int n_peds = 40;
  int samples_per_ped = 24;
  double speed_min = 0.3;   // meters per step
  double speed_max = 0.7;
  double turn_rate_std = 0.0;  // radians per step
  double noise_std = 0.0;      // meters
  double box_half = 8.0;       // start positions drawn from [-box, box]^2
  long frame_step = 10;
};

inline RawAnnotationTable synth_trajectories(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_peds < 1 || spec.samples_per_ped < 2)
    throw ConfigError("synth_trajectories: need at least 1 pedestrian and 2 samples");
  if (spec.speed_min <= 0 || spec.speed_max < spec.speed_min)
    throw ConfigError("synth_trajectories: bad speed range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  RawAnnotationTable table;
  table.rows.reserve(std::size_t(spec.n_peds) * std::size_t(spec.samples_per_ped));
  for (int p = 0; p < spec.n_peds; ++p) {
    double x = (2.0 * u01(rng) - 1.0) * spec.box_half;
    double y = (2.0 * u01(rng) - 1.0) * spec.box_half;
    double heading = u01(rng) * 2.0 * M_PI;
    double speed = spec.speed_min + u01(rng) * (spec.speed_max - spec.speed_min);
    long base = long(p) * spec.samples_per_ped * spec.frame_step;
    for (int k = 0; k < spec.samples_per_ped; ++k) {
      RawRow row;
      row.frame = base + long(k) * spec.frame_step;
      row.ped = p + 1;
      row.x = x + (spec.noise_std > 0 ? gauss(rng) * spec.noise_std : 0.0);
      row.y = y + (spec.noise_std > 0 ? gauss(rng) * spec.noise_std : 0.0);
      table.rows.push_back(row);
      if (spec.turn_rate_std > 0) heading += gauss(rng) * spec.turn_rate_std;
      x += speed * std::cos(heading);
      y += speed * std::sin(heading);
    }
  }
  return table;
}

// ---- window offset helpers ----

/// The lo-1 observed offsets of a window.
inline std::vector<Vec2> window_obs_offsets(const TrajectoryWindow& w) {
  return to_offsets(w.obs).offsets;
}

/// The lf future offsets, bridging from the last observed point:
/// delta_1 = fut[0] - obs[lo-1], delta_k = fut[k-1] - fut[k-2].
inline std::vector<Vec2> window_fut_offsets(const TrajectoryWindow& w) {
  std::vector<Vec2> chain;
  chain.reserve(w.fut.size() + 1);
  chain.push_back(w.obs.back());
  chain.insert(chain.end(), w.fut.begin(), w.fut.end());
  return to_offsets(chain).offsets;
}

/// The last observed offset, the decoder's first input.
inline Vec2 window_seed_offset(const TrajectoryWindow& w) {
  const auto& o = w.obs;
  return {o[o.size() - 1][0] - o[o.size() - 2][0], o[o.size() - 1][1] - o[o.size() - 2][1]};
}

}  // namespace ctp
