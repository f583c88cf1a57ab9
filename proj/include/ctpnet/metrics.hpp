#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ctpnet/errors.hpp"
#include "ctpnet/traj_data.hpp"

namespace ctp {

/// Displacement-error summary for one model on one split, plus the
/// origin-shifted prediction samples used for distribution plots.
struct EvalReport {
  double ade = 0.0;
  double fde = 0.0;
  int n_windows = 0;
  std::vector<std::pair<double, double>> per_window;  // (ade_i, fde_i)
  std::vector<std::vector<Vec2>> cumulative_offset_samples;
};

namespace metrics {

inline double l2(const Vec2& a, const Vec2& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace metrics

/// Mean Euclidean error over all predicted steps, and at the final step:
///   ade = sum_i sum_t |pred - gt| / (N * lf),  fde = sum_i |final error| / N.
inline std::pair<double, double> ade_fde(const std::vector<std::vector<Vec2>>& preds,
                                         const std::vector<std::vector<Vec2>>& gts) {
  if (preds.size() != gts.size() || preds.empty())
    throw ShapeError("ade_fde: need equal, nonempty prediction/ground-truth sets");
  std::size_t lf = preds[0].size();
  double ade_sum = 0.0, fde_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != lf || gts[i].size() != lf)
      throw ShapeError("ade_fde: inconsistent window length at index " + std::to_string(i));
    for (std::size_t t = 0; t < lf; ++t) ade_sum += metrics::l2(preds[i][t], gts[i][t]);
    fde_sum += metrics::l2(preds[i][lf - 1], gts[i][lf - 1]);
  }
  double n = double(preds.size());
  return {ade_sum / (n * double(lf)), fde_sum / n};
}

/// Per-window displacement errors, same formulas with N = 1.
inline std::pair<double, double> ade_fde_single(const std::vector<Vec2>& pred,
                                                const std::vector<Vec2>& gt) {
  return ade_fde({pred}, {gt});
}

/// Shifts every point by the last observed step, moving the prediction start
/// to the origin.
inline std::vector<Vec2> cumulative_offsets(const std::vector<Vec2>& traj, const Vec2& last_obs) {
  std::vector<Vec2> out;
  out.reserve(traj.size());
  for (const auto& p : traj) out.push_back({p[0] - last_obs[0], p[1] - last_obs[1]});
  return out;
}

inline EvalReport build_eval_report(const std::vector<std::vector<Vec2>>& preds,
                                    const std::vector<std::vector<Vec2>>& gts,
                                    const std::vector<Vec2>& last_obs_points) {
  if (preds.size() != gts.size() || preds.size() != last_obs_points.size())
    throw ShapeError("build_eval_report: input size mismatch");
  EvalReport report;
  report.n_windows = int(preds.size());
  report.per_window.reserve(preds.size());
  report.cumulative_offset_samples.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    report.per_window.push_back(ade_fde_single(preds[i], gts[i]));
    report.cumulative_offset_samples.push_back(cumulative_offsets(preds[i], last_obs_points[i]));
  }
  auto [ade, fde] = ade_fde(preds, gts);
  report.ade = ade;
  report.fde = fde;
  return report;
}

struct GridSpec {
  int nx = 200;
  int ny = 200;
};

/// Gaussian-kernel density estimate on a regular grid, row-major with y
/// varying last: density[iy * nx + ix] at cell centers.
struct KdeGrid {
  double x0 = 0, y0 = 0;  // lower-left corner of the grid extent
  double dx = 0, dy = 0;
  int nx = 0, ny = 0;
  double bandwidth_x = 0, bandwidth_y = 0;
  std::vector<double> density;

  double x_center(int ix) const { return x0 + (ix + 0.5) * dx; }
  double y_center(int iy) const { return y0 + (iy + 0.5) * dy; }
  double at(int ix, int iy) const { return density[std::size_t(iy) * nx + ix]; }

  /// Riemann-sum integral over the grid.
  double integral() const {
    double s = 0.0;
    for (double v : density) s += v;
    return s * dx * dy;
  }
};

/// Product-Gaussian KDE. Per-axis bandwidth defaults to Scott's rule,
/// sigma * K^(-1/6); a supplied bandwidth applies to both axes.
inline KdeGrid kde_grid(const std::vector<Vec2>& samples, std::optional<double> bandwidth,
                        const GridSpec& grid = {}) {
  if (samples.size() < 2) throw DataError("kde_grid: need at least 2 samples");
  if (bandwidth && *bandwidth <= 0) throw ConfigError("kde_grid: bandwidth must be positive");
  if (grid.nx < 2 || grid.ny < 2) throw ConfigError("kde_grid: grid must be at least 2x2");

  const double k = double(samples.size());
  double mean_x = 0, mean_y = 0;
  for (const auto& p : samples) mean_x += p[0], mean_y += p[1];
  mean_x /= k;
  mean_y /= k;
  double var_x = 0, var_y = 0;
  for (const auto& p : samples) {
    var_x += (p[0] - mean_x) * (p[0] - mean_x);
    var_y += (p[1] - mean_y) * (p[1] - mean_y);
  }
  var_x /= (k - 1);
  var_y /= (k - 1);

  double hx, hy;
  if (bandwidth) {
    hx = hy = *bandwidth;
  } else {
    if (var_x == 0.0 && var_y == 0.0)
      throw DataError("kde_grid: degenerate samples (zero variance on both axes)");
    double scott = std::pow(k, -1.0 / 6.0);
    hx = std::sqrt(var_x) * scott;
    hy = std::sqrt(var_y) * scott;
    if (hx == 0.0) hx = hy;
    if (hy == 0.0) hy = hx;
  }

  double min_x = samples[0][0], max_x = samples[0][0];
  double min_y = samples[0][1], max_y = samples[0][1];
  for (const auto& p : samples) {
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }

  KdeGrid out;
  out.nx = grid.nx;
  out.ny = grid.ny;
  out.bandwidth_x = hx;
  out.bandwidth_y = hy;
  out.x0 = min_x - 3.5 * hx;
  out.y0 = min_y - 3.5 * hy;
  out.dx = (max_x - min_x + 7.0 * hx) / grid.nx;
  out.dy = (max_y - min_y + 7.0 * hy) / grid.ny;
  out.density.assign(std::size_t(grid.nx) * grid.ny, 0.0);

  // Kernels truncated at 6 bandwidths; the mass beyond is ~2e-9.
  const double radius = 6.0;
  const double norm = 1.0 / (k * 2.0 * M_PI * hx * hy);
  std::vector<double> wx(grid.nx), wy(grid.ny);
  for (const auto& p : samples) {
    int ix_lo = std::max(0, int(std::floor((p[0] - radius * hx - out.x0) / out.dx - 0.5)));
    int ix_hi = std::min(grid.nx - 1, int(std::ceil((p[0] + radius * hx - out.x0) / out.dx - 0.5)));
    int iy_lo = std::max(0, int(std::floor((p[1] - radius * hy - out.y0) / out.dy - 0.5)));
    int iy_hi = std::min(grid.ny - 1, int(std::ceil((p[1] + radius * hy - out.y0) / out.dy - 0.5)));
    for (int ix = ix_lo; ix <= ix_hi; ++ix) {
      double u = (out.x_center(ix) - p[0]) / hx;
      wx[ix] = std::exp(-0.5 * u * u);
    }
    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
      double v = (out.y_center(iy) - p[1]) / hy;
      wy[iy] = std::exp(-0.5 * v * v);
    }
    for (int iy = iy_lo; iy <= iy_hi; ++iy) {
      double* row = &out.density[std::size_t(iy) * grid.nx];
      for (int ix = ix_lo; ix <= ix_hi; ++ix) row[ix] += norm * wx[ix] * wy[iy];
    }
  }
  return out;
}

/// CSV rows (x, y, density), one per grid cell. Lines starting with '#' are
/// metadata for provenance tracking.
inline void kde_to_csv(const KdeGrid& grid, std::ostream& os, const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n";
  os << "x,y,density\n";
  char buf[96];
  for (int iy = 0; iy < grid.ny; ++iy)
    for (int ix = 0; ix < grid.nx; ++ix) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", grid.x_center(ix), grid.y_center(iy),
                    grid.at(ix, iy));
      os << buf;
    }
}

}  // namespace ctp
