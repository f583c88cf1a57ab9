#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ctpnet/autodiff.hpp"

namespace ctptest {

using ctp::Mat;
using ctp::Var;

/// Central-difference gradient of `loss_fn` with respect to every entry of
/// every parameter. `loss_fn` must re-run the forward pass from the current
/// parameter values each call.
inline std::vector<Mat<double>> finite_diff_grads(std::vector<Var<double>>& params,
                                                  const std::function<double()>& loss_fn,
                                                  double h = 1e-6) {
  std::vector<Mat<double>> out;
  out.reserve(params.size());
  for (auto& p : params) {
    Mat<double> g(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        Mat<double> saved = p.value();
        Mat<double> bumped = saved;
        bumped(i, j) = saved(i, j) + h;
        p.assign(bumped);
        double up = loss_fn();
        bumped(i, j) = saved(i, j) - h;
        p.assign(bumped);
        double down = loss_fn();
        p.assign(saved);
        g(i, j) = (up - down) / (2.0 * h);
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Worst relative disagreement between analytic and finite-difference
/// gradients, with an absolute floor so near-zero entries compare absolutely.
inline double max_rel_error(const std::vector<Mat<double>>& analytic,
                            const std::vector<Mat<double>>& numeric, double floor = 1e-4) {
  double worst = 0.0;
  for (size_t k = 0; k < analytic.size(); ++k) {
    for (Eigen::Index i = 0; i < analytic[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < analytic[k].cols(); ++j) {
        double a = analytic[k](i, j), n = numeric[k](i, j);
        double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

template <typename S>
Mat<S> random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, S lo = S(-1), S hi = S(1)) {
  std::uniform_real_distribution<double> dist{double(lo), double(hi)};
  Mat<S> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = S(dist(rng));
  return m;
}

}  // namespace ctptest
