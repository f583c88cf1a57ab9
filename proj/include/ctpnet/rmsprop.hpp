#pragma once

#include <cmath>
#include <vector>

#include "ctpnet/autodiff.hpp"
#include "ctpnet/errors.hpp"

namespace ctp {

/// Root-mean-square-propagation with a running second-moment estimate:
///   s <- decay * s + (1 - decay) * g^2
///   p <- p - lr * g / (sqrt(s) + eps)
template <typename S>
class RmsProp {
 public:
  explicit RmsProp(S lr, S decay = S(0.99), S eps = S(1e-8)) : lr_(lr), decay_(decay), eps_(eps) {}

  void step(std::vector<Var<S>>& params, const std::vector<Mat<S>>& grads) {
    if (params.size() != grads.size()) throw ShapeError("RmsProp: params/grads size mismatch");
    if (sq_.empty()) {
      sq_.reserve(params.size());
      for (const auto& p : params) sq_.push_back(Mat<S>::Zero(p.rows(), p.cols()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
      if (!grads[i].allFinite()) throw NumericError("RmsProp: non-finite gradient");
      sq_[i] = decay_ * sq_[i] + (S(1) - decay_) * grads[i].cwiseProduct(grads[i]);
      Mat<S> denom = (sq_[i].array().sqrt() + eps_).matrix();
      params[i].assign(params[i].value() - lr_ * grads[i].cwiseQuotient(denom));
    }
    ++steps_;
  }

  long steps() const { return steps_; }

  /// Changes the step size, keeping the second-moment state.
  void set_lr(S lr) { lr_ = lr; }
  S lr() const { return lr_; }

 private:
  S lr_, decay_, eps_;
  std::vector<Mat<S>> sq_;
  long steps_ = 0;
};

/// Gradient values of a scalar loss with respect to `params`.
template <typename S>
std::vector<Mat<S>> grad_values(const Var<S>& loss, const std::vector<Var<S>>& params) {
  auto gs = ad::grad(loss, params);
  std::vector<Mat<S>> out;
  out.reserve(gs.size());
  for (auto& g : gs) out.push_back(g.value());
  return out;
}

}  // namespace ctp
