#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ctpnet/errors.hpp"

namespace ctp {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

namespace ad {

/// Suppresses graph recording for the enclosing scope. Forward passes made
/// under an active NoGrad produce plain constants, which keeps frozen-network
/// evaluation cheap.
class NoGrad {
 public:
  NoGrad() { ++depth(); }
  ~NoGrad() { --depth(); }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

  static bool active() { return depth() > 0; }

 private:
  static int& depth() {
    thread_local int d = 0;
    return d;
  }
};

/// A node in the recorded computation graph. Handles (`Var`) share ownership.
///
/// Backward rules receive the node's adjoint plus the parent handles and
/// return one adjoint contribution per parent. They are written in terms of
/// recorded operations themselves, so differentiating a gradient (as the
/// critic penalty requires) reuses the same machinery. Closures must not
/// capture Var handles; parent access goes through the argument so that the
/// iterative destructor below can unwind arbitrarily deep graphs.
template <typename S>
class Var {
 public:
  struct Node;
  using NodePtr = std::shared_ptr<Node>;
  using BackwardFn =
      std::function<std::vector<Var<S>>(const Var<S>& adjoint, const std::vector<Var<S>>& parents)>;

  struct Node {
    Mat<S> value;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;

    ~Node() {
      // Iterative release: a long op chain must not unwind recursively.
      std::vector<NodePtr> stack;
      backward = nullptr;
      stack.swap(parents);
      while (!stack.empty()) {
        NodePtr p = std::move(stack.back());
        stack.pop_back();
        if (p && p.use_count() == 1) {
          p->backward = nullptr;
          for (auto& gp : p->parents) stack.push_back(std::move(gp));
          p->parents.clear();
        }
      }
    }
  };

  Var() = default;

  /// A trainable leaf (records gradients).
  static Var leaf(Mat<S> value) {
    Var v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = true;
    return v;
  }

  /// A non-trainable value.
  static Var constant(Mat<S> value) {
    Var v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = false;
    return v;
  }

  static Var scalar(S value) {
    Mat<S> m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
  }

  bool defined() const { return node_ != nullptr; }
  const Mat<S>& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// The sole scalar entry; the node must be 1x1.
  S item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item() requires a 1x1 value");
    return node_->value(0, 0);
  }

  /// Cuts the graph: same value, no history.
  Var detach() const { return constant(node_->value); }

  /// In-place value update for optimizer steps on leaves. Any graph built
  /// from the old value must already be discarded.
  void assign(const Mat<S>& value) {
    if (value.rows() != rows() || value.cols() != cols())
      throw ShapeError("assign: shape mismatch");
    node_->value = value;
  }

  Node* raw() const { return node_.get(); }

  static Var from_node(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

template <typename S>
Var<S> make_op(Mat<S> value, std::vector<Var<S>> parents, typename Var<S>::BackwardFn backward) {
  auto node = std::make_shared<typename Var<S>::Node>();
  node->value = std::move(value);
  bool rq = false;
  if (!NoGrad::active()) {
    for (const auto& p : parents) rq = rq || p.requires_grad();
  }
  node->requires_grad = rq;
  if (rq) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var<S>::from_node(std::move(node));
}

template <typename S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

// ---- primitive operations ----

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a, b, "add");
  return make_op<S>(
      a.value() + b.value(), {a, b},
      [](const Var<S>& adj, const std::vector<Var<S>>&) { return std::vector<Var<S>>{adj, adj}; });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return make_op<S>(-a.value(), {a}, [](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{neg(adj)};
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a, b, "sub");
  return make_op<S>(a.value() - b.value(), {a, b},
                    [](const Var<S>& adj, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{adj, neg(adj)};
                    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  return make_op<S>(a.value() * s, {a}, [s](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{scale(adj, s)};
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S s) {
  return make_op<S>((a.value().array() + s).matrix(), {a},
                    [](const Var<S>& adj, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{adj};
                    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a, b, "mul");
  return make_op<S>(a.value().cwiseProduct(b.value()), {a, b},
                    [](const Var<S>& adj, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{mul(adj, p[1]), mul(adj, p[0])};
                    });
}

/// Elementwise product with a constant matrix (no gradient into the constant).
template <typename S>
Var<S> cmul(const Var<S>& a, const Mat<S>& m) {
  if (a.rows() != m.rows() || a.cols() != m.cols()) throw ShapeError("cmul: shape mismatch");
  return make_op<S>(a.value().cwiseProduct(m), {a},
                    [m](const Var<S>& adj, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{cmul(adj, m)};
                    });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  return make_op<S>(a.value() * b.value(), {a, b},
                    [](const Var<S>& adj, const std::vector<Var<S>>& p) {
                      return std::vector<Var<S>>{matmul(adj, transpose(p[1])),
                                                 matmul(transpose(p[0]), adj)};
                    });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  return make_op<S>(a.value().transpose(), {a},
                    [](const Var<S>& adj, const std::vector<Var<S>>&) {
                      return std::vector<Var<S>>{transpose(adj)};
                    });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return make_op<S>(a.value().cwiseMax(S(0)), {a},
                    [](const Var<S>& adj, const std::vector<Var<S>>& p) {
                      Mat<S> mask = (p[0].value().array() > S(0)).template cast<S>().matrix();
                      return std::vector<Var<S>>{cmul(adj, mask)};
                    });
}

template <typename S>
Var<S> tanh_v(const Var<S>& a) {
  return make_op<S>(a.value().array().tanh().matrix(), {a},
                    [](const Var<S>& adj, const std::vector<Var<S>>& p) {
                      Var<S> t = tanh_v(p[0]);
                      return std::vector<Var<S>>{mul(adj, add_scalar(neg(mul(t, t)), S(1)))};
                    });
}

template <typename S>
Var<S> sigmoid_v(const Var<S>& a) {
  Mat<S> v = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  return make_op<S>(std::move(v), {a}, [](const Var<S>& adj, const std::vector<Var<S>>& p) {
    Var<S> s = sigmoid_v(p[0]);
    return std::vector<Var<S>>{mul(adj, mul(s, add_scalar(neg(s), S(1))))};
  });
}

/// Elementwise power with a constant exponent. The backward rule evaluates
/// x^(p-1); keep inputs strictly positive for fractional exponents.
template <typename S>
Var<S> powc(const Var<S>& a, S p) {
  Mat<S> v = a.value().array().pow(p).matrix();
  return make_op<S>(std::move(v), {a}, [p](const Var<S>& adj, const std::vector<Var<S>>& pr) {
    return std::vector<Var<S>>{mul(adj, scale(powc(pr[0], p - S(1)), p))};
  });
}

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  Mat<S> v(1, 1);
  v(0, 0) = a.value().sum();
  return make_op<S>(std::move(v), {a}, [](const Var<S>& adj, const std::vector<Var<S>>& p) {
    return std::vector<Var<S>>{broadcast_full(adj, p[0].rows(), p[0].cols())};
  });
}

/// Replicates a 1x1 value to rows x cols.
template <typename S>
Var<S> broadcast_full(const Var<S>& s, Eigen::Index rows, Eigen::Index cols) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("broadcast_full: source must be 1x1");
  Mat<S> v = Mat<S>::Constant(rows, cols, s.value()(0, 0));
  return make_op<S>(std::move(v), {s}, [](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{sum_all(adj)};
  });
}

template <typename S>
Var<S> row_sum(const Var<S>& a) {
  Mat<S> v = a.value().rowwise().sum();
  return make_op<S>(std::move(v), {a}, [](const Var<S>& adj, const std::vector<Var<S>>& p) {
    return std::vector<Var<S>>{repeat_cols(adj, p[0].cols())};
  });
}

template <typename S>
Var<S> col_sum(const Var<S>& a) {
  Mat<S> v = a.value().colwise().sum();
  return make_op<S>(std::move(v), {a}, [](const Var<S>& adj, const std::vector<Var<S>>& p) {
    return std::vector<Var<S>>{repeat_rows(adj, p[0].rows())};
  });
}

/// Replicates a 1xN row vector M times.
template <typename S>
Var<S> repeat_rows(const Var<S>& a, Eigen::Index m) {
  if (a.rows() != 1) throw ShapeError("repeat_rows: source must have one row");
  Mat<S> v = a.value().replicate(m, 1);
  return make_op<S>(std::move(v), {a}, [](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{col_sum(adj)};
  });
}

/// Replicates an Mx1 column vector N times.
template <typename S>
Var<S> repeat_cols(const Var<S>& a, Eigen::Index n) {
  if (a.cols() != 1) throw ShapeError("repeat_cols: source must have one column");
  Mat<S> v = a.value().replicate(1, n);
  return make_op<S>(std::move(v), {a}, [](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{row_sum(adj)};
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, Eigen::Index j0, Eigen::Index w) {
  if (j0 < 0 || w < 0 || j0 + w > a.cols()) throw ShapeError("slice_cols: out of range");
  Mat<S> v = a.value().middleCols(j0, w);
  return make_op<S>(std::move(v), {a}, [j0](const Var<S>& adj, const std::vector<Var<S>>& p) {
    return std::vector<Var<S>>{pad_cols(adj, j0, p[0].cols())};
  });
}

/// Embeds a block into a zero matrix with `total` columns at column j0.
template <typename S>
Var<S> pad_cols(const Var<S>& a, Eigen::Index j0, Eigen::Index total) {
  if (j0 < 0 || j0 + a.cols() > total) throw ShapeError("pad_cols: out of range");
  Mat<S> v = Mat<S>::Zero(a.rows(), total);
  v.middleCols(j0, a.cols()) = a.value();
  Eigen::Index w = a.cols();
  return make_op<S>(std::move(v), {a}, [j0, w](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{slice_cols(adj, j0, w)};
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index i0, Eigen::Index h) {
  if (i0 < 0 || h < 0 || i0 + h > a.rows()) throw ShapeError("slice_rows: out of range");
  Mat<S> v = a.value().middleRows(i0, h);
  return make_op<S>(std::move(v), {a}, [i0](const Var<S>& adj, const std::vector<Var<S>>& p) {
    return std::vector<Var<S>>{pad_rows(adj, i0, p[0].rows())};
  });
}

template <typename S>
Var<S> pad_rows(const Var<S>& a, Eigen::Index i0, Eigen::Index total) {
  if (i0 < 0 || i0 + a.rows() > total) throw ShapeError("pad_rows: out of range");
  Mat<S> v = Mat<S>::Zero(total, a.cols());
  v.middleRows(i0, a.rows()) = a.value();
  Eigen::Index h = a.rows();
  return make_op<S>(std::move(v), {a}, [i0, h](const Var<S>& adj, const std::vector<Var<S>>&) {
    return std::vector<Var<S>>{slice_rows(adj, i0, h)};
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op<S>(std::move(v), parts, [](const Var<S>& adj, const std::vector<Var<S>>& ps) {
    std::vector<Var<S>> out;
    out.reserve(ps.size());
    Eigen::Index at = 0;
    for (const auto& p : ps) {
      out.push_back(slice_cols(adj, at, p.cols()));
      at += p.cols();
    }
    return out;
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Eigen::Index cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op<S>(std::move(v), parts, [](const Var<S>& adj, const std::vector<Var<S>>& ps) {
    std::vector<Var<S>> out;
    out.reserve(ps.size());
    Eigen::Index at = 0;
    for (const auto& p : ps) {
      out.push_back(slice_rows(adj, at, p.rows()));
      at += p.rows();
    }
    return out;
  });
}

// ---- composites ----

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  return scale(sum_all(a), S(1) / S(a.rows() * a.cols()));
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return mul(a, a);
}

template <typename S>
Var<S> sqrt_v(const Var<S>& a) {
  return powc(a, S(0.5));
}

/// x (m x in) * w (in x out) + b (1 x out) broadcast over rows.
template <typename S>
Var<S> affine(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  return add(matmul(x, w), repeat_rows(b, x.rows()));
}

/// Per-row Euclidean norm, m x 1. The epsilon keeps the derivative finite at
/// zero rows without visibly distorting nonzero norms.
template <typename S>
Var<S> row_norm(const Var<S>& a, S eps = S(1e-16)) {
  return sqrt_v(add_scalar(row_sum(square(a)), eps));
}

template <typename S>
Var<S> mse(const Var<S>& pred, const Var<S>& target) {
  return mean_all(square(sub(pred, target)));
}

// ---- gradient computation ----

/// Adjoints of `root` (a 1x1 scalar) with respect to each input. Inputs not
/// reached by the graph get zero adjoints. The returned Vars carry their own
/// recorded graphs, so further differentiation through them is valid.
template <typename S>
std::vector<Var<S>> grad(const Var<S>& root, const std::vector<Var<S>>& inputs) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("grad: root must be 1x1");
  using Node = typename Var<S>::Node;

  // Reverse postorder over grad-requiring ancestry = topological order with
  // every consumer before its producer.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (root.requires_grad()) {
    stack.push_back({root.raw(), 0});
    visited.insert(root.raw());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Var<S>> adjoint;
  if (!order.empty()) adjoint[root.raw()] = Var<S>::constant(Mat<S>::Ones(1, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto found = adjoint.find(n);
    if (found == adjoint.end() || !n->backward) continue;
    std::vector<Var<S>> parents;
    parents.reserve(n->parents.size());
    for (const auto& p : n->parents) parents.push_back(Var<S>::from_node(p));
    std::vector<Var<S>> contribs = n->backward(found->second, parents);
    if (contribs.size() != n->parents.size())
      throw ShapeError("grad: backward rule returned wrong arity");
    for (size_t i = 0; i < contribs.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad || !contribs[i].defined()) continue;
      auto at = adjoint.find(p);
      if (at == adjoint.end())
        adjoint.emplace(p, contribs[i]);
      else
        at->second = add(at->second, contribs[i]);
    }
  }

  std::vector<Var<S>> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = adjoint.find(in.raw());
    if (found != adjoint.end())
      out.push_back(found->second);
    else
      out.push_back(Var<S>::constant(Mat<S>::Zero(in.rows(), in.cols())));
  }
  return out;
}

template <typename S>
Var<S> grad_single(const Var<S>& root, const Var<S>& input) {
  return grad(root, std::vector<Var<S>>{input})[0];
}

}  // namespace ad

using ad::Var;

}  // namespace ctp
