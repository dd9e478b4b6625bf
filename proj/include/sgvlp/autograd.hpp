#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Var is a handle to a node in a dynamically built expression graph. Every
// op computes its value eagerly and, when any input requires a gradient,
// records a closure that pushes the output gradient back to its inputs.
// backward() runs the closures in reverse topological order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sgvlp::ad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Matrix<T>& ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix<T>::Zero(value.rows(), value.cols());
    }
    return grad;
  }
  bool has_grad() const { return grad.size() != 0 && grad.size() == value.size(); }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var scalar(T v) {
    Matrix<T> m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m));
  }

  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  T item() const {
    if (node_->value.size() != 1) throw std::logic_error("item() on non-scalar Var");
    return node_->value(0, 0);
  }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The backward closure is only stored when gradient
/// recording is enabled and at least one parent requires a gradient.
template <class T, class Fn>
Var<T> make_op(Matrix<T> value, std::vector<Var<T>> parents, Fn&& backward) {
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::forward<Fn>(backward);
  return out;
}

/// Accumulates into parent `i` if it participates in differentiation.
template <class T>
inline Matrix<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.ensure_grad();
}

template <class T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = root.node()->ensure_grad();
  g.setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Interior gradients are not needed once propagated.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------
// Shape checks

inline void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  return make_op<T>(a.value() + b.value(), {a, b}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) *g += s.grad;
    if (auto* g = parent_grad(s, 1)) *g += s.grad;
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  return make_op<T>(a.value() - b.value(), {a, b}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) *g += s.grad;
    if (auto* g = parent_grad(s, 1)) *g -= s.grad;
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  return make_op<T>(a.value().cwiseProduct(b.value()), {a, b}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) *g += s.grad.cwiseProduct(s.parents[1]->value);
    if (auto* g = parent_grad(s, 1)) *g += s.grad.cwiseProduct(s.parents[0]->value);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T k) {
  return make_op<T>(a.value() * k, {a}, [k](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) *g += s.grad * k;
  });
}

/// Adds a 1 x C row to every row of `a`.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape");
  Matrix<T> v = a.value().rowwise() + row.value().row(0);
  return make_op<T>(std::move(v), {a, row}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) *g += s.grad;
    if (auto* g = parent_grad(s, 1)) *g += s.grad.colwise().sum();
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix<T> v;
  v.noalias() = a.value() * b.value();
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& s) {
    const auto& A = s.parents[0]->value;
    const auto& B = s.parents[1]->value;
    if (auto* g = parent_grad(s, 0)) g->noalias() += s.grad * B.transpose();
    if (auto* g = parent_grad(s, 1)) g->noalias() += A.transpose() * s.grad;
  });
}

/// a * b^T
template <class T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.cols(), "matmul_bt: feature dimension mismatch");
  Matrix<T> v;
  v.noalias() = a.value() * b.value().transpose();
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& s) {
    const auto& A = s.parents[0]->value;
    const auto& B = s.parents[1]->value;
    if (auto* g = parent_grad(s, 0)) g->noalias() += s.grad * B;
    if (auto* g = parent_grad(s, 1)) g->noalias() += s.grad.transpose() * A;
  });
}

/// x * w + b, with w: in x out and b: 1 x out.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(x.cols() == w.rows(), "linear: input width mismatch");
  require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias shape");
  Matrix<T> v;
  v.noalias() = x.value() * w.value();
  v.rowwise() += b.value().row(0);
  return make_op<T>(std::move(v), {x, w, b}, [](Node<T>& s) {
    const auto& X = s.parents[0]->value;
    const auto& W = s.parents[1]->value;
    if (auto* g = parent_grad(s, 0)) g->noalias() += s.grad * W.transpose();
    if (auto* g = parent_grad(s, 1)) g->noalias() += X.transpose() * s.grad;
    if (auto* g = parent_grad(s, 2)) *g += s.grad.colwise().sum();
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Matrix<T> v = a.value().cwiseMax(T(0));
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      *g += (s.parents[0]->value.array() > T(0)).select(s.grad, T(0));
    }
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Matrix<T> v = a.value().array().tanh().matrix();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      *g += (s.grad.array() * (T(1) - s.value.array().square())).matrix();
    }
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Matrix<T> v = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      *g += (s.grad.array() * s.value.array() * (T(1) - s.value.array())).matrix();
    }
  });
}

/// Elementwise clamp; the gradient is zero where the input was clipped.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Matrix<T> v = a.value().cwiseMax(lo).cwiseMin(hi);
  return make_op<T>(std::move(v), {a}, [lo, hi](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      const auto& x = s.parents[0]->value.array();
      *g += ((x >= lo) && (x <= hi)).select(s.grad.array(), T(0)).matrix();
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  Matrix<T> v(1, 1);
  v(0, 0) = a.value().sum();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) g->array() += s.grad(0, 0);
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  require(a.value().size() > 0, "mean: empty input");
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Structural ops

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix<T> v(rows, total);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return make_op<T>(std::move(v), parts, [offsets](Node<T>& s) {
    for (std::size_t i = 0; i < s.parents.size(); ++i) {
      if (auto* g = parent_grad(s, i)) *g += s.grad.middleCols(offsets[i], g->cols());
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const auto cols = parts.front().cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix<T> v(total, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return make_op<T>(std::move(v), parts, [offsets](Node<T>& s) {
    for (std::size_t i = 0; i < s.parents.size(); ++i) {
      if (auto* g = parent_grad(s, i)) *g += s.grad.middleRows(offsets[i], g->rows());
    }
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && start + n <= a.cols(), "slice_cols: out of range");
  Matrix<T> v = a.value().middleCols(start, n);
  return make_op<T>(std::move(v), {a}, [start, n](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) g->middleCols(start, n) += s.grad;
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && start + n <= a.rows(), "slice_rows: out of range");
  Matrix<T> v = a.value().middleRows(start, n);
  return make_op<T>(std::move(v), {a}, [start, n](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) g->middleRows(start, n) += s.grad;
  });
}

/// One term of a sparse row mixing: out[dst] += weight * in[src].
template <class T>
struct RowTerm {
  int dst;
  int src;
  T weight;
};

/// Sparse linear recombination of rows. Covers gather, scatter-add,
/// segment means and row masking with a single differentiable primitive.
template <class T>
Var<T> combine_rows(const Var<T>& a, const std::vector<RowTerm<T>>& terms, Eigen::Index out_rows) {
  Matrix<T> v = Matrix<T>::Zero(out_rows, a.cols());
  for (const auto& t : terms) {
    require(t.dst >= 0 && t.dst < out_rows && t.src >= 0 && t.src < a.rows(),
            "combine_rows: index out of range");
    v.row(t.dst) += t.weight * a.value().row(t.src);
  }
  return make_op<T>(std::move(v), {a}, [terms](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      for (const auto& t : terms) g->row(t.src) += t.weight * s.grad.row(t.dst);
    }
  });
}

template <class T>
Var<T> gather_rows(const Var<T>& a, const std::vector<int>& index) {
  std::vector<RowTerm<T>> terms;
  terms.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    terms.push_back({static_cast<int>(i), index[i], T(1)});
  }
  return combine_rows(a, terms, static_cast<Eigen::Index>(index.size()));
}

/// Repeats a 1 x C row `n` times.
template <class T>
Var<T> broadcast_row(const Var<T>& row, Eigen::Index n) {
  require(row.rows() == 1, "broadcast_row: expects a single row");
  return gather_rows(row, std::vector<int>(static_cast<std::size_t>(n), 0));
}

/// Row-major reinterpretation with the same element count.
template <class T>
Var<T> reshape(const Var<T>& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), "reshape: element count");
  Matrix<T> v = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      Eigen::Map<Matrix<T>>(g->data(), s.grad.rows(), s.grad.cols()) += s.grad;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Divides every row by its L2 norm (floored at eps).
template <class T>
Var<T> l2_normalize_rows(const Var<T>& a, T eps = T(1e-12)) {
  const auto& x = a.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = x.rowwise().norm().cwiseMax(eps);
  Matrix<T> v = x.array().colwise() / norms.array();
  return make_op<T>(std::move(v), {a}, [norms](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      const auto& y = s.value;
      Eigen::Matrix<T, Eigen::Dynamic, 1> dots = (s.grad.cwiseProduct(y)).rowwise().sum();
      Matrix<T> dx = s.grad - (y.array().colwise() * dots.array()).matrix();
      *g += (dx.array().colwise() / norms.array()).matrix();
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (both 1 x C).
template <class T>
Var<T> layer_norm(const Var<T>& a, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const auto n = a.cols();
  require(gain.cols() == n && bias.cols() == n, "layer_norm: parameter width");
  const auto& x = a.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> mu = x.rowwise().mean();
  Matrix<T> xc = x.colwise() - mu;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std =
      ((xc.array().square().rowwise().sum() / static_cast<T>(n)) + eps).rsqrt();
  Matrix<T> xhat = xc.array().colwise() * inv_std.array();
  Matrix<T> v = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                bias.value().row(0).array();
  return make_op<T>(std::move(v), {a, gain, bias}, [xhat, inv_std, n](Node<T>& s) {
    const auto& gam = s.parents[1]->value;
    if (auto* g = parent_grad(s, 0)) {
      Matrix<T> dxhat = s.grad.array().rowwise() * gam.row(0).array();
      Eigen::Matrix<T, Eigen::Dynamic, 1> m1 = dxhat.rowwise().mean();
      Eigen::Matrix<T, Eigen::Dynamic, 1> m2 =
          (dxhat.cwiseProduct(xhat)).rowwise().sum() / static_cast<T>(n);
      Matrix<T> dx = dxhat.colwise() - m1;
      dx -= (xhat.array().colwise() * m2.array()).matrix();
      *g += (dx.array().colwise() * inv_std.array()).matrix();
    }
    if (auto* g = parent_grad(s, 1)) *g += (s.grad.cwiseProduct(xhat)).colwise().sum();
    if (auto* g = parent_grad(s, 2)) *g += s.grad.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Attention

/// A rectangular block of the attention pattern: queries [q0, q1) attend
/// over keys [k0, k1). Blocks must not overlap in their query range.
struct AttentionBlock {
  int q0, q1, k0, k1;
};

/// Scaled dot-product attention restricted to the given blocks.
/// `key_valid` (optional, one flag per key row) removes padding keys; they
/// receive exactly zero weight. Query rows outside every block produce
/// zeros. If `weights_out` is non-null the per-block attention matrices are
/// appended to it.
template <class T>
Var<T> blocked_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                         const std::vector<AttentionBlock>& blocks,
                         const std::vector<bool>& key_valid = {},
                         std::vector<Matrix<T>>* weights_out = nullptr) {
  require(q.cols() == k.cols(), "attention: query/key width mismatch");
  require(k.rows() == v.rows(), "attention: key/value count mismatch");
  require(key_valid.empty() || static_cast<Eigen::Index>(key_valid.size()) == k.rows(),
          "attention: key mask length");
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(q.cols()));
  Matrix<T> out = Matrix<T>::Zero(q.rows(), v.cols());
  std::vector<Matrix<T>> weights;
  weights.reserve(blocks.size());
  for (const auto& b : blocks) {
    require(b.q0 >= 0 && b.q1 <= q.rows() && b.k0 >= 0 && b.k1 <= k.rows() && b.q0 <= b.q1 &&
                b.k0 < b.k1,
            "attention: block out of range");
    Matrix<T> scores;
    scores.noalias() = q.value().middleRows(b.q0, b.q1 - b.q0) *
                       k.value().middleRows(b.k0, b.k1 - b.k0).transpose();
    scores *= scale_factor;
    bool any_valid = key_valid.empty();
    for (int j = b.k0; j < b.k1 && !any_valid; ++j) any_valid = key_valid[j];
    if (!any_valid) throw std::invalid_argument("attention: all keys masked");
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = b.k0; j < b.k1; ++j) {
        if (key_valid.empty() || key_valid[j]) mx = std::max(mx, scores(r, j - b.k0));
      }
      T total = 0;
      for (int j = b.k0; j < b.k1; ++j) {
        T e = (key_valid.empty() || key_valid[j]) ? std::exp(scores(r, j - b.k0) - mx) : T(0);
        scores(r, j - b.k0) = e;
        total += e;
      }
      scores.row(r) /= total;
    }
    out.middleRows(b.q0, b.q1 - b.q0).noalias() =
        scores * v.value().middleRows(b.k0, b.k1 - b.k0);
    weights.push_back(std::move(scores));
  }
  if (weights_out) weights_out->insert(weights_out->end(), weights.begin(), weights.end());
  return make_op<T>(std::move(out), {q, k, v},
                    [blocks, weights = std::move(weights), scale_factor](Node<T>& s) {
    const auto& Q = s.parents[0]->value;
    const auto& K = s.parents[1]->value;
    const auto& V = s.parents[2]->value;
    auto* gq = parent_grad(s, 0);
    auto* gk = parent_grad(s, 1);
    auto* gv = parent_grad(s, 2);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      const auto& A = weights[i];
      const auto nq = b.q1 - b.q0;
      const auto nk = b.k1 - b.k0;
      auto dout = s.grad.middleRows(b.q0, nq);
      if (gv) gv->middleRows(b.k0, nk).noalias() += A.transpose() * dout;
      if (!gq && !gk) continue;
      Matrix<T> dA;
      dA.noalias() = dout * V.middleRows(b.k0, nk).transpose();
      Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dA.cwiseProduct(A)).rowwise().sum();
      Matrix<T> dS = (A.array() * (dA.colwise() - rowdot).array()).matrix() * scale_factor;
      if (gq) gq->middleRows(b.q0, nq).noalias() += dS * K.middleRows(b.k0, nk);
      if (gk) gk->middleRows(b.k0, nk).noalias() += dS.transpose() * Q.middleRows(b.q0, nq);
    }
  });
}

// ---------------------------------------------------------------------------
// Losses (all return 1 x 1)

/// Logits are clamped to +-kLogitClamp before every cross-entropy below.
inline constexpr double kLogitClamp = 30.0;

/// Mean softmax cross-entropy over rows whose target is >= 0; rows with a
/// negative target are ignored. Returns 0 when no row is supervised.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& targets) {
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(),
          "cross_entropy: target count mismatch");
  const T lim = static_cast<T>(kLogitClamp);
  Var<T> z = clamp(logits, -lim, lim);
  const auto& x = z.value();
  Matrix<T> probs(x.rows(), x.cols());
  T total = 0;
  int count = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp();
    const T denom = probs.row(r).sum();
    probs.row(r) /= denom;
    const int t = targets[r];
    if (t < 0) continue;
    require(t < x.cols(), "cross_entropy: target out of range");
    total += -(x(r, t) - mx - std::log(denom));
    ++count;
  }
  Matrix<T> v(1, 1);
  v(0, 0) = count > 0 ? total / static_cast<T>(count) : T(0);
  return make_op<T>(std::move(v), {z}, [probs, targets, count](Node<T>& s) {
    if (count == 0) return;
    if (auto* g = parent_grad(s, 0)) {
      const T k = s.grad(0, 0) / static_cast<T>(count);
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        if (targets[r] < 0) continue;
        g->row(r) += k * probs.row(r);
        (*g)(r, targets[r]) -= k;
      }
    }
  });
}

/// Mean over rows of -sum_c p(r, c) log softmax(logits)(r, c).
template <class T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Matrix<T>& target_dist) {
  require(target_dist.rows() == logits.rows() && target_dist.cols() == logits.cols(),
          "soft_cross_entropy: target shape");
  require(logits.rows() > 0, "soft_cross_entropy: empty batch");
  const T lim = static_cast<T>(kLogitClamp);
  Var<T> z = clamp(logits, -lim, lim);
  const auto& x = z.value();
  Matrix<T> probs(x.rows(), x.cols());
  T total = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp();
    const T denom = probs.row(r).sum();
    probs.row(r) /= denom;
    const T lse = mx + std::log(denom);
    total += -(target_dist.row(r).array() * (x.row(r).array() - lse)).sum();
  }
  const auto n = x.rows();
  Matrix<T> v(1, 1);
  v(0, 0) = total / static_cast<T>(n);
  return make_op<T>(std::move(v), {z}, [probs, target_dist, n](Node<T>& s) {
    if (auto* g = parent_grad(s, 0)) {
      const T k = s.grad(0, 0) / static_cast<T>(n);
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        g->row(r) += k * (probs.row(r) * target_dist.row(r).sum() - target_dist.row(r));
      }
    }
  });
}

/// Binary cross-entropy of sigmoid(logits) against `targets`, averaged over
/// entries where `valid` is non-zero. Returns 0 when nothing is valid.
template <class T>
Var<T> bce_with_logits(const Var<T>& logits, const Matrix<T>& targets, const Matrix<T>& valid) {
  require(targets.rows() == logits.rows() && targets.cols() == logits.cols() &&
              valid.rows() == logits.rows() && valid.cols() == logits.cols(),
          "bce_with_logits: shape mismatch");
  const T lim = static_cast<T>(kLogitClamp);
  Var<T> z = clamp(logits, -lim, lim);
  const auto& x = z.value();
  T total = 0;
  T count = 0;
  Matrix<T> sig(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const T xi = x(r, c);
      sig(r, c) = T(1) / (T(1) + std::exp(-xi));
      if (valid(r, c) == T(0)) continue;
      // log(1 + exp(-|x|)) form keeps both branches finite.
      const T softplus = std::max(xi, T(0)) + std::log1p(std::exp(-std::abs(xi)));
      total += softplus - targets(r, c) * xi;
      count += T(1);
    }
  }
  Matrix<T> v(1, 1);
  v(0, 0) = count > 0 ? total / count : T(0);
  return make_op<T>(std::move(v), {z}, [sig, targets, valid, count](Node<T>& s) {
    if (count == T(0)) return;
    if (auto* g = parent_grad(s, 0)) {
      const T k = s.grad(0, 0) / count;
      *g += (k * (sig - targets).cwiseProduct(valid));
    }
  });
}

/// Mean absolute error over rows flagged in `row_mask`, averaged over all
/// masked elements. Returns 0 when no row is selected.
template <class T>
Var<T> masked_l1(const Var<T>& pred, const Matrix<T>& target, const std::vector<bool>& row_mask) {
  require(target.rows() == pred.rows() && target.cols() == pred.cols(), "masked_l1: shape");
  require(static_cast<Eigen::Index>(row_mask.size()) == pred.rows(), "masked_l1: mask length");
  Matrix<T> diff = pred.value() - target;
  T total = 0;
  int rows = 0;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    if (!row_mask[r]) continue;
    total += diff.row(r).cwiseAbs().sum();
    ++rows;
  }
  const T denom = static_cast<T>(rows) * static_cast<T>(pred.cols());
  Matrix<T> v(1, 1);
  v(0, 0) = rows > 0 ? total / denom : T(0);
  return make_op<T>(std::move(v), {pred}, [diff, row_mask, denom, rows](Node<T>& s) {
    if (rows == 0) return;
    if (auto* g = parent_grad(s, 0)) {
      const T k = s.grad(0, 0) / denom;
      for (Eigen::Index r = 0; r < diff.rows(); ++r) {
        if (!row_mask[r]) continue;
        for (Eigen::Index c = 0; c < diff.cols(); ++c) {
          const T d = diff(r, c);
          (*g)(r, c) += k * (d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)));
        }
      }
    }
  });
}

}  // namespace sgvlp::ad
