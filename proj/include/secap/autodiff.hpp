#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Var is a handle on a graph node. Leaves created with parameter() collect
// gradients across backward() calls until zero_grad(); intermediate nodes are
// owned by the result that consumed them, so dropping the loss frees the graph.
// A graph must stay on the thread that built it.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "secap/tensor.hpp"

namespace secap::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void accumulate(const Tensor& g) {
    if (grad.empty())
      grad = g;
    else
      grad += g;
  }
  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Overwrite a leaf's value in place (used by optimizers and tests).
  Tensor& mutable_value() { return node_->value; }
  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

inline Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

/// Value-only copy cut off from the graph.
inline Var detach(const Var& v) { return constant(v.value()); }

/// While alive, operations on this thread record no backward rules.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

inline Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> rule) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!grad_disabled())
    for (const auto& in : inputs)
      if (in.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.ptr());
    n->backprop = std::move(rule);
  }
  return Var(std::move(n));
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace detail

inline NoGradGuard::NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
inline NoGradGuard::~NoGradGuard() { detail::grad_disabled() = previous_; }

namespace detail {

inline void require_same(const Var& a, const Var& b, const char* op) { a.value().check_same(b.value(), op); }

template <class F>
Var unary(const Var& a, F fwd, std::function<double(double x, double y)> dydx) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make(std::move(out), {a}, [dydx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx(p.value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- products

inline Var matmul(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  Tensor C = secap::matmul(A, B);
  return detail::make(std::move(C), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    const std::size_t m = pa.value.rows(), k = pa.value.cols(), n = pb.value.cols();
    if (pa.requires_grad)
      kernels::gemm_nt(self.grad.data().data(), pb.value.data().data(), pa.grad_buffer().data().data(), m, n, k);
    if (pb.requires_grad)
      kernels::gemm_tn(pa.value.data().data(), self.grad.data().data(), pb.grad_buffer().data().data(), m, k, n);
  });
}

/// a * b^T, the attention-score product.
inline Var matmul_nt(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols())
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(A.shape()) + " x " + shape_str(B.shape()) +
                     "^T");
  Tensor C(A.rows(), B.rows());
  kernels::gemm_nt(A.data().data(), B.data().data(), C.data().data(), A.rows(), A.cols(), B.rows());
  return detail::make(std::move(C), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    const std::size_t m = pa.value.rows(), k = pa.value.cols(), n = pb.value.rows();
    if (pa.requires_grad)
      kernels::gemm_nn(self.grad.data().data(), pb.value.data().data(), pa.grad_buffer().data().data(), m, n, k);
    if (pb.requires_grad)
      kernels::gemm_tn(self.grad.data().data(), pa.value.data().data(), pb.grad_buffer().data().data(), m, n, k);
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a.value().transposed(), {a}, [](Node& self) {
    Node& p = detail::parent(self, 0);
    p.accumulate(self.grad.transposed());
  });
}

// ------------------------------------------------------------ elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return detail::make(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      Node& p = detail::parent(self, i);
      if (p.requires_grad) p.accumulate(self.grad);
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return detail::make(std::move(out), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad);
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return detail::make(std::move(out), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::require_same(a, b, "div");
  Tensor out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= y[i];
  return detail::make(std::move(out), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return detail::make(std::move(out), {a}, [s](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return detail::make(std::move(out), {a}, [](Node& self) { detail::parent(self, 0).accumulate(self.grad); });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Gradient is passed only strictly inside (lo, hi).
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// -------------------------------------------------------------- broadcast

/// x (n x d) + b (1 x d) added to every row. The only broadcast supported.
inline Var add_row(const Var& x, const Var& b) {
  const auto& X = x.value();
  const auto& B = b.value();
  if (B.rows() != 1 || B.cols() != X.cols())
    throw ShapeError("add_row: bias " + shape_str(B.shape()) + " for input " + shape_str(X.shape()));
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) += B[c];
  return detail::make(std::move(out), {x, b}, [](Node& self) {
    Node& px = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (px.requires_grad) px.accumulate(self.grad);
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      const std::size_t n = self.grad.rows(), d = self.grad.cols();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad(r, c);
    }
  });
}

/// x (n x d) scaled column-wise by g (1 x d).
inline Var mul_row(const Var& x, const Var& gain) {
  const auto& X = x.value();
  const auto& G = gain.value();
  if (G.rows() != 1 || G.cols() != X.cols())
    throw ShapeError("mul_row: gain " + shape_str(G.shape()) + " for input " + shape_str(X.shape()));
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) *= G[c];
  return detail::make(std::move(out), {x, gain}, [](Node& self) {
    Node& px = detail::parent(self, 0);
    Node& pg = detail::parent(self, 1);
    const std::size_t n = self.grad.rows(), d = self.grad.cols();
    if (px.requires_grad) {
      Tensor& g = px.grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g(r, c) += self.grad(r, c) * pg.value[c];
    }
    if (pg.requires_grad) {
      Tensor& g = pg.grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad(r, c) * px.value(r, c);
    }
  });
}

// ------------------------------------------------------------ reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make(Tensor::scalar(s), {a}, [](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const double up = self.grad[0];
    for (auto& v : g.data()) v += up;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean over rows: (n x d) -> (1 x d).
inline Var mean_rows(const Var& a) {
  const auto& X = a.value();
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out(1, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += X(r, c);
  out *= 1.0 / static_cast<double>(n);
  return detail::make(std::move(out), {a}, [](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const std::size_t rows = g.rows(), d = g.cols();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) g(r, c) += self.grad[c] * inv;
  });
}

// ----------------------------------------------------------- row algebra

/// Row-wise softmax with max subtraction. With causal = true, entry (i, j) is
/// masked out whenever j > i + offset.
inline Var softmax_rows(const Var& a, bool causal = false, std::size_t offset = 0) {
  const auto& X = a.value();
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t limit = causal ? std::min(d, r + offset + 1) : d;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < limit; ++c) mx = std::max(mx, X(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < limit; ++c) {
      out(r, c) = std::exp(X(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < limit; ++c) out(r, c) /= z;
  }
  return detail::make(std::move(out), {a}, [](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const std::size_t rows = g.rows(), d = g.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < d; ++c) g(r, c) += self.value(r, c) * (self.grad(r, c) - dot);
    }
  });
}

/// Per-row standardisation (x - mean) / sqrt(var + eps), no affine part.
inline Var normalize_rows(const Var& a, double eps = 1e-5) {
  const auto& X = a.value();
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += X(r, c);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (X(r, c) - mu) * (X(r, c) - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) out(r, c) = (X(r, c) - mu) * inv_std[r];
  }
  return detail::make(std::move(out), {a}, [inv_std = std::move(inv_std)](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const std::size_t rows = g.rows(), d = g.cols();
    const double dn = static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double mg = 0.0, mgx = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        mg += self.grad(r, c);
        mgx += self.grad(r, c) * self.value(r, c);
      }
      mg /= dn;
      mgx /= dn;
      for (std::size_t c = 0; c < d; ++c)
        g(r, c) += inv_std[r] * (self.grad(r, c) - mg - self.value(r, c) * mgx);
    }
  });
}

inline Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  return add_row(mul_row(normalize_rows(x), gain), bias);
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.cols() != d)
      throw ShapeError("concat_rows: width " + std::to_string(p.cols()) + " vs " + std::to_string(d));
    n += p.rows();
  }
  Tensor out(n, d);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<long>(at * d));
    at += p.rows();
  }
  return detail::make(std::move(out), parts, [](Node& self) {
    std::size_t at = 0;
    const std::size_t d = self.value.cols();
    for (auto& pp : self.parents) {
      const std::size_t r = pp->value.rows();
      if (pp->requires_grad) {
        Tensor& g = pp->grad_buffer();
        for (std::size_t i = 0; i < r * d; ++i) g[i] += self.grad[at * d + i];
      }
      at += r;
    }
  });
}

/// Rows [begin, end).
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const auto& X = a.value();
  if (begin >= end || end > X.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(X.shape()));
  const std::size_t d = X.cols();
  Tensor out(end - begin, d);
  std::copy(X.data().begin() + static_cast<long>(begin * d), X.data().begin() + static_cast<long>(end * d),
            out.data().begin());
  return detail::make(std::move(out), {a}, [begin](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const std::size_t d = self.value.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

/// Embedding lookup: row ids[i] of table becomes output row i.
inline Var gather_rows(const Var& table, const std::vector<int>& ids) {
  const auto& W = table.value();
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t d = W.cols();
  Tensor out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows())
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(W.rows()) + " rows");
    auto src = W.row_span(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return detail::make(std::move(out), {table}, [ids](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const std::size_t d = self.value.cols();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g(static_cast<std::size_t>(ids[i]), c) += self.grad(i, c);
  });
}

/// Mean over rows of -log softmax(logits_row)[target_row].
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
  const auto& X = logits.value();
  const std::size_t n = X.rows(), v = X.cols();
  if (targets.size() != n)
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                     " rows");
  Tensor probs(n, v);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      throw ShapeError("cross_entropy_rows: target " + std::to_string(targets[r]) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < v; ++c) mx = std::max(mx, X(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      probs(r, c) = std::exp(X(r, c) - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < v; ++c) probs(r, c) /= z;
    loss += -(X(r, static_cast<std::size_t>(targets[r])) - mx - std::log(z));
  }
  loss /= static_cast<double>(n);
  return detail::make(Tensor::scalar(loss), {logits}, [probs = std::move(probs), targets](Node& self) {
    Tensor& g = detail::parent(self, 0).grad_buffer();
    const std::size_t rows = probs.rows(), v = probs.cols();
    const double up = self.grad[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < v; ++c) g(r, c) += up * probs(r, c);
      g(r, static_cast<std::size_t>(targets[r])) -= up;
    }
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// --------------------------------------------------------------- backward

/// Reverse sweep from a scalar. Gradients accumulate into every reachable node
/// that requires them; parameters keep theirs until zero_grad().
inline void backward(const Var& loss) {
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node().accumulate(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ------------------------------------------------------------ test oracle

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Central differences, one coordinate at a time.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw Error("finite_diff_grad: eps must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

/// Max over coordinates of |a - n| / max(|a|, |n|), skipping coordinates
/// whose absolute difference is under abs_floor.
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double abs_floor = 1e-7) {
  analytic.check_same(numeric, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    if (diff <= abs_floor) continue;
    const double denom = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

}  // namespace secap::ad
