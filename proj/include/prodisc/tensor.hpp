#pragma once

// Reverse-mode differentiable dense arrays over the fixed op set the model
// needs. The compute graph is a DAG of shared-storage tensors; backward()
// replays the recorded closures in reverse topological order. float is the
// training/inference precision, double backs the finite-difference
// verification harness.
//
// Every op validates that its output is finite; a NaN/Inf is a hard
// NumericError, never a silent value.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "prodisc/errors.hpp"

namespace prodisc {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII switch that disables graph recording (inference / finite-difference probes).
struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor;

template <typename T>
struct TapeNode {
  std::vector<Tensor<T>> parents;
  std::function<void(const Tensor<T>& out)> backprop;
};

inline std::string format_shape(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  struct Storage {
    std::vector<T> data;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad{false};
  };

  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.storage_ = std::make_shared<Storage>();
    t.storage_->requires_grad = requires_grad;
    t.storage_->data.assign(num_elements(t.shape_), T{0});
    if (requires_grad) t.storage_->grad.assign(t.storage_->data.size(), T{0});
    return t;
  }

  static Tensor from_values(std::vector<size_t> shape, std::vector<T> values,
                            bool requires_grad = false) {
    if (num_elements(shape) != values.size()) {
      throw ShapeError("from_values: " + format_shape(shape) + " does not hold " +
                       std::to_string(values.size()) + " elements");
    }
    Tensor t = zeros(std::move(shape), requires_grad);
    std::copy(values.begin(), values.end(), t.storage_->data.begin());
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  bool defined() const { return storage_ != nullptr; }
  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return storage_ ? storage_->data.size() : 0; }
  size_t dim(size_t i) const { return shape_.at(i); }

  std::span<T> values() { return {storage_->data.data(), storage_->data.size()}; }
  std::span<const T> values() const {
    return {storage_->data.data(), storage_->data.size()};
  }

  bool requires_grad() const { return storage_ && storage_->requires_grad; }

  std::span<T> grads() {
    return {storage_->grad.data(), storage_->grad.size()};
  }
  std::span<const T> grads() const {
    return {storage_->grad.data(), storage_->grad.size()};
  }

  void zero_grad() {
    if (requires_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), T{0});
  }

  T item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    }
    return storage_->data[0];
  }

  const std::shared_ptr<TapeNode<T>>& node() const { return node_; }
  void set_node(std::shared_ptr<TapeNode<T>> node) { node_ = std::move(node); }

  static size_t num_elements(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

 private:
  std::shared_ptr<Storage> storage_;
  std::shared_ptr<TapeNode<T>> node_;
  std::vector<size_t> shape_;
};

namespace detail {

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  const auto v = t.values();
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << op << ": non-finite value " << v[i] << " at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

// Result tensor of an op: requires grad iff recording is on and any parent does.
template <typename T>
Tensor<T> make_result(std::vector<size_t> shape,
                      std::initializer_list<Tensor<T>> parents) {
  bool needs = false;
  if (grad_mode()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  return Tensor<T>::zeros(std::move(shape), needs);
}

template <typename T>
void attach(Tensor<T>& out, std::vector<Tensor<T>> parents,
            std::function<void(const Tensor<T>&)> backprop) {
  if (!out.requires_grad()) return;
  auto node = std::make_shared<TapeNode<T>>();
  node->parents = std::move(parents);
  node->backprop = std::move(backprop);
  out.set_node(std::move(node));
}

template <typename T>
size_t last_dim(const Tensor<T>& t, const char* op) {
  if (t.rank() < 1 || t.size() == 0) {
    throw ShapeError(std::string(op) + ": needs a non-empty tensor");
  }
  return t.shape().back();
}

}  // namespace detail

// out[m,p] = sum_k a[m,k] * b[k,p]
// gradients: dL/da = dL/dout * b^T, dL/db = a^T * dL/dout
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + format_shape(a.shape()) +
                     " x " + format_shape(b.shape()));
  }
  const size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  Tensor<T> out = detail::make_result<T>({m, p}, {a, b});
  {
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values();
    for (size_t i = 0; i < m; ++i) {
      for (size_t k = 0; k < n; ++k) {
        const T aik = av[i * n + k];
        const T* brow = &bv[k * p];
        T* orow = &ov[i * p];
        for (size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  detail::ensure_finite(out, "matmul");
  detail::attach<T>(out, {a, b}, [a, b, m, n, p](const Tensor<T>& o) {
    const auto go = o.grads();
    if (a.requires_grad()) {
      auto ga = Tensor<T>(a).grads();
      const auto bv = b.values();
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
          const T* grow = &go[i * p];
          const T* brow = &bv[j * p];
          T acc{0};
          for (size_t k = 0; k < p; ++k) acc += grow[k] * brow[k];
          ga[i * n + j] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = Tensor<T>(b).grads();
      const auto av = a.values();
      for (size_t i = 0; i < m; ++i) {
        for (size_t k = 0; k < n; ++k) {
          const T aik = av[i * n + k];
          const T* grow = &go[i * p];
          T* gbrow = &gb[k * p];
          for (size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: needs rank 2, got " + format_shape(a.shape()));
  }
  const size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out = detail::make_result<T>({n, m}, {a});
  {
    const auto av = a.values();
    auto ov = out.values();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
  }
  detail::attach<T>(out, {a}, [a, m, n](const Tensor<T>& o) {
    auto ga = Tensor<T>(a).grads();
    const auto go = o.grads();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + format_shape(a.shape()) + " vs " +
                     format_shape(b.shape()));
  }
  Tensor<T> out = detail::make_result<T>(a.shape(), {a, b});
  {
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  }
  detail::ensure_finite(out, "add");
  detail::attach<T>(out, {a, b}, [a, b](const Tensor<T>& o) {
    const auto go = o.grads();
    if (a.requires_grad()) {
      auto ga = Tensor<T>(a).grads();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      auto gb = Tensor<T>(b).grads();
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
  return out;
}

// x[n,m] + bias[m], broadcast over rows
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: " + format_shape(x.shape()) + " + " +
                     format_shape(bias.shape()));
  }
  const size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> out = detail::make_result<T>({n, m}, {x, bias});
  {
    const auto xv = x.values();
    const auto bv = bias.values();
    auto ov = out.values();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < m; ++j) ov[i * m + j] = xv[i * m + j] + bv[j];
  }
  detail::ensure_finite(out, "add_bias");
  detail::attach<T>(out, {x, bias}, [x, bias, n, m](const Tensor<T>& o) {
    const auto go = o.grads();
    if (x.requires_grad()) {
      auto gx = Tensor<T>(x).grads();
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (bias.requires_grad()) {
      auto gb = Tensor<T>(bias).grads();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) gb[j] += go[i * m + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = detail::make_result<T>(a.shape(), {a});
  {
    const auto av = a.values();
    auto ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
  }
  detail::ensure_finite(out, "scale");
  detail::attach<T>(out, {a}, [a, c](const Tensor<T>& o) {
    if (!a.requires_grad()) return;
    auto ga = Tensor<T>(a).grads();
    const auto go = o.grads();
    for (size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
  });
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = detail::make_result<T>(x.shape(), {x});
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T{0} ? xv[i] : T{0};
  }
  detail::attach<T>(out, {x}, [x](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const auto xv = x.values();
    const auto go = o.grads();
    for (size_t i = 0; i < go.size(); ++i)
      if (xv[i] > T{0}) gx[i] += go[i];
  });
  return out;
}

// 1/(1+exp(-x)) elementwise, branch-wise for stability
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = detail::make_result<T>(x.shape(), {x});
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) {
      const T v = xv[i];
      if (v >= T{0}) {
        ov[i] = T{1} / (T{1} + std::exp(-v));
      } else {
        const T e = std::exp(v);
        ov[i] = e / (T{1} + e);
      }
    }
  }
  detail::ensure_finite(out, "sigmoid");
  detail::attach<T>(out, {x}, [x](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const auto ov = o.values();
    const auto go = o.grads();
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * ov[i] * (T{1} - ov[i]);
  });
  return out;
}

// Normalizes along the last dimension: out = v / max(||v||_2, eps).
// A zero row stays zero instead of erroring; degraded inputs must not abort.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  const size_t d = detail::last_dim(x, "l2_normalize");
  const size_t rows = x.size() / d;
  Tensor<T> out = detail::make_result<T>(x.shape(), {x});
  std::vector<T> denom(rows);
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (size_t r = 0; r < rows; ++r) {
      const T* v = &xv[r * d];
      T sq{0};
      for (size_t j = 0; j < d; ++j) sq += v[j] * v[j];
      const T norm = std::sqrt(sq);
      const T s = std::max(norm, eps);
      denom[r] = s;
      for (size_t j = 0; j < d; ++j) ov[r * d + j] = v[j] / s;
    }
  }
  detail::ensure_finite(out, "l2_normalize");
  detail::attach<T>(out, {x}, [x, d, rows, eps, denom](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const auto xv = x.values();
    const auto go = o.grads();
    for (size_t r = 0; r < rows; ++r) {
      const T* v = &xv[r * d];
      const T* g = &go[r * d];
      const T s = denom[r];
      if (s > eps) {
        // d(v/|v|)/dv = I/|v| - v v^T / |v|^3
        T dot{0};
        for (size_t j = 0; j < d; ++j) dot += v[j] * g[j];
        const T s3 = s * s * s;
        for (size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] / s - v[j] * dot / s3;
      } else {
        for (size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] / s;
      }
    }
  });
  return out;
}

// Softmax with temperature along the last dimension, max-subtracted.
// out_k = exp(v_k/tau - max_j v_j/tau) / sum(...)
template <typename T>
Tensor<T> softmax_temp(const Tensor<T>& x, T tau) {
  if (!(tau > T{0})) {
    throw ConfigError("softmax_temp: temperature must be > 0, got " +
                      std::to_string(static_cast<double>(tau)));
  }
  const size_t d = detail::last_dim(x, "softmax_temp");
  const size_t rows = x.size() / d;
  Tensor<T> out = detail::make_result<T>(x.shape(), {x});
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (size_t r = 0; r < rows; ++r) {
      const T* v = &xv[r * d];
      T mx = v[0] / tau;
      for (size_t j = 1; j < d; ++j) mx = std::max(mx, v[j] / tau);
      T sum{0};
      for (size_t j = 0; j < d; ++j) {
        const T e = std::exp(v[j] / tau - mx);
        ov[r * d + j] = e;
        sum += e;
      }
      for (size_t j = 0; j < d; ++j) ov[r * d + j] /= sum;
    }
  }
  detail::ensure_finite(out, "softmax_temp");
  detail::attach<T>(out, {x}, [x, d, rows, tau](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const auto ov = o.values();
    const auto go = o.grads();
    for (size_t r = 0; r < rows; ++r) {
      const T* p = &ov[r * d];
      const T* g = &go[r * d];
      T dot{0};
      for (size_t j = 0; j < d; ++j) dot += p[j] * g[j];
      for (size_t j = 0; j < d; ++j) gx[r * d + j] += p[j] * (g[j] - dot) / tau;
    }
  });
  return out;
}

// Gathers rows along the first dimension. Indices are constants; gradients
// scatter-add back into the selected rows only.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<size_t> rows) {
  if (x.rank() < 1) throw ShapeError("gather_rows: needs rank >= 1");
  const size_t n = x.dim(0);
  const size_t row_size = x.size() / std::max<size_t>(n, 1);
  for (auto r : rows) {
    if (r >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(r) +
                       " out of range for " + format_shape(x.shape()));
    }
  }
  std::vector<size_t> out_shape = x.shape();
  out_shape[0] = rows.size();
  Tensor<T> out = detail::make_result<T>(std::move(out_shape), {x});
  {
    const auto xv = x.values();
    auto ov = out.values();
    for (size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(&xv[rows[i] * row_size], row_size, &ov[i * row_size]);
    }
  }
  detail::attach<T>(out, {x}, [x, rows, row_size](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const auto go = o.grads();
    for (size_t i = 0; i < rows.size(); ++i) {
      const T* g = &go[i * row_size];
      T* dst = &gx[rows[i] * row_size];
      for (size_t j = 0; j < row_size; ++j) dst[j] += g[j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<size_t> new_shape) {
  if (Tensor<T>::num_elements(new_shape) != x.size()) {
    throw ShapeError("reshape: " + format_shape(x.shape()) + " -> " +
                     format_shape(new_shape) + " changes element count");
  }
  Tensor<T> out = detail::make_result<T>(std::move(new_shape), {x});
  {
    const auto xv = x.values();
    auto ov = out.values();
    std::copy(xv.begin(), xv.end(), ov.begin());
  }
  detail::attach<T>(out, {x}, [x](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const auto go = o.grads();
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = detail::make_result<T>({1}, {x});
  {
    const auto xv = x.values();
    double acc = 0.0;
    for (auto v : xv) acc += static_cast<double>(v);
    out.values()[0] = static_cast<T>(acc);
  }
  detail::ensure_finite(out, "sum");
  detail::attach<T>(out, {x}, [x](const Tensor<T>& o) {
    if (!x.requires_grad()) return;
    auto gx = Tensor<T>(x).grads();
    const T g = o.grads()[0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

// Mean binary cross-entropy between probabilities p (shape [B] or [B,1]) and
// 0/1 targets. Probabilities are clamped away from {0,1}; the clamped region
// contributes zero gradient.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, std::vector<T> targets) {
  const size_t b = p.size();
  if (b == 0) throw ShapeError("binary_cross_entropy: empty batch");
  if (targets.size() != b) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(b) +
                     " probabilities vs " + std::to_string(targets.size()) +
                     " targets");
  }
  constexpr T lo = static_cast<T>(1e-7);
  const T hi = T{1} - lo;
  Tensor<T> out = detail::make_result<T>({1}, {p});
  {
    const auto pv = p.values();
    double acc = 0.0;
    for (size_t i = 0; i < b; ++i) {
      const T q = std::clamp(pv[i], lo, hi);
      const double y = static_cast<double>(targets[i]);
      acc += -y * std::log(static_cast<double>(q)) -
             (1.0 - y) * std::log(1.0 - static_cast<double>(q));
    }
    out.values()[0] = static_cast<T>(acc / static_cast<double>(b));
  }
  detail::ensure_finite(out, "binary_cross_entropy");
  detail::attach<T>(out, {p}, [p, targets, b, lo, hi](const Tensor<T>& o) {
    if (!p.requires_grad()) return;
    auto gp = Tensor<T>(p).grads();
    const auto pv = p.values();
    const T g = o.grads()[0];
    for (size_t i = 0; i < b; ++i) {
      const T q = pv[i];
      if (q <= lo || q >= hi) continue;
      gp[i] += g * (q - targets[i]) / (q * (T{1} - q) * static_cast<T>(b));
    }
  });
  return out;
}

// Supervised-contrastive loss over a Gram matrix of normalized features.
// gram[i][k] = z_i . z_k, labels in {+1,-1}. For each anchor i with at least
// one same-label partner: L_i = logsumexp_{k != i}(g_ik/tau) - mean_{p in
// P(i)} g_ip/tau. The batch loss averages valid anchors with an additive eps
// guard, so zero valid anchors yields exactly 0.
template <typename T>
Tensor<T> supcon_gram(const Tensor<T>& gram, std::vector<int> labels, T tau, T eps) {
  if (!(tau > T{0})) {
    throw ConfigError("supcon_gram: temperature must be > 0");
  }
  const size_t m = gram.rank() == 2 ? gram.dim(0) : 0;
  if (gram.rank() != 2 || gram.dim(1) != m || labels.size() != m) {
    throw ShapeError("supcon_gram: gram " + format_shape(gram.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  Tensor<T> out = detail::make_result<T>({1}, {gram});
  {
    const auto gv = gram.values();
    double total = 0.0;
    size_t valid = 0;
    for (size_t i = 0; i < m; ++i) {
      size_t n_pos = 0;
      for (size_t k = 0; k < m; ++k)
        if (k != i && labels[k] == labels[i]) ++n_pos;
      if (n_pos == 0) continue;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < m; ++k)
        if (k != i) mx = std::max(mx, static_cast<double>(gv[i * m + k]) / tau);
      double denom = 0.0;
      double pos_sum = 0.0;
      for (size_t k = 0; k < m; ++k) {
        if (k == i) continue;
        const double s = static_cast<double>(gv[i * m + k]) / tau;
        denom += std::exp(s - mx);
        if (labels[k] == labels[i]) pos_sum += s;
      }
      total += (mx + std::log(denom)) - pos_sum / static_cast<double>(n_pos);
      ++valid;
    }
    out.values()[0] =
        static_cast<T>(total / (static_cast<double>(valid) + static_cast<double>(eps)));
  }
  detail::ensure_finite(out, "supcon_gram");
  detail::attach<T>(out, {gram}, [gram, labels, m, tau, eps](const Tensor<T>& o) {
    if (!gram.requires_grad()) return;
    const auto gv = gram.values();
    auto gg = Tensor<T>(gram).grads();
    size_t valid = 0;
    std::vector<size_t> pos_counts(m, 0);
    for (size_t i = 0; i < m; ++i) {
      for (size_t k = 0; k < m; ++k)
        if (k != i && labels[k] == labels[i]) ++pos_counts[i];
      if (pos_counts[i] > 0) ++valid;
    }
    if (valid == 0) return;
    const T coef =
        o.grads()[0] / (static_cast<T>(valid) + eps);
    for (size_t i = 0; i < m; ++i) {
      if (pos_counts[i] == 0) continue;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < m; ++k)
        if (k != i) mx = std::max(mx, static_cast<double>(gv[i * m + k]) / tau);
      double denom = 0.0;
      for (size_t k = 0; k < m; ++k)
        if (k != i) denom += std::exp(static_cast<double>(gv[i * m + k]) / tau - mx);
      for (size_t k = 0; k < m; ++k) {
        if (k == i) continue;
        const double w =
            std::exp(static_cast<double>(gv[i * m + k]) / tau - mx) / denom;
        T g = static_cast<T>(w / static_cast<double>(tau));
        if (labels[k] == labels[i]) {
          g -= T{1} / (static_cast<T>(pos_counts[i]) * tau);
        }
        gg[i * m + k] += coef * g;
      }
    }
  });
  return out;
}

// Runs the recorded closures in reverse topological order, seeding the root
// gradient with 1. The root must be scalar.
template <typename T>
void backward(const Tensor<T>& root) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " +
                     format_shape(root.shape()));
  }
  if (!root.requires_grad()) {
    throw ShapeError("backward: root does not require grad");
  }
  Tensor<T>(root).grads()[0] += T{1};
  if (!root.node()) return;

  std::vector<Tensor<T>> order;
  std::unordered_set<const TapeNode<T>*> seen;
  struct Frame {
    Tensor<T> tensor;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  seen.insert(root.node().get());
  stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& parents = top.tensor.node()->parents;
    if (top.next_parent < parents.size()) {
      const Tensor<T>& p = parents[top.next_parent++];
      if (p.node() && !seen.count(p.node().get())) {
        seen.insert(p.node().get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(top.tensor);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    it->node()->backprop(*it);
  }
}

}  // namespace prodisc
