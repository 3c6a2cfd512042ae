#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prodisc/errors.hpp"
#include "prodisc/tensor.hpp"

namespace prodisc {

template <typename T>
struct AdamConfig {
  T lr{static_cast<T>(0.005)};
  T beta1{static_cast<T>(0.9)};
  T beta2{static_cast<T>(0.999)};
  T eps{static_cast<T>(1e-8)};
};

// Standard bias-corrected Adam over a fixed list of parameter tensors. The
// moment buffers follow the parameter order given at construction; that order
// is what the checkpoint serializes.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamConfig<T> cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.size(), T{0});
      v_.emplace_back(p.size(), T{0});
    }
  }

  // Rejects the whole step if any gradient is non-finite, before touching
  // parameters or moments.
  void step() {
    for (const auto& [name, p] : params_) {
      for (const T g : p.grads()) {
        if (!std::isfinite(g)) {
          throw NumericError("adam_step: non-finite gradient in block '" + name +
                             "' at step " + std::to_string(t_ + 1));
        }
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1),
                                      static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2),
                                      static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto data = params_[pi].second.values();
      const auto grad = params_[pi].second.grads();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (size_t i = 0; i < data.size(); ++i) {
        const T g = grad[i];
        m[i] = cfg_.beta1 * m[i] + (T{1} - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (T{1} - cfg_.beta2) * g * g;
        const T m_hat = m[i] / static_cast<T>(bc1);
        const T v_hat = v[i] / static_cast<T>(bc2);
        data[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) Tensor<T>(p).zero_grad();
  }

  uint64_t step_count() const { return t_; }
  const AdamConfig<T>& config() const { return cfg_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  void restore(uint64_t step_count, std::vector<std::vector<T>> m,
               std::vector<std::vector<T>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
      throw ShapeError("adam restore: moment block count mismatch");
    }
    for (size_t i = 0; i < params_.size(); ++i) {
      if (m[i].size() != params_[i].second.size() ||
          v[i].size() != params_[i].second.size()) {
        throw ShapeError("adam restore: moment size mismatch in block '" +
                         params_[i].first + "'");
      }
    }
    t_ = step_count;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamConfig<T> cfg_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  uint64_t t_{0};
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename T>
T clip_grad_norm(std::vector<std::pair<std::string, Tensor<T>>>& params,
                 T max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params) {
    for (const T g : Tensor<T>(p).grads()) sq += static_cast<double>(g) * g;
  }
  const T norm = static_cast<T>(std::sqrt(sq));
  if (max_norm > T{0} && norm > max_norm) {
    const T factor = max_norm / norm;
    for (auto& [name, p] : params) {
      for (T& g : Tensor<T>(p).grads()) g *= factor;
    }
  }
  return norm;
}

}  // namespace prodisc
