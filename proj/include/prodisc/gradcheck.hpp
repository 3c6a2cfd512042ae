#pragma once

// Central-difference verification of the reverse-mode gradients. Runs in
// 64-bit mode only; 32-bit floats do not leave enough headroom for the
// (f(x+h) - f(x-h)) / 2h cancellation.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "prodisc/rng.hpp"
#include "prodisc/tensor.hpp"

namespace prodisc {

struct GradCheckEntry {
  std::string param;
  size_t index{};
  double analytic{};
  double numeric{};
  double rel_err{};
};

struct GradCheckReport {
  bool passed{true};
  double max_rel_err{0.0};
  size_t coords_checked{0};
  std::vector<GradCheckEntry> worst;  // sorted by rel_err, descending

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err
       << " coords=" << coords_checked;
    for (const auto& e : worst) {
      os << "\n  " << e.param << "[" << e.index << "] analytic=" << e.analytic
         << " numeric=" << e.numeric << " rel_err=" << e.rel_err;
    }
    return os.str();
  }
};

// loss_fn must rebuild the graph from the given leaf tensors on every call;
// the harness perturbs the leaves in place between evaluations. With
// max_coords_per_param == 0 every coordinate is probed, otherwise a seeded
// subsample per parameter.
inline GradCheckReport check_gradients(
    const std::function<Tensor<double>()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    double h = 1e-4, double tol = 1e-4, size_t max_coords_per_param = 0,
    uint64_t seed = 0x5eed) {
  for (const auto& [name, p] : params) {
    Tensor<double>(p).zero_grad();
  }
  Tensor<double> loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    const auto g = p.grads();
    analytic.emplace_back(g.begin(), g.end());
  }

  const auto eval = [&loss_fn]() {
    NoGradGuard guard;
    return loss_fn().item();
  };

  GradCheckReport report;
  Rng rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& name = params[pi].first;
    Tensor<double> p = params[pi].second;
    auto data = p.values();

    std::vector<size_t> coords;
    if (max_coords_per_param == 0 || data.size() <= max_coords_per_param) {
      coords.resize(data.size());
      for (size_t i = 0; i < data.size(); ++i) coords[i] = i;
    } else {
      auto perm = rng.permutation(data.size());
      coords.assign(perm.begin(), perm.begin() + max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    for (size_t i : coords) {
      const double orig = data[i];
      data[i] = orig + h;
      const double f_plus = eval();
      data[i] = orig - h;
      const double f_minus = eval();
      data[i] = orig;

      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;

      ++report.coords_checked;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel > tol) report.passed = false;
      report.worst.push_back({name, i, a, numeric, rel});
      std::sort(report.worst.begin(), report.worst.end(),
                [](const auto& x, const auto& y) { return x.rel_err > y.rel_err; });
      if (report.worst.size() > 10) report.worst.resize(10);
    }
  }
  return report;
}

}  // namespace prodisc
