#pragma once

// The detection head: a prototype interaction layer that injects normality
// context into each instance feature through attention over a small bank of
// learnable prototypes, followed by a two-layer classifier producing
// per-instance anomaly scores.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prodisc/rng.hpp"
#include "prodisc/tensor.hpp"

namespace prodisc {

inline constexpr double kNormEps = 1e-12;

// Learnable key/value prototypes, K of each, D-dimensional.
template <typename T>
struct PrototypeBank {
  Tensor<T> keys;    // K x D
  Tensor<T> values;  // K x D
  T tau_p{static_cast<T>(0.1)};  // attention temperature
};

// Linear fusion applied to the aggregated context before the residual add.
template <typename T>
struct FusionTransform {
  Tensor<T> weight;  // D x D
  Tensor<T> bias;    // D
};

// Two fully connected layers with a rectifier between, sigmoid on top.
template <typename T>
struct ClassifierHead {
  Tensor<T> hidden_weight;  // D x H
  Tensor<T> hidden_bias;    // H
  Tensor<T> out_weight;     // H x 1
  Tensor<T> out_bias;       // 1
};

template <typename T>
struct ModelParams {
  int d{0};
  int k{0};
  int h{0};
  PrototypeBank<T> bank;
  FusionTransform<T> fusion;
  ClassifierHead<T> head;

  // Canonical block order; checkpoints and optimizer state follow it.
  std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
    return {{"proto_keys", bank.keys},         {"proto_values", bank.values},
            {"fusion_weight", fusion.weight},  {"fusion_bias", fusion.bias},
            {"hidden_weight", head.hidden_weight},
            {"hidden_bias", head.hidden_bias}, {"out_weight", head.out_weight},
            {"out_bias", head.out_bias}};
  }

  size_t parameter_count() const {
    const size_t dd = static_cast<size_t>(d);
    const size_t kk = static_cast<size_t>(k);
    const size_t hh = static_cast<size_t>(h);
    return 2 * kk * dd + dd * dd + dd + dd * hh + hh + hh + 1;
  }

  void zero_grad() {
    for (auto& [name, p] : named_params()) Tensor<T>(p).zero_grad();
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.d = d;
    out.k = k;
    out.h = h;
    out.bank.tau_p = static_cast<U>(bank.tau_p);
    const auto convert = [](const Tensor<T>& src) {
      std::vector<U> vals(src.size());
      const auto sv = src.values();
      for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<U>(sv[i]);
      return Tensor<U>::from_values(src.shape(), std::move(vals), true);
    };
    out.bank.keys = convert(bank.keys);
    out.bank.values = convert(bank.values);
    out.fusion.weight = convert(fusion.weight);
    out.fusion.bias = convert(fusion.bias);
    out.head.hidden_weight = convert(head.hidden_weight);
    out.head.hidden_bias = convert(head.hidden_bias);
    out.head.out_weight = convert(head.out_weight);
    out.head.out_bias = convert(head.out_bias);
    return out;
  }
};

// Prototypes are zero-mean Gaussian with std 1/sqrt(D) so initial cosine
// similarities are well spread; linear layers use the fan-in uniform scheme.
// Draws happen in double and are cast, so float and double models initialized
// from the same seed agree up to rounding.
template <typename T>
ModelParams<T> init_params(int d, int k, int h, uint64_t seed,
                           T tau_p = static_cast<T>(0.1)) {
  if (d < 1 || k < 1 || h < 1) {
    throw ConfigError("init_params: d, k, h must all be >= 1");
  }
  Rng rng(seed);
  const auto fill_normal = [&rng](std::vector<size_t> shape, double stddev) {
    std::vector<T> vals(Tensor<T>::num_elements(shape));
    for (auto& v : vals) v = static_cast<T>(rng.normal(0.0, stddev));
    return Tensor<T>::from_values(std::move(shape), std::move(vals), true);
  };
  const auto fill_uniform = [&rng](std::vector<size_t> shape, double bound) {
    std::vector<T> vals(Tensor<T>::num_elements(shape));
    for (auto& v : vals) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_values(std::move(shape), std::move(vals), true);
  };

  const auto du = static_cast<size_t>(d);
  const auto ku = static_cast<size_t>(k);
  const auto hu = static_cast<size_t>(h);
  const double proto_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double fan_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double fan_h = 1.0 / std::sqrt(static_cast<double>(h));

  ModelParams<T> p;
  p.d = d;
  p.k = k;
  p.h = h;
  p.bank.tau_p = tau_p;
  p.bank.keys = fill_normal({ku, du}, proto_std);
  p.bank.values = fill_normal({ku, du}, proto_std);
  p.fusion.weight = fill_uniform({du, du}, fan_d);
  p.fusion.bias = fill_uniform({du}, fan_d);
  p.head.hidden_weight = fill_uniform({du, hu}, fan_d);
  p.head.hidden_bias = fill_uniform({hu}, fan_d);
  p.head.out_weight = fill_uniform({hu, 1}, fan_h);
  p.head.out_bias = fill_uniform({1}, fan_h);
  return p;
}

template <typename T>
struct PilOutput {
  Tensor<T> enhanced;   // B x T x D
  Tensor<T> attention;  // B x T x K, rows sum to 1
};

namespace detail {

template <typename T>
void expect_batch_features(const Tensor<T>& feats, int d, const char* op) {
  if (feats.rank() != 3 || feats.dim(2) != static_cast<size_t>(d)) {
    throw ShapeError(std::string(op) + ": expected [BxTx" + std::to_string(d) +
                     "] features, got " + format_shape(feats.shape()));
  }
}

}  // namespace detail

// Instance features attend over the prototype keys by cosine similarity with
// a temperature softmax; the aggregated prototype values pass through the
// linear fusion and are added back residually. A zero-norm instance gets a
// zero similarity row and therefore uniform attention.
template <typename T>
PilOutput<T> pil_forward(const Tensor<T>& feats, const PrototypeBank<T>& bank,
                         const FusionTransform<T>& fusion) {
  const size_t dd = bank.keys.dim(1);
  detail::expect_batch_features(feats, static_cast<int>(dd), "pil_forward");
  const size_t b = feats.dim(0), t = feats.dim(1);
  const size_t n = b * t;
  const size_t kk = bank.keys.dim(0);
  const T eps = static_cast<T>(kNormEps);

  auto flat = reshape(feats, {n, dd});
  auto inst_dirs = l2_normalize(flat, eps);
  auto key_dirs = l2_normalize(bank.keys, eps);
  auto sim = matmul(inst_dirs, transpose(key_dirs));  // n x K, in [-1, 1]
  auto attn = softmax_temp(sim, bank.tau_p);
  auto context = matmul(attn, bank.values);           // n x D
  auto fused = add_bias(matmul(context, fusion.weight), fusion.bias);
  auto enhanced = add(flat, fused);

  return {reshape(enhanced, {b, t, dd}), reshape(attn, {b, t, kk})};
}

// sigmoid(W2 . relu(W1 . f' + b1) + b2) per instance; scores in (0, 1).
template <typename T>
Tensor<T> score_instances(const Tensor<T>& enhanced, const ClassifierHead<T>& head) {
  const size_t dd = head.hidden_weight.dim(0);
  detail::expect_batch_features(enhanced, static_cast<int>(dd), "score_instances");
  const size_t b = enhanced.dim(0), t = enhanced.dim(1);
  const size_t n = b * t;

  auto flat = reshape(enhanced, {n, dd});
  auto hidden = relu(add_bias(matmul(flat, head.hidden_weight), head.hidden_bias));
  auto logits = add_bias(matmul(hidden, head.out_weight), head.out_bias);
  auto scores = sigmoid(logits);
  return reshape(scores, {b, t, 1});
}

template <typename T>
struct ForwardOutput {
  Tensor<T> enhanced;   // B x T x D (the input itself when the PIL is bypassed)
  Tensor<T> attention;  // B x T x K, undefined when the PIL is bypassed
  Tensor<T> scores;     // B x T x 1
};

template <typename T>
ForwardOutput<T> forward(const Tensor<T>& feats, const ModelParams<T>& params,
                         bool use_pil = true) {
  ForwardOutput<T> out;
  if (use_pil) {
    auto pil = pil_forward(feats, params.bank, params.fusion);
    out.enhanced = pil.enhanced;
    out.attention = pil.attention;
  } else {
    out.enhanced = feats;
  }
  out.scores = score_instances(out.enhanced, params.head);
  return out;
}

}  // namespace prodisc
