#pragma once

// Training losses: bag-level MIL cross-entropy on each bag's top score, and
// the auxiliary supervised-contrastive loss over each bag's extreme-scoring
// instances (pseudo-labeled +1 for the argmax, -1 for the argmin).

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "prodisc/model.hpp"
#include "prodisc/tensor.hpp"

namespace prodisc {

inline constexpr double kAnchorEps = 1e-8;  // guard on the valid-anchor average

struct ExtremeEntry {
  size_t bag{};
  size_t instance{};
  int pseudo_label{};  // +1 argmax, -1 argmin
};

struct ExtremeSelection {
  std::vector<ExtremeEntry> entries;

  size_t count() const { return entries.size(); }
};

namespace detail {

template <typename T>
void expect_scores(const Tensor<T>& scores, const std::vector<int>& lengths,
                   const char* op) {
  if (scores.rank() != 3 || scores.dim(2) != 1) {
    throw ShapeError(std::string(op) + ": expected [BxTx1] scores, got " +
                     format_shape(scores.shape()));
  }
  if (lengths.size() != scores.dim(0)) {
    throw ShapeError(std::string(op) + ": " + std::to_string(lengths.size()) +
                     " lengths for batch of " + std::to_string(scores.dim(0)));
  }
  const auto t_max = static_cast<int>(scores.dim(1));
  for (size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] < 1 || lengths[b] > t_max) {
      throw ShapeError(std::string(op) + ": bag " + std::to_string(b) +
                       " has invalid length " + std::to_string(lengths[b]));
    }
  }
}

// Indices of the k highest scores within one bag, ties to the lowest index.
template <typename T>
std::vector<size_t> top_k_instances(std::span<const T> scores, size_t k) {
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t take = std::min(k, scores.size());
  std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                    [&scores](size_t a, size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(take);
  return idx;
}

}  // namespace detail

// Binary cross-entropy between each bag's top-score summary and its label,
// averaged over the batch. With top_k == 1 (the default) the summary is the
// bag max and the gradient reaches only the argmax instance; larger top_k
// averages the k highest-scoring instances.
template <typename T>
Tensor<T> mil_loss(const Tensor<T>& scores, const std::vector<int>& bag_labels,
                   const std::vector<int>& lengths, size_t top_k = 1) {
  detail::expect_scores(scores, lengths, "mil_loss");
  const size_t b = scores.dim(0);
  if (b == 0) throw ShapeError("mil_loss: empty batch");
  if (bag_labels.size() != b) {
    throw ShapeError("mil_loss: " + std::to_string(bag_labels.size()) +
                     " labels for batch of " + std::to_string(b));
  }
  if (top_k < 1) throw ConfigError("mil_loss: top_k must be >= 1");

  const size_t t_max = scores.dim(1);
  const auto sv = scores.values();
  auto flat = reshape(scores, {b * t_max, 1});

  std::vector<T> targets(b);
  for (size_t i = 0; i < b; ++i) targets[i] = static_cast<T>(bag_labels[i]);

  if (top_k == 1) {
    std::vector<size_t> argmax_rows(b);
    for (size_t bag = 0; bag < b; ++bag) {
      const auto t_len = static_cast<size_t>(lengths[bag]);
      size_t best = 0;
      for (size_t i = 1; i < t_len; ++i) {
        if (sv[bag * t_max + i] > sv[bag * t_max + best]) best = i;
      }
      argmax_rows[bag] = bag * t_max + best;
    }
    auto bag_scores = gather_rows(flat, argmax_rows);
    return binary_cross_entropy(bag_scores, std::move(targets));
  }

  // Variable counts per bag (k is capped at T_b), so the per-bag mean is a
  // constant averaging matrix applied to the gathered rows.
  std::vector<size_t> rows;
  std::vector<size_t> bag_counts(b);
  for (size_t bag = 0; bag < b; ++bag) {
    auto top = detail::top_k_instances<T>(
        sv.subspan(bag * t_max, static_cast<size_t>(lengths[bag])), top_k);
    bag_counts[bag] = top.size();
    for (auto i : top) rows.push_back(bag * t_max + i);
  }
  auto gathered = gather_rows(flat, rows);  // M x 1
  Tensor<T> averager = Tensor<T>::zeros({b, rows.size()});
  {
    auto av = averager.values();
    size_t offset = 0;
    for (size_t bag = 0; bag < b; ++bag) {
      for (size_t j = 0; j < bag_counts[bag]; ++j) {
        av[bag * rows.size() + offset + j] = T{1} / static_cast<T>(bag_counts[bag]);
      }
      offset += bag_counts[bag];
    }
  }
  auto bag_scores = matmul(averager, gathered);  // B x 1
  return binary_cross_entropy(bag_scores, std::move(targets));
}

// Per bag with more than one instance: argmax and argmin of the scores over
// the valid range, ties to the lowest index. A bag whose argmax and argmin
// coincide contributes nothing. m is carried for forward compatibility; only
// m == 1 is supported.
template <typename T>
ExtremeSelection select_extremes(const Tensor<T>& scores,
                                 const std::vector<int>& lengths, int m = 1) {
  detail::expect_scores(scores, lengths, "select_extremes");
  if (m != 1) {
    throw ConfigError("select_extremes: only m=1 is supported, got " +
                      std::to_string(m));
  }
  const size_t b = scores.dim(0);
  const size_t t_max = scores.dim(1);
  const auto sv = scores.values();

  ExtremeSelection sel;
  for (size_t bag = 0; bag < b; ++bag) {
    const auto t_len = static_cast<size_t>(lengths[bag]);
    if (t_len <= 1) continue;
    size_t hi = 0, lo = 0;
    for (size_t i = 1; i < t_len; ++i) {
      const T s = sv[bag * t_max + i];
      if (s > sv[bag * t_max + hi]) hi = i;
      if (s < sv[bag * t_max + lo]) lo = i;
    }
    if (hi == lo) continue;
    sel.entries.push_back({bag, hi, +1});
    sel.entries.push_back({bag, lo, -1});
  }
  return sel;
}

// Supervised-contrastive loss on the selected enhanced features. Selection
// indices are constants; gradients flow into the gathered features and from
// there back through the model. Returns exactly 0 when fewer than two
// instances were selected.
template <typename T>
Tensor<T> pide_loss(const Tensor<T>& enhanced, const ExtremeSelection& selection,
                    T tau_c) {
  if (selection.count() < 2) return Tensor<T>::scalar(T{0});
  if (enhanced.rank() != 3) {
    throw ShapeError("pide_loss: expected [BxTxD] features, got " +
                     format_shape(enhanced.shape()));
  }
  const size_t b = enhanced.dim(0), t_max = enhanced.dim(1), d = enhanced.dim(2);

  std::vector<size_t> rows;
  std::vector<int> labels;
  rows.reserve(selection.count());
  labels.reserve(selection.count());
  for (const auto& e : selection.entries) {
    if (e.bag >= b || e.instance >= t_max) {
      throw ShapeError("pide_loss: selection (" + std::to_string(e.bag) + ", " +
                       std::to_string(e.instance) + ") outside " +
                       format_shape(enhanced.shape()));
    }
    rows.push_back(e.bag * t_max + e.instance);
    labels.push_back(e.pseudo_label);
  }

  auto flat = reshape(enhanced, {b * t_max, d});
  auto gathered = gather_rows(flat, std::move(rows));
  auto dirs = l2_normalize(gathered, static_cast<T>(kNormEps));
  auto gram = matmul(dirs, transpose(dirs));
  return supcon_gram(gram, std::move(labels), tau_c, static_cast<T>(kAnchorEps));
}

template <typename T>
T total_loss(T l_mil, T l_pide, T lambda) {
  return l_mil + lambda * l_pide;
}

// Scalar view of one training step's losses, for logs.
struct LossBreakdown {
  double l_mil{0.0};
  double l_pide{0.0};
  double lambda{0.0};
  double l_total{0.0};
};

}  // namespace prodisc
