#pragma once

// Training loop: seeded shuffling, padded batches, MIL + weighted contrastive
// loss, Adam, JSONL logging, periodic checkpoints, and the ablation switches.

#include <cstdint>
#include <map>
#include <string>

#include "prodisc/errors.hpp"

namespace prodisc {

// baseline: classifier only; pil: interaction layer, no contrastive loss;
// pide: contrastive loss on raw features; full: both components.
enum class Ablation { baseline, pil, pide, full };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

struct TrainConfig {
  int d{0};  // 0 infers the feature dimension from the corpus
  int k{5};
  int h{256};
  double tau_p{0.1};
  double tau_c{0.1};
  double lambda{5.0};
  double lr{0.005};
  int batch_size{60};
  int epochs{50};
  uint64_t seed{1};
  Ablation ablation{Ablation::full};
  std::string corpus_dir;
  std::string out_dir;
  double clip_grad_norm{0.0};  // 0 = off
  int mil_top_k{1};

  // Applies the recognized keys over the current values; unknown keys throw.
  void apply(std::map<std::string, std::string> kv, const std::string& source);
  void validate() const;
};

struct TrainResult {
  std::string final_checkpoint;
  double final_train_auc;  // NaN when train frame labels are unavailable
  double final_test_auc;   // NaN when there is no usable test split
  int epochs_completed{0};
  uint64_t steps{0};
};

TrainResult train(const TrainConfig& cfg);

// Continues a run from a training checkpoint (optimizer state required) up to
// cfg.epochs. With matching seeds the resumed trajectory is bitwise identical
// to an uninterrupted one.
TrainResult resume(const std::string& checkpoint_path, const TrainConfig& cfg);

}  // namespace prodisc
