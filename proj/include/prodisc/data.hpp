#pragma once

// Feature-bag files, the deterministic synthetic corpus, and batch assembly.
//
// Bag file layout (little-endian): magic "PDVB", u16 version=1, u32 T, u32 D,
// u8 bag_label, u8 has_frame_labels, T*D float32 row-major, then T bytes of
// {0,1} when flagged, then CRC32 of all preceding bytes.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prodisc/errors.hpp"
#include "prodisc/tensor.hpp"

namespace prodisc {

struct FeatureBag {
  std::string id;                     // derived from the filename on read
  uint32_t t{0};
  uint32_t d{0};
  std::vector<float> features;        // T x D row-major
  int bag_label{0};                   // 0 normal, 1 abnormal
  std::vector<uint8_t> frame_labels;  // empty, or one {0,1} per instance

  bool has_frame_labels() const { return !frame_labels.empty(); }

  // T >= 1, sizes agree, and labels are consistent: an abnormal bag has at
  // least one abnormal instance, a normal bag none (when frame labels exist).
  void validate() const;
};

void write_bag(const FeatureBag& bag, const std::string& path);
FeatureBag read_bag(const std::string& path);

struct SynthConfig {
  int d{64};
  int train_bags_per_class{200};
  int test_bags_per_class{50};
  int t_min{40};
  int t_max{80};
  double rho{0.1};         // anomalous fraction of an abnormal bag, (0, 0.5]
  int normal_clusters{1};
  double delta{2.0};       // anomaly offset magnitude (0 gives a null corpus)
  double sigma{1.0};       // noise scale
  uint64_t seed{7};

  void validate() const;
};

// Recognized keys: d, train_bags_per_class, test_bags_per_class, t_min,
// t_max, rho, normal_clusters, delta, sigma, seed. Unknown keys throw.
void apply_synth_config(SynthConfig& cfg, std::map<std::string, std::string> kv,
                        const std::string& source);

struct SynthCorpus {
  std::vector<FeatureBag> train;
  std::vector<FeatureBag> test;
};

// Normal instances sit near one of a few cluster centers with noise confined
// to the subspace orthogonal to a held-out unit direction; anomalous
// instances are normal samples shifted by delta along that direction, placed
// as one contiguous run per abnormal bag. Deterministic given the seed.
SynthCorpus generate_synthetic(const SynthConfig& cfg);

// Writes <out_dir>/{train,test}/<id>.pdvb plus train_manifest.txt and
// test_manifest.txt (one relative path per line, LF-terminated).
void write_corpus(const SynthCorpus& corpus, const std::string& out_dir);

std::vector<std::string> read_manifest(const std::string& manifest_path);

// Loads every bag listed in the manifest, paths resolved against the
// manifest's directory.
std::vector<FeatureBag> load_bags(const std::string& manifest_path);

template <typename T>
struct Batch {
  Tensor<T> features;  // B x T_max x D, zero-padded beyond each bag's length
  std::vector<int> lengths;
  std::vector<int> labels;
  std::vector<std::vector<uint8_t>> frame_labels;  // per bag, may be empty
  std::vector<std::string> ids;

  size_t size() const { return lengths.size(); }
};

// Pads bags to a common length. pad_to == 0 uses the longest bag in the
// batch; an explicit pad_to must cover every bag. Losses and selection
// consume the lengths vector and never read padded positions.
template <typename T = float>
Batch<T> assemble_batch(const std::vector<const FeatureBag*>& bags,
                        size_t pad_to = 0) {
  if (bags.empty()) throw ShapeError("assemble_batch: empty batch");
  const uint32_t d = bags[0]->d;
  size_t t_max = pad_to;
  for (const auto* bag : bags) {
    bag->validate();
    if (bag->d != d) {
      throw ShapeError("assemble_batch: mixed feature dimensions " +
                       std::to_string(d) + " and " + std::to_string(bag->d) +
                       " (bag '" + bag->id + "')");
    }
    if (pad_to == 0) {
      t_max = std::max<size_t>(t_max, bag->t);
    } else if (bag->t > pad_to) {
      throw ShapeError("assemble_batch: pad_to=" + std::to_string(pad_to) +
                       " shorter than bag '" + bag->id + "' with T=" +
                       std::to_string(bag->t));
    }
  }

  Batch<T> batch;
  batch.features = Tensor<T>::zeros({bags.size(), t_max, d});
  auto fv = batch.features.values();
  for (size_t b = 0; b < bags.size(); ++b) {
    const auto& bag = *bags[b];
    for (size_t i = 0; i < bag.features.size(); ++i) {
      fv[b * t_max * d + i] = static_cast<T>(bag.features[i]);
    }
    batch.lengths.push_back(static_cast<int>(bag.t));
    batch.labels.push_back(bag.bag_label);
    batch.frame_labels.push_back(bag.frame_labels);
    batch.ids.push_back(bag.id);
  }
  return batch;
}

template <typename T = float>
Batch<T> assemble_batch(const std::vector<FeatureBag>& bags, size_t pad_to = 0) {
  std::vector<const FeatureBag*> ptrs;
  ptrs.reserve(bags.size());
  for (const auto& bag : bags) ptrs.push_back(&bag);
  return assemble_batch<T>(ptrs, pad_to);
}

}  // namespace prodisc
