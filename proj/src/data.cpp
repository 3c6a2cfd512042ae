#include "prodisc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "prodisc/config.hpp"
#include "prodisc/rng.hpp"
#include "prodisc/wire.hpp"

namespace prodisc {

namespace fs = std::filesystem;

namespace {

constexpr char kBagMagic[5] = "PDVB";
constexpr uint16_t kBagVersion = 1;

size_t bag_file_size(uint64_t t, uint64_t d, bool has_labels) {
  // header + features + optional labels + crc
  return 16 + 4 * t * d + (has_labels ? t : 0) + 4;
}

}  // namespace

void FeatureBag::validate() const {
  if (t < 1) throw ShapeError("bag '" + id + "': T must be >= 1");
  if (d < 1) throw ShapeError("bag '" + id + "': D must be >= 1");
  if (features.size() != static_cast<size_t>(t) * d) {
    throw ShapeError("bag '" + id + "': feature buffer holds " +
                     std::to_string(features.size()) + " values, expected " +
                     std::to_string(static_cast<size_t>(t) * d));
  }
  if (bag_label != 0 && bag_label != 1) {
    throw ShapeError("bag '" + id + "': bag label must be 0 or 1");
  }
  if (!frame_labels.empty()) {
    if (frame_labels.size() != t) {
      throw ShapeError("bag '" + id + "': " + std::to_string(frame_labels.size()) +
                       " frame labels for T=" + std::to_string(t));
    }
    bool any = false;
    for (auto l : frame_labels) {
      if (l != 0 && l != 1) {
        throw ShapeError("bag '" + id + "': frame labels must be 0 or 1");
      }
      any = any || l == 1;
    }
    if (any != (bag_label == 1)) {
      throw ShapeError("bag '" + id + "': bag label " + std::to_string(bag_label) +
                       " inconsistent with frame labels");
    }
  }
}

void write_bag(const FeatureBag& bag, const std::string& path) {
  bag.validate();
  wire::Writer w;
  w.magic(kBagMagic);
  w.u16(kBagVersion);
  w.u32(bag.t);
  w.u32(bag.d);
  w.u8(static_cast<uint8_t>(bag.bag_label));
  w.u8(bag.has_frame_labels() ? 1 : 0);
  w.f32_block(bag.features.data(), bag.features.size());
  if (bag.has_frame_labels()) w.raw(bag.frame_labels.data(), bag.frame_labels.size());
  wire::write_file_with_crc(path, w);
}

FeatureBag read_bag(const std::string& path) {
  const auto buf = wire::read_file(path);
  if (buf.size() < 16 + 4) {
    throw IoError(IoError::Kind::truncated,
                  path + ": too small for a bag file (" +
                      std::to_string(buf.size()) + " bytes)");
  }
  if (std::memcmp(buf.data(), kBagMagic, 4) != 0) {
    throw IoError(IoError::Kind::bad_magic, path + ": bad magic, not a bag file");
  }
  wire::Reader r(buf.data(), buf.size(), path);
  r.take(4);
  const uint16_t version = r.u16();
  if (version != kBagVersion) {
    throw IoError(IoError::Kind::bad_version,
                  path + ": unsupported version " + std::to_string(version));
  }
  const uint32_t t = r.u32();
  const uint32_t d = r.u32();
  const uint8_t label = r.u8();
  const uint8_t has_labels = r.u8();
  if (t < 1 || d < 1 || static_cast<uint64_t>(t) * d > (1ull << 28)) {
    throw IoError(IoError::Kind::truncated,
                  path + ": implausible dimensions T=" + std::to_string(t) +
                      " D=" + std::to_string(d));
  }
  if (buf.size() != bag_file_size(t, d, has_labels != 0)) {
    throw IoError(IoError::Kind::truncated,
                  path + ": size " + std::to_string(buf.size()) +
                      " does not match header (expected " +
                      std::to_string(bag_file_size(t, d, has_labels != 0)) + ")");
  }
  const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                              static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
                              static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
                              static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
  const uint32_t actual_crc = wire::crc32_of(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc) {
    throw IoError(IoError::Kind::crc_mismatch, path + ": CRC mismatch");
  }

  FeatureBag bag;
  bag.id = fs::path(path).stem().string();
  bag.t = t;
  bag.d = d;
  bag.bag_label = label;
  bag.features.resize(static_cast<size_t>(t) * d);
  r.f32_block(bag.features.data(), bag.features.size());
  if (has_labels) {
    const uint8_t* p = r.take(t);
    bag.frame_labels.assign(p, p + t);
  }
  bag.validate();
  return bag;
}

void apply_synth_config(SynthConfig& cfg, std::map<std::string, std::string> kv,
                        const std::string& source) {
  ConfigMap cm(std::move(kv), source);
  cfg.d = cm.take_int("d", cfg.d);
  cfg.train_bags_per_class =
      cm.take_int("train_bags_per_class", cfg.train_bags_per_class);
  cfg.test_bags_per_class =
      cm.take_int("test_bags_per_class", cfg.test_bags_per_class);
  cfg.t_min = cm.take_int("t_min", cfg.t_min);
  cfg.t_max = cm.take_int("t_max", cfg.t_max);
  cfg.rho = cm.take_double("rho", cfg.rho);
  cfg.normal_clusters = cm.take_int("normal_clusters", cfg.normal_clusters);
  cfg.delta = cm.take_double("delta", cfg.delta);
  cfg.sigma = cm.take_double("sigma", cfg.sigma);
  cfg.seed = cm.take_u64("seed", cfg.seed);
  cm.finish();
}

void SynthConfig::validate() const {
  if (d < 2) throw ConfigError("synth: d must be >= 2");
  if (train_bags_per_class < 1 || test_bags_per_class < 0) {
    throw ConfigError("synth: bag counts must be positive");
  }
  if (t_min < 1 || t_max < t_min) {
    throw ConfigError("synth: need 1 <= t_min <= t_max");
  }
  if (!(rho > 0.0 && rho <= 0.5)) {
    throw ConfigError("synth: rho must lie in (0, 0.5], got " + std::to_string(rho));
  }
  if (normal_clusters < 1) throw ConfigError("synth: normal_clusters must be >= 1");
  if (delta < 0.0) throw ConfigError("synth: delta must be >= 0");
  if (sigma < 0.0) throw ConfigError("synth: sigma must be >= 0");
}

namespace {

// Sample a unit vector.
std::vector<double> random_direction(Rng& rng, int d) {
  std::vector<double> u(d);
  double sq = 0.0;
  for (auto& v : u) {
    v = rng.normal();
    sq += v * v;
  }
  const double norm = std::sqrt(sq);
  for (auto& v : u) v /= norm > 0 ? norm : 1.0;
  return u;
}

void subtract_component(std::vector<double>& x, const std::vector<double>& u) {
  double dot = 0.0;
  for (size_t i = 0; i < x.size(); ++i) dot += x[i] * u[i];
  for (size_t i = 0; i < x.size(); ++i) x[i] -= dot * u[i];
}

}  // namespace

SynthCorpus generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  // Per-coordinate spreads scale with 1/sqrt(D) so feature norms stay O(sigma)
  // at any dimension; centers sit ~3 sigma apart, noise fills the subspace
  // orthogonal to the anomaly direction.
  const double root_d = std::sqrt(static_cast<double>(cfg.d));
  const auto anomaly_dir = random_direction(rng, cfg.d);
  std::vector<std::vector<double>> centers(cfg.normal_clusters);
  for (auto& c : centers) {
    c.resize(cfg.d);
    for (auto& v : c) v = rng.normal(0.0, 3.0 * std::max(cfg.sigma, 1e-3) / root_d);
    subtract_component(c, anomaly_dir);
  }

  const auto sample_normal = [&](std::vector<float>& out, size_t offset) {
    const auto& center = centers[static_cast<size_t>(
        rng.uniform_int(0, cfg.normal_clusters - 1))];
    std::vector<double> noise(cfg.d);
    for (auto& v : noise) v = rng.normal(0.0, cfg.sigma / root_d);
    subtract_component(noise, anomaly_dir);
    for (int j = 0; j < cfg.d; ++j) {
      out[offset + j] = static_cast<float>(center[j] + noise[j]);
    }
  };

  const auto make_bag = [&](bool abnormal, std::string id) {
    FeatureBag bag;
    bag.id = std::move(id);
    bag.t = static_cast<uint32_t>(rng.uniform_int(cfg.t_min, cfg.t_max));
    bag.d = static_cast<uint32_t>(cfg.d);
    bag.features.resize(static_cast<size_t>(bag.t) * bag.d);
    bag.frame_labels.assign(bag.t, 0);
    for (uint32_t i = 0; i < bag.t; ++i) sample_normal(bag.features, i * bag.d);
    if (abnormal) {
      const auto n_anom = static_cast<uint32_t>(
          std::ceil(cfg.rho * static_cast<double>(bag.t)));
      const auto start = static_cast<uint32_t>(
          rng.uniform_int(0, static_cast<int>(bag.t - n_anom)));
      for (uint32_t i = start; i < start + n_anom; ++i) {
        for (int j = 0; j < cfg.d; ++j) {
          bag.features[i * bag.d + j] +=
              static_cast<float>(cfg.delta * anomaly_dir[j]);
        }
        bag.frame_labels[i] = 1;
      }
      bag.bag_label = 1;
    }
    bag.validate();
    return bag;
  };

  SynthCorpus corpus;
  char name[64];
  for (int i = 0; i < cfg.train_bags_per_class; ++i) {
    std::snprintf(name, sizeof(name), "train_normal_%04d", i);
    corpus.train.push_back(make_bag(false, name));
  }
  for (int i = 0; i < cfg.train_bags_per_class; ++i) {
    std::snprintf(name, sizeof(name), "train_abnormal_%04d", i);
    corpus.train.push_back(make_bag(true, name));
  }
  for (int i = 0; i < cfg.test_bags_per_class; ++i) {
    std::snprintf(name, sizeof(name), "test_normal_%04d", i);
    corpus.test.push_back(make_bag(false, name));
  }
  for (int i = 0; i < cfg.test_bags_per_class; ++i) {
    std::snprintf(name, sizeof(name), "test_abnormal_%04d", i);
    corpus.test.push_back(make_bag(true, name));
  }
  return corpus;
}

namespace {

void write_split(const std::vector<FeatureBag>& bags, const fs::path& root,
                 const std::string& split) {
  std::error_code ec;
  fs::create_directories(root / split, ec);
  if (ec) {
    throw IoError(IoError::Kind::open_failed,
                  (root / split).string() + ": cannot create directory");
  }
  std::ofstream manifest(root / (split + "_manifest.txt"),
                         std::ios::binary | std::ios::trunc);
  if (!manifest) {
    throw IoError(IoError::Kind::open_failed,
                  (root / (split + "_manifest.txt")).string() + ": cannot open");
  }
  for (const auto& bag : bags) {
    const std::string rel = split + "/" + bag.id + ".pdvb";
    write_bag(bag, (root / rel).string());
    manifest << rel << "\n";
  }
}

}  // namespace

void write_corpus(const SynthCorpus& corpus, const std::string& out_dir) {
  const fs::path root(out_dir);
  write_split(corpus.train, root, "train");
  write_split(corpus.test, root, "test");
}

std::vector<std::string> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw IoError(IoError::Kind::open_failed, manifest_path + ": cannot open");
  }
  std::vector<std::string> paths;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) paths.push_back(line);
  }
  return paths;
}

std::vector<FeatureBag> load_bags(const std::string& manifest_path) {
  const auto base = fs::path(manifest_path).parent_path();
  std::vector<FeatureBag> bags;
  for (const auto& rel : read_manifest(manifest_path)) {
    bags.push_back(read_bag((base / rel).string()));
  }
  return bags;
}

}  // namespace prodisc
