#pragma once

// Checkpoint layout (little-endian): magic "PDVH", u16 version=1, u32 D,
// u32 K, u32 H, then the eight parameter blocks in canonical order
// (proto keys, proto values, fusion weight, fusion bias, hidden weight,
// hidden bias, out weight, out bias) as float32 row-major. A training
// checkpoint additionally embeds the optimizer state after the parameters:
// u32 next_epoch, u64 step_count, then the first- and second-moment blocks in
// the same order. Everything is covered by a trailing CRC32. Presence of the
// optimizer section is determined by file size; both layouts are valid.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prodisc/model.hpp"

namespace prodisc {

struct OptimizerSnapshot {
  uint32_t next_epoch{0};
  uint64_t step_count{0};
  std::vector<std::vector<float>> first_moments;
  std::vector<std::vector<float>> second_moments;
};

struct Checkpoint {
  ModelParams<float> params;
  std::optional<OptimizerSnapshot> optimizer;
};

void write_checkpoint(const std::string& path, const ModelParams<float>& params,
                      const OptimizerSnapshot* optimizer = nullptr);

// tau_p is not stored in the file; the caller sets it from configuration.
Checkpoint read_checkpoint(const std::string& path);

}  // namespace prodisc
