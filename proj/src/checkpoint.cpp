#include "prodisc/checkpoint.hpp"

#include <cstring>

#include "prodisc/wire.hpp"

namespace prodisc {

namespace {

constexpr char kCheckpointMagic[5] = "PDVH";
constexpr uint16_t kCheckpointVersion = 1;
constexpr size_t kHeaderBytes = 4 + 2 + 4 + 4 + 4;

std::vector<size_t> block_sizes(size_t d, size_t k, size_t h) {
  return {k * d, k * d, d * d, d, d * h, h, h, 1};
}

size_t param_elements(size_t d, size_t k, size_t h) {
  size_t total = 0;
  for (auto s : block_sizes(d, k, h)) total += s;
  return total;
}

}  // namespace

void write_checkpoint(const std::string& path, const ModelParams<float>& params,
                      const OptimizerSnapshot* optimizer) {
  wire::Writer w;
  w.magic(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(params.d));
  w.u32(static_cast<uint32_t>(params.k));
  w.u32(static_cast<uint32_t>(params.h));
  const auto named = params.named_params();
  for (const auto& [name, tensor] : named) {
    const auto v = tensor.values();
    w.f32_block(v.data(), v.size());
  }
  if (optimizer) {
    if (optimizer->first_moments.size() != named.size() ||
        optimizer->second_moments.size() != named.size()) {
      throw ShapeError("write_checkpoint: optimizer snapshot has wrong block count");
    }
    w.u32(optimizer->next_epoch);
    w.u64(optimizer->step_count);
    for (const auto& m : optimizer->first_moments) w.f32_block(m.data(), m.size());
    for (const auto& v : optimizer->second_moments) w.f32_block(v.data(), v.size());
  }
  wire::write_file_with_crc(path, w);
}

Checkpoint read_checkpoint(const std::string& path) {
  const auto buf = wire::read_file(path);
  if (buf.size() < kHeaderBytes + 4) {
    throw IoError(IoError::Kind::truncated,
                  path + ": too small for a checkpoint (" +
                      std::to_string(buf.size()) + " bytes)");
  }
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw IoError(IoError::Kind::bad_magic, path + ": bad magic, not a checkpoint");
  }
  wire::Reader r(buf.data(), buf.size(), path);
  r.take(4);
  const uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw IoError(IoError::Kind::bad_version,
                  path + ": unsupported version " + std::to_string(version));
  }
  const uint32_t d = r.u32();
  const uint32_t k = r.u32();
  const uint32_t h = r.u32();
  if (d < 1 || k < 1 || h < 1 ||
      static_cast<uint64_t>(d) * k + static_cast<uint64_t>(d) * h > (1ull << 30)) {
    throw IoError(IoError::Kind::truncated,
                  path + ": implausible dimensions D=" + std::to_string(d) +
                      " K=" + std::to_string(k) + " H=" + std::to_string(h));
  }
  const size_t count = param_elements(d, k, h);
  const size_t plain_size = kHeaderBytes + 4 * count + 4;
  const size_t with_optimizer = kHeaderBytes + 4 * count + 4 + 8 + 8 * count + 4;
  if (buf.size() != plain_size && buf.size() != with_optimizer) {
    throw IoError(IoError::Kind::truncated,
                  path + ": size " + std::to_string(buf.size()) +
                      " matches neither a plain (" + std::to_string(plain_size) +
                      ") nor a training (" + std::to_string(with_optimizer) +
                      ") checkpoint");
  }
  const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                              static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
                              static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
                              static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
  if (stored_crc != wire::crc32_of(buf.data(), buf.size() - 4)) {
    throw IoError(IoError::Kind::crc_mismatch, path + ": CRC mismatch");
  }

  Checkpoint ckpt;
  auto& p = ckpt.params;
  p.d = static_cast<int>(d);
  p.k = static_cast<int>(k);
  p.h = static_cast<int>(h);
  const auto sizes = block_sizes(d, k, h);
  const auto read_block = [&r](std::vector<size_t> shape) {
    std::vector<float> vals(Tensor<float>::num_elements(shape));
    r.f32_block(vals.data(), vals.size());
    return Tensor<float>::from_values(std::move(shape), std::move(vals), true);
  };
  p.bank.keys = read_block({k, d});
  p.bank.values = read_block({k, d});
  p.fusion.weight = read_block({d, d});
  p.fusion.bias = read_block({d});
  p.head.hidden_weight = read_block({d, h});
  p.head.hidden_bias = read_block({h});
  p.head.out_weight = read_block({h, 1});
  p.head.out_bias = read_block({1});

  if (buf.size() == with_optimizer) {
    OptimizerSnapshot snap;
    snap.next_epoch = r.u32();
    snap.step_count = r.u64();
    for (auto s : sizes) {
      std::vector<float> m(s);
      r.f32_block(m.data(), s);
      snap.first_moments.push_back(std::move(m));
    }
    for (auto s : sizes) {
      std::vector<float> v(s);
      r.f32_block(v.data(), s);
      snap.second_moments.push_back(std::move(v));
    }
    ckpt.optimizer = std::move(snap);
  }
  return ckpt;
}

}  // namespace prodisc
