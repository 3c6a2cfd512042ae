#include "prodisc/wire.hpp"

#include <zlib.h>

#include <fstream>

namespace prodisc::wire {

uint32_t crc32_of(const uint8_t* data, size_t size) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

void write_file_with_crc(const std::string& path, const Writer& payload) {
  const auto& buf = payload.buffer();
  const uint32_t crc = crc32_of(buf.data(), buf.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(IoError::Kind::open_failed, path + ": cannot open for writing");
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  uint8_t tail[4];
  for (int i = 0; i < 4; ++i) tail[i] = static_cast<uint8_t>(crc >> (8 * i));
  out.write(reinterpret_cast<const char*>(tail), 4);
  if (!out) {
    throw IoError(IoError::Kind::write_failed, path + ": write failed");
  }
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw IoError(IoError::Kind::open_failed, path + ": cannot open");
  }
  const auto size = static_cast<size_t>(in.tellg());
  in.seekg(0);
  std::vector<uint8_t> buf(size);
  if (size > 0) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) {
      throw IoError(IoError::Kind::open_failed, path + ": read failed");
    }
  }
  return buf;
}

}  // namespace prodisc::wire
