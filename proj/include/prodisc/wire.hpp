#pragma once

// Little-endian buffer encoding with a trailing CRC32, shared by the bag and
// checkpoint file formats. Files are read whole and validated before any
// field is trusted.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "prodisc/errors.hpp"

namespace prodisc::wire {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { append_le(v, 2); }
  void u32(uint32_t v) { append_le(v, 4); }
  void u64(uint64_t v) { append_le(v, 8); }
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  void magic(const char (&m)[5]) {
    buf_.insert(buf_.end(), m, m + 4);
  }
  void f32_block(const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) f32(data[i]);
  }
  void raw(const uint8_t* data, size_t n) { buf_.insert(buf_.end(), data, data + n); }

  const std::vector<uint8_t>& buffer() const { return buf_; }

 private:
  void append_le(uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  Reader(const uint8_t* data, size_t size, std::string source)
      : data_(data), size_(size), source_(std::move(source)) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() { return static_cast<uint16_t>(read_le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(read_le(4)); }
  uint64_t u64() { return read_le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  void f32_block(float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = f32();
  }
  const uint8_t* take(size_t n) {
    if (pos_ + n > size_) {
      throw IoError(IoError::Kind::truncated,
                    source_ + ": truncated (need " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_) + ")");
    }
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  size_t remaining() const { return size_ - pos_; }

 private:
  uint64_t read_le(int bytes) {
    const uint8_t* p = take(static_cast<size_t>(bytes));
    uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_{0};
  std::string source_;
};

uint32_t crc32_of(const uint8_t* data, size_t size);

// Appends crc32(payload) and writes the file in one shot.
void write_file_with_crc(const std::string& path, const Writer& payload);

// Reads the whole file, verifies the expected total size (header fields have
// already promised it) and the trailing CRC, and returns the payload bytes.
std::vector<uint8_t> read_file(const std::string& path);

}  // namespace prodisc::wire
