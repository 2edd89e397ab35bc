#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "evkit/io.hpp"

namespace evkit {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

class ByteWriter
{
public:
  void reserve(std::size_t n) { buf_.reserve(buf_.size() + n); }
  void bytes(const void* p, std::size_t n)
  {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { bytes(&v, sizeof v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void f64s(std::span<const double> v) { bytes(v.data(), v.size_bytes()); }

  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader
{
public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  void bytes(void* out, std::size_t n)
  {
    if (n > b_.size() - pos_)
      throw FormatError("unexpected end of data");
    std::memcpy(out, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  double f64() { double v; bytes(&v, 8); return v; }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  void seek(std::size_t p)
  {
    if (p > b_.size())
      throw FormatError("seek past end of data");
    pos_ = p;
  }

private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

} // namespace evkit
