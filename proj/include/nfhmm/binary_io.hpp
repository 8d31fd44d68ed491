#pragma once

// Little-endian binary containers: an 8-byte magic tag followed by 64-bit
// integer header fields and 64-bit float payload arrays.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nfhmm/error.hpp"

namespace nfhmm::binary {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

using Magic = std::array<char, 8>;

constexpr Magic make_magic(std::string_view tag) {
  Magic m{};
  for (std::size_t i = 0; i < m.size() && i < tag.size(); ++i) m[i] = tag[i];
  return m;
}

class Writer {
 public:
  Writer(const std::string& path, const Magic& magic) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  }

  void put_u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void put_i64(std::int64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void put_f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }

  void put_f64s(std::span<const double> values) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()));
  }

  void finish() {
    out_.flush();
    if (!out_) throw IoError("write to '" + path_ + "' failed");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  Reader(const std::string& path, const Magic& magic) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path + "'");
    Magic found{};
    in_.read(found.data(), static_cast<std::streamsize>(found.size()));
    if (!in_ || found != magic)
      throw IoError("'" + path + "' is not a " + std::string(magic.data(), magic.size()) +
                    " container");
  }

  std::uint64_t get_u64() {
    std::uint64_t v = 0;
    read_raw(&v, sizeof v);
    return v;
  }
  std::int64_t get_i64() {
    std::int64_t v = 0;
    read_raw(&v, sizeof v);
    return v;
  }

  std::vector<double> get_f64s(std::size_t count) {
    // Guard against corrupt headers asking for absurd allocations.
    if (count > (std::uint64_t{1} << 34)) throw IoError("'" + path_ + "': payload size corrupt");
    std::vector<double> values(count);
    read_raw(values.data(), count * sizeof(double));
    return values;
  }

  void expect_end() {
    in_.peek();
    if (!in_.eof()) throw IoError("'" + path_ + "': trailing bytes after payload");
  }

 private:
  void read_raw(void* dst, std::size_t bytes) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!in_) throw IoError("'" + path_ + "': truncated container");
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace nfhmm::binary
