#pragma once

// Little-endian binary file helpers shared by the index/embedding/params
// serializers. Assumes a little-endian host (asserted at build time below).

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "serializers assume a little-endian host");

namespace odqa::detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

inline void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline uint32_t read_u32(std::ifstream& in, const std::string& path) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error(path + ": truncated header");
  }
  return v;
}

inline void write_magic(std::ofstream& out, const char magic[4]) {
  out.write(magic, 4);
}

inline void expect_magic(std::ifstream& in, const char magic[4], const std::string& path) {
  char got[4] = {};
  if (!in.read(got, 4) || std::string(got, 4) != std::string(magic, 4)) {
    throw std::runtime_error(path + ": bad magic, expected " + std::string(magic, 4));
  }
}

inline void write_f32(std::ofstream& out, const float* data, size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

inline void read_f32(std::ifstream& in, float* data, size_t n, const std::string& path) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw std::runtime_error(path + ": truncated payload");
  }
}

}  // namespace odqa::detail
