// SPDX-License-Identifier: Apache-2.0
//
// Point-cloud file I/O.
//
// PCF format: a 16-byte header -- magic "PCF1", little-endian u32 point
// count, and 8 reserved zero bytes -- followed by N x 3 little-endian
// 32-bit floats. An ASCII "x y z" importer is provided for interop, and
// CSV export for plotting. File writes are atomic (temp + rename).
#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pcfuse/common.hpp"
#include "pcfuse/geometry.hpp"

namespace pcfuse {

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u32_le(out, bits);
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = get_u32_le(p);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + tmp.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("rename to '" + path.string() + "' failed: " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  const auto size = is.tellg();
  is.seekg(0);
  std::string bytes(static_cast<std::size_t>(size), '\0');
  is.read(bytes.data(), size);
  if (!is) throw DataError("read failed for '" + path.string() + "'");
  return bytes;
}

template <typename Real>
std::string encode_pcf(const PointCloud<Real>& cloud) {
  cloud.validate();
  std::string out;
  out.reserve(16 + cloud.size() * 12);
  out += "PCF1";
  detail::put_u32_le(out, static_cast<std::uint32_t>(cloud.size()));
  detail::put_u32_le(out, 0);  // reserved
  detail::put_u32_le(out, 0);  // reserved
  for (const auto& p : cloud.points) {
    detail::put_f32_le(out, static_cast<float>(p[0]));
    detail::put_f32_le(out, static_cast<float>(p[1]));
    detail::put_f32_le(out, static_cast<float>(p[2]));
  }
  return out;
}

template <typename Real>
void write_pcf(const std::filesystem::path& path, const PointCloud<Real>& cloud) {
  atomic_write_file(path, encode_pcf(cloud));
}

template <typename Real>
PointCloud<Real> decode_pcf(const std::string& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 16 || bytes.compare(0, 4, "PCF1") != 0)
    throw DataError("'" + origin + "' is not a PCF1 file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t n = detail::get_u32_le(p + 4);
  if (bytes.size() != 16 + static_cast<std::size_t>(n) * 12)
    throw DataError("'" + origin + "': expected " + std::to_string(16 + std::size_t(n) * 12) +
                    " bytes for " + std::to_string(n) + " points, got " +
                    std::to_string(bytes.size()));
  PointCloud<Real> cloud;
  cloud.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const unsigned char* q = p + 16 + i * 12;
    cloud.points.push_back({static_cast<Real>(detail::get_f32_le(q)),
                            static_cast<Real>(detail::get_f32_le(q + 4)),
                            static_cast<Real>(detail::get_f32_le(q + 8))});
  }
  cloud.validate();
  return cloud;
}

template <typename Real>
PointCloud<Real> read_pcf(const std::filesystem::path& path) {
  return decode_pcf<Real>(read_file(path), path.string());
}

// Whitespace-separated "x y z" per line; '#' starts a comment.
template <typename Real>
PointCloud<Real> read_xyz(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  PointCloud<Real> cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    double x, y, z;
    if (std::sscanf(line.c_str(), "%lf %lf %lf", &x, &y, &z) != 3)
      throw DataError("'" + path.string() + "' line " + std::to_string(line_no) +
                      ": expected 'x y z'");
    cloud.points.push_back({static_cast<Real>(x), static_cast<Real>(y), static_cast<Real>(z)});
  }
  cloud.validate();
  return cloud;
}

// Reads either format, keyed on the extension (.pcf binary, otherwise
// ASCII).
template <typename Real>
PointCloud<Real> read_cloud(const std::filesystem::path& path) {
  if (path.extension() == ".pcf") return read_pcf<Real>(path);
  return read_xyz<Real>(path);
}

template <typename Real>
std::string encode_csv(const PointCloud<Real>& cloud) {
  std::string out = "x,y,z\n";
  char buf[96];
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", static_cast<double>(p[0]),
                  static_cast<double>(p[1]), static_cast<double>(p[2]));
    out += buf;
  }
  return out;
}

template <typename Real>
void write_csv(const std::filesystem::path& path, const PointCloud<Real>& cloud) {
  atomic_write_file(path, encode_csv(cloud));
}

}  // namespace pcfuse
