#pragma once

// Field serialization. Binary layout: four int32 (n, N, valence, components)
// followed by float64 values in row-major point order, components innermost.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "roughflow/error.hpp"
#include "roughflow/grid.hpp"

namespace roughflow {

/// Writes bytes to path via a sibling temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io_error, "cannot open " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::io_error, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::io_error, "cannot rename " + tmp + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <int Dim>
std::string encode_field(const Field<Dim>& f) {
  const std::int32_t header[4] = {Dim, f.grid().resolution(), static_cast<std::int32_t>(f.valence()), f.components()};
  std::string out(sizeof(header) + sizeof(double) * f.values().size(), '\0');
  std::memcpy(out.data(), header, sizeof(header));
  auto* payload = reinterpret_cast<double*>(out.data() + sizeof(header));
  const std::size_t n = f.points();
  const int c = f.components();
  for (std::size_t p = 0; p < n; ++p)
    for (int k = 0; k < c; ++k) payload[p * c + k] = f(p, k);
  return out;
}

/// Decodes a binary field; the derivative order is not stored and is supplied by the caller.
template <int Dim>
Field<Dim> decode_field(const std::string& bytes, int derivative_order = 2) {
  std::int32_t header[4];
  require(bytes.size() >= sizeof(header), ErrorCode::io_error, "truncated field header");
  std::memcpy(header, bytes.data(), sizeof(header));
  require(header[0] == Dim, ErrorCode::io_error, "field dimension mismatch");
  require(header[2] >= 0 && header[2] <= static_cast<int>(Valence::tensor4), ErrorCode::io_error, "unknown valence");
  const auto valence = static_cast<Valence>(header[2]);
  require(header[3] == component_count<Dim>(valence), ErrorCode::io_error, "component count does not match valence");
  Field<Dim> f(GridSpec<Dim>(header[1], derivative_order), valence);
  const std::size_t expected = sizeof(header) + sizeof(double) * f.values().size();
  require(bytes.size() == expected, ErrorCode::io_error, "field payload size mismatch");
  const auto* payload = reinterpret_cast<const double*>(bytes.data() + sizeof(header));
  const int c = f.components();
  for (std::size_t p = 0; p < f.points(); ++p)
    for (int k = 0; k < c; ++k) f(p, k) = payload[p * c + k];
  return f;
}

template <int Dim>
void save_field(const std::filesystem::path& path, const Field<Dim>& f) {
  write_file_atomic(path, encode_field(f));
}

template <int Dim>
Field<Dim> load_field(const std::filesystem::path& path, int derivative_order = 2) {
  return decode_field<Dim>(read_file(path), derivative_order);
}

/// CSV with one row per point: coordinates then components.
template <int Dim>
std::string field_to_csv(const Field<Dim>& f) {
  require(f.points() <= (1u << 20), ErrorCode::invalid_argument, "CSV export is meant for small grids");
  std::ostringstream out;
  out << std::setprecision(17);
  for (int a = 0; a < Dim; ++a) out << (a ? "," : "") << 'x' << a;
  for (int k = 0; k < f.components(); ++k) out << ",c" << k;
  out << '\n';
  for (std::size_t p = 0; p < f.points(); ++p) {
    const auto x = f.grid().coordinate(p);
    for (int a = 0; a < Dim; ++a) out << (a ? "," : "") << x[a];
    for (int k = 0; k < f.components(); ++k) out << ',' << f(p, k);
    out << '\n';
  }
  return out.str();
}

}  // namespace roughflow
