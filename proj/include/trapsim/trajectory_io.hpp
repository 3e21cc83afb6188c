#pragma once

// Trajectory persistence.
//
// Binary layout (all little-endian):
//   char[8]  magic "TRAJ3D\0\0"
//   u32      version (1)
//   u32      column count C
//   u64      row count N
//   f64      sample rate (Hz)
//   u64      noise seed
//   u64      trajectory index
//   C x char[16]  column names, NUL padded
//   C x N x f64   column-major data
// Only recorded columns are written.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trapsim/dynamics.hpp"
#include "trapsim/spectral.hpp"

namespace trapsim {

inline constexpr char kTrajectoryMagic[8] = {'T', 'R', 'A', 'J', '3', 'D', '\0', '\0'};
inline constexpr std::uint32_t kTrajectoryVersion = 1;

namespace io_detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated trajectory file");
  return to_little(v);
}

}  // namespace io_detail

inline void write_trajectory_binary(const std::string& path, const Trajectory3D& tr) {
  using namespace io_detail;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < kColumnCount; ++c) {
    if (!tr.columns[c].empty()) cols.push_back(c);
  }
  const std::uint64_t rows = tr.size();
  for (auto c : cols) {
    if (tr.columns[c].size() != rows) throw std::runtime_error("ragged trajectory columns");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write(kTrajectoryMagic, 8);
  put<std::uint32_t>(os, kTrajectoryVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cols.size()));
  put<std::uint64_t>(os, rows);
  put<double>(os, tr.sample_rate);
  put<std::uint64_t>(os, tr.seed);
  put<std::uint64_t>(os, tr.trajectory);
  for (auto c : cols) {
    char name[16] = {};
    std::strncpy(name, kColumnNames[c], sizeof(name) - 1);
    os.write(name, sizeof(name));
  }
  for (auto c : cols) {
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(tr.columns[c].data()),
               static_cast<std::streamsize>(rows * sizeof(double)));
    } else {
      for (double v : tr.columns[c]) put<double>(os, v);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Trajectory3D read_trajectory_binary(const std::string& path) {
  using namespace io_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kTrajectoryMagic, 8) != 0) {
    throw std::runtime_error(path + ": not a trajectory file");
  }
  if (get<std::uint32_t>(is) != kTrajectoryVersion) {
    throw std::runtime_error(path + ": unsupported trajectory version");
  }
  const auto ncols = get<std::uint32_t>(is);
  const auto rows = get<std::uint64_t>(is);
  Trajectory3D tr;
  tr.sample_rate = get<double>(is);
  tr.seed = get<std::uint64_t>(is);
  tr.trajectory = get<std::uint64_t>(is);
  std::vector<std::size_t> cols;
  for (std::uint32_t k = 0; k < ncols; ++k) {
    char name[17] = {};
    if (!is.read(name, 16)) throw std::runtime_error(path + ": truncated header");
    std::size_t idx = kColumnCount;
    for (std::size_t c = 0; c < kColumnCount; ++c) {
      if (std::string(name) == kColumnNames[c]) idx = c;
    }
    if (idx == kColumnCount) throw std::runtime_error(path + ": unknown column " + name);
    cols.push_back(idx);
  }
  for (auto c : cols) {
    tr.columns[c].resize(rows);
    for (auto& v : tr.columns[c]) v = get<double>(is);
  }
  return tr;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory3D& tr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.precision(17);
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < kColumnCount; ++c) {
    if (!tr.columns[c].empty()) cols.push_back(c);
  }
  for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? "," : "") << kColumnNames[cols[k]];
  os << '\n';
  for (std::size_t i = 0; i < tr.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? "," : "") << tr.columns[cols[k]][i];
    os << '\n';
  }
}

inline void write_spectrum_csv(const std::string& path, const SpectrumResult& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.precision(12);
  os << "frequency_Hz,psd_V2_per_Hz\n";
  for (std::size_t k = 0; k < s.psd.size(); ++k) os << s.frequencies[k] << ',' << s.psd[k] << '\n';
}

}  // namespace trapsim
