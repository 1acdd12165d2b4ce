#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qgrid.hpp"

namespace cwf {

namespace detail {

inline std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    throw ValidationError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

inline std::vector<std::vector<double>> read_csv_rows(std::istream& in, std::size_t columns,
                                                      const std::string& header) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw ValidationError("csv: expected header '" + header + "', got '" + line + "'");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(parse_double(cell, lineno));
    if (row.size() != columns) {
      throw ValidationError("csv line " + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                            " columns");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Grid recovered from sorted unique coordinates of a CSV column.
inline Grid1D grid_from_points(std::vector<double> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 2) throw ValidationError("csv: cannot infer grid from fewer than two points");
  const double dx = (pts.back() - pts.front()) / static_cast<double>(pts.size() - 1);
  return Grid1D(pts.front(), pts.front() + dx * static_cast<double>(pts.size()), pts.size());
}

template <class T>
void put_le(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> b{};
  std::memcpy(b.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  out.write(reinterpret_cast<const char*>(b.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> b{};
  in.read(reinterpret_cast<char*>(b.data()), sizeof(T));
  if (!in) throw ValidationError("binary: truncated input");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  T v;
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

inline constexpr char kMagic[4] = {'C', 'W', 'F', 'B'};
inline constexpr std::uint32_t kBinaryVersion = 1;

inline void put_grid(std::ostream& out, const Grid1D& g) {
  put_le<double>(out, g.min());
  put_le<double>(out, g.max());
  put_le<std::uint64_t>(out, g.size());
}

inline Grid1D get_grid(std::istream& in) {
  const double a = get_le<double>(in);
  const double b = get_le<double>(in);
  const auto n = get_le<std::uint64_t>(in);
  return Grid1D(a, b, static_cast<std::size_t>(n));
}

inline void put_header(std::ostream& out, std::uint32_t ndim, NormTag tag) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kBinaryVersion);
  put_le<std::uint32_t>(out, ndim);
  put_le<std::uint32_t>(out, tag == NormTag::normalized ? 1u : 0u);
}

inline NormTag get_header(std::istream& in, std::uint32_t ndim) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("binary: bad magic");
  if (get_le<std::uint32_t>(in) != kBinaryVersion) throw ValidationError("binary: unsupported version");
  if (get_le<std::uint32_t>(in) != ndim) throw ValidationError("binary: dimension mismatch");
  const auto tag = get_le<std::uint32_t>(in);
  if (tag > 1) throw ValidationError("binary: bad norm tag");
  return tag == 1 ? NormTag::normalized : NormTag::unnormalized;
}

inline std::vector<cplx> get_amplitudes(std::istream& in, std::size_t n) {
  std::vector<cplx> a(n);
  for (auto& z : a) {
    const double re = get_le<double>(in);
    const double im = get_le<double>(in);
    z = {re, im};
  }
  return a;
}

}  // namespace detail

inline void write_csv(std::ostream& out, const WaveFunction1D& psi) {
  out << "x,re,im\n";
  for (std::size_t i = 0; i < psi.size(); ++i) {
    out << detail::fmt_double(psi.grid().point(i)) << ',' << detail::fmt_double(psi[i].real()) << ','
        << detail::fmt_double(psi[i].imag()) << '\n';
  }
}

inline void write_csv(std::ostream& out, const WaveFunction2D& psi) {
  out << "x,y,re,im\n";
  const std::size_t ny = psi.grid_y().size();
  for (std::size_t i = 0; i < psi.grid_x().size(); ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const cplx z = psi.at(i, j);
      out << detail::fmt_double(psi.grid_x().point(i)) << ',' << detail::fmt_double(psi.grid_y().point(j)) << ','
          << detail::fmt_double(z.real()) << ',' << detail::fmt_double(z.imag()) << '\n';
    }
  }
}

/// CSV carries no norm tag; the result is unnormalized.
inline WaveFunction1D read_csv_1d(std::istream& in) {
  auto rows = detail::read_csv_rows(in, 3, "x,re,im");
  std::vector<double> xs;
  for (const auto& r : rows) xs.push_back(r[0]);
  Grid1D g = detail::grid_from_points(xs);
  if (rows.size() != g.size()) throw ValidationError("csv: row count does not match grid");
  std::vector<cplx> a(g.size());
  for (const auto& r : rows) a[g.nearest_index(r[0])] = {r[1], r[2]};
  return WaveFunction1D(g, std::move(a));
}

inline WaveFunction2D read_csv_2d(std::istream& in) {
  auto rows = detail::read_csv_rows(in, 4, "x,y,re,im");
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    xs.push_back(r[0]);
    ys.push_back(r[1]);
  }
  Grid1D gx = detail::grid_from_points(xs), gy = detail::grid_from_points(ys);
  if (rows.size() != gx.size() * gy.size()) throw ValidationError("csv: row count does not match grid");
  std::vector<cplx> a(rows.size());
  for (const auto& r : rows) a[gx.nearest_index(r[0]) * gy.size() + gy.nearest_index(r[1])] = {r[2], r[3]};
  return WaveFunction2D(gx, gy, std::move(a));
}

inline void write_binary(std::ostream& out, const WaveFunction1D& psi) {
  detail::put_header(out, 1, psi.norm_tag());
  detail::put_grid(out, psi.grid());
  for (const auto& z : psi.amplitudes()) {
    detail::put_le<double>(out, z.real());
    detail::put_le<double>(out, z.imag());
  }
}

inline void write_binary(std::ostream& out, const WaveFunction2D& psi) {
  detail::put_header(out, 2, psi.norm_tag());
  detail::put_grid(out, psi.grid_x());
  detail::put_grid(out, psi.grid_y());
  for (const auto& z : psi.amplitudes()) {
    detail::put_le<double>(out, z.real());
    detail::put_le<double>(out, z.imag());
  }
}

inline WaveFunction1D read_binary_1d(std::istream& in) {
  const NormTag tag = detail::get_header(in, 1);
  Grid1D g = detail::get_grid(in);
  return WaveFunction1D(g, detail::get_amplitudes(in, g.size()), tag);
}

inline WaveFunction2D read_binary_2d(std::istream& in) {
  const NormTag tag = detail::get_header(in, 2);
  Grid1D gx = detail::get_grid(in);
  Grid1D gy = detail::get_grid(in);
  return WaveFunction2D(gx, gy, detail::get_amplitudes(in, gx.size() * gy.size()), tag);
}

}  // namespace cwf
