#ifndef GFCA_DATASET_IO_HPP
#define GFCA_DATASET_IO_HPP

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gfca/dataset.hpp"
#include "gfca/error.hpp"

namespace gfca {

enum class FeatureFormat { kCsv, kBinary };

inline FeatureFormat parse_feature_format(std::string_view name) {
  if (name == "csv") return FeatureFormat::kCsv;
  if (name == "bin" || name == "binary" || name == "packed-binary") return FeatureFormat::kBinary;
  throw ParameterError("unknown feature format '" + std::string(name) + "'");
}

/// Picks the format from the file extension: ".csv" is CSV, anything else binary.
inline FeatureFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? FeatureFormat::kCsv : FeatureFormat::kBinary;
}

namespace io {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw DataError("cannot format value");
  return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view s, std::ptrdiff_t row) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw LoadError("cannot parse number '" + std::string(s) + "'", row);
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw LoadError("unexpected end of file");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

inline constexpr std::array<char, 4> kDatasetMagic = {'G', 'F', 'D', '1'};

}  // namespace io

/// CSV: header row, optional leading "label" column, then one column per
/// feature. Values are written in shortest round-trip form.
inline void save_features_csv(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  if (ds.labeled()) os << "label,";
  for (Index j = 0; j < ds.dim(); ++j) os << (j ? "," : "") << 'f' << j;
  os << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    if (ds.labeled()) os << (*ds.labels)[static_cast<std::size_t>(i)] << ',';
    for (Index j = 0; j < ds.dim(); ++j) os << (j ? "," : "") << io::format_double(ds.features(i, j));
    os << '\n';
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

/// Packed little-endian binary: 16-byte header (magic "GFD1", u32 n, u32 d,
/// u32 label flag), then n int32 labels if flagged, then n*d float64 features
/// in row-major order.
inline void save_features_binary(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(io::kDatasetMagic.data(), io::kDatasetMagic.size());
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.size()));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim()));
  io::put_le<std::uint32_t>(os, ds.labeled() ? 1u : 0u);
  if (ds.labeled())
    for (int y : *ds.labels) io::put_le<std::int32_t>(os, y);
  for (Index i = 0; i < ds.features.size(); ++i) io::put_le<double>(os, ds.features.data()[i]);
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline void save_features(const DomainDataset& ds, const std::filesystem::path& path, FeatureFormat format) {
  format == FeatureFormat::kCsv ? save_features_csv(ds, path) : save_features_binary(ds, path);
}

namespace detail {

inline void finish_labels(DomainDataset& ds, int class_count) {
  if (!ds.labels) {
    ds.class_count = class_count;
    return;
  }
  int max_label = -1;
  for (std::size_t i = 0; i < ds.labels->size(); ++i) {
    const int y = (*ds.labels)[i];
    if (y < 0 || (class_count > 0 && y >= class_count))
      throw LoadError("unknown class id " + std::to_string(y), static_cast<std::ptrdiff_t>(i));
    max_label = std::max(max_label, y);
  }
  ds.class_count = class_count > 0 ? class_count : max_label + 1;
}

}  // namespace detail

/// `class_count` <= 0 infers it as max label + 1.
inline DomainDataset load_features_csv(const std::filesystem::path& path, int class_count = 0) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw LoadError("empty file '" + path.string() + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = io::split_csv_line(line);
  const bool has_label = !header.empty() && header.front() == "label";
  const auto d = static_cast<Index>(header.size()) - (has_label ? 1 : 0);
  if (d < 1) throw LoadError("no feature columns in '" + path.string() + "'");

  std::vector<double> values;
  std::vector<int> labels;
  std::ptrdiff_t row = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = io::split_csv_line(line);
    if (static_cast<Index>(cells.size()) != d + (has_label ? 1 : 0))
      throw LoadError("expected " + std::to_string(d + (has_label ? 1 : 0)) + " columns, found " + std::to_string(cells.size()), row);
    std::size_t start = 0;
    if (has_label) {
      const double y = io::parse_double(cells[0], row);
      if (y != std::floor(y)) throw LoadError("non-integer label", row);
      labels.push_back(static_cast<int>(y));
      start = 1;
    }
    for (std::size_t j = start; j < cells.size(); ++j) values.push_back(io::parse_double(cells[j], row));
    ++row;
  }
  DomainDataset ds;
  ds.domain = path.stem().string();
  ds.features = Eigen::Map<Matrix>(values.data(), row, d);
  if (has_label) ds.labels = std::move(labels);
  detail::finish_labels(ds, class_count);
  if (!ds.features.allFinite()) throw LoadError("non-finite feature value in '" + path.string() + "'");
  return ds;
}

inline DomainDataset load_features_binary(const std::filesystem::path& path, int class_count = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open '" + path.string() + "'");
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != io::kDatasetMagic)
    throw LoadError("bad magic in '" + path.string() + "'");
  const auto n = io::get_le<std::uint32_t>(is);
  const auto d = io::get_le<std::uint32_t>(is);
  const auto flag = io::get_le<std::uint32_t>(is);
  if (d == 0) throw LoadError("zero feature dimension");
  if (flag > 1) throw LoadError("bad label flag");
  DomainDataset ds;
  ds.domain = path.stem().string();
  if (flag == 1) {
    ds.labels.emplace(n);
    for (std::uint32_t i = 0; i < n; ++i) (*ds.labels)[i] = io::get_le<std::int32_t>(is);
  }
  ds.features.resize(n, d);
  for (Index i = 0; i < ds.features.size(); ++i) {
    try {
      ds.features.data()[i] = io::get_le<double>(is);
    } catch (const LoadError&) {
      throw LoadError("truncated feature block", static_cast<std::ptrdiff_t>(i / d));
    }
  }
  detail::finish_labels(ds, class_count);
  if (!ds.features.allFinite()) throw LoadError("non-finite feature value in '" + path.string() + "'");
  return ds;
}

inline DomainDataset load_features(const std::filesystem::path& path, FeatureFormat format, int class_count = 0) {
  return format == FeatureFormat::kCsv ? load_features_csv(path, class_count) : load_features_binary(path, class_count);
}

}  // namespace gfca

#endif  // GFCA_DATASET_IO_HPP
