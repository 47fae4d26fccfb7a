#ifndef GFCA_CHECKPOINT_HPP
#define GFCA_CHECKPOINT_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "gfca/dataset_io.hpp"
#include "gfca/error.hpp"
#include "gfca/numerics.hpp"

namespace gfca {

// Layout, all little-endian:
//   "GFCACKPT" | u32 version | u32 section count
//   per section: u32 name length | name bytes | u64 rows | u64 cols | f64 data (row-major)
inline constexpr std::array<char, 8> kCheckpointMagic = {'G', 'F', 'C', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named matrices, kept in name order so files are byte-stable.
using Checkpoint = std::map<std::string, Matrix>;

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& [name, m] : ckpt) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) io::put_le<double>(os, m.data()[i]);
  }
  if (!os) throw LoadError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw LoadError(path.string() + ": not a checkpoint");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = io::get_le<std::uint32_t>(is);
  Checkpoint out;
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto len = io::get_le<std::uint32_t>(is);
    if (len > 4096) throw LoadError(path.string() + ": corrupt section name");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = io::get_le<std::uint64_t>(is);
    const auto cols = io::get_le<std::uint64_t>(is);
    if (!is || rows > (1u << 30) || cols > (1u << 30)) throw LoadError(path.string() + ": corrupt section '" + name + "'");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = io::get_le<double>(is);
    if (!is) throw LoadError(path.string() + ": truncated section '" + name + "'");
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

inline const Matrix& checkpoint_section(const Checkpoint& ckpt, const std::string& name) {
  auto it = ckpt.find(name);
  if (it == ckpt.end()) throw LoadError("checkpoint has no section '" + name + "'");
  return it->second;
}

}  // namespace gfca

#endif  // GFCA_CHECKPOINT_HPP
