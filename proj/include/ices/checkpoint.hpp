#pragma once

// Versioned binary snapshot of a parameter store: magic string, layout
// version, then (name, rows, cols, doubles) records in store order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ices/autodiff.hpp"
#include "ices/errors.hpp"

namespace ices {

inline constexpr char kCkptMagic[9] = "ICESCKPT";  // 8 bytes written, no NUL
inline constexpr std::uint32_t kCkptVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError(std::string("checkpoint: truncated ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= (std::uint32_t)b[i] << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write(kCkptMagic, 8);
  detail::put_u32(os, kCkptVersion);
  detail::put_u32(os, (std::uint32_t)ps.items.size());
  for (const auto& [name, t] : ps.items) {
    detail::put_u32(os, (std::uint32_t)name.size());
    os.write(name.data(), (std::streamsize)name.size());
    detail::put_u32(os, (std::uint32_t)t.rows);
    detail::put_u32(os, (std::uint32_t)t.cols);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             (std::streamsize)(t.data.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

// Loads values into an existing store; every record must match an existing
// tensor's name and shape, in order.
inline void load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw ConfigError("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kCkptVersion)
    throw ConfigError("checkpoint: unsupported layout version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is, "tensor count");
  if (count != ps.items.size())
    throw ConfigError("checkpoint: tensor count mismatch (file " + std::to_string(count) +
                      ", store " + std::to_string(ps.items.size()) + ")");
  for (auto& [name, t] : ps.items) {
    const std::uint32_t len = detail::get_u32(is, "name length");
    std::string fname(len, '\0');
    is.read(fname.data(), len);
    if (!is) throw IoError("checkpoint: truncated name");
    if (fname != name)
      throw ConfigError("checkpoint: tensor name mismatch, expected " + name + " got " + fname);
    const std::uint32_t rows = detail::get_u32(is, "rows");
    const std::uint32_t cols = detail::get_u32(is, "cols");
    if ((int)rows != t.rows || (int)cols != t.cols)
      throw ConfigError("checkpoint: shape mismatch at " + name);
    is.read(reinterpret_cast<char*>(t.data.data()),
            (std::streamsize)(t.data.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint: truncated data at " + name);
  }
}

}  // namespace ices
