#pragma once

// Counting filter table files.
//
// Layout (all integers little-endian):
//   offset 0  magic      "KCT1"
//   offset 4  version    u8 = 1
//   offset 5  k          u8
//   offset 6  n_tables   u8
//   offset 7  flags      u8 = 0
//   offset 8  sizes      n_tables x u64
//   then the raw counter bytes of table 0, table 1, ...
// File length is exactly 8 + 8 * n_tables + sum(sizes).

#include "kmerflow/error.hpp"
#include "kmerflow/sketch.hpp"

#include <array>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace kmerflow {

inline constexpr std::array<char, 4> kTableMagic = { 'K', 'C', 'T', '1' };
inline constexpr std::uint8_t kTableVersion = 1;

struct TableFileHeader
{
  std::uint8_t version = kTableVersion;
  std::uint8_t k = 0;
  std::uint8_t flags = 0;
  std::vector<std::uint64_t> table_sizes;

  std::size_t header_bytes() const noexcept { return 8 + 8 * table_sizes.size(); }

  std::uint64_t file_bytes() const noexcept
  {
    std::uint64_t total = header_bytes();
    for (auto s : table_sizes) {
      total += s;
    }
    return total;
  }
};

enum class TableFileErrorKind
{
  NotAFilterFile,
  UnsupportedVersion,
  Corrupt,
};

class TableFileError : public Error
{
public:
  TableFileError(TableFileErrorKind kind, const std::string& what)
    : Error(what)
    , kind_(kind)
  {}

  TableFileErrorKind kind() const noexcept { return kind_; }

private:
  TableFileErrorKind kind_;
};

/// Write failure part way through a save; reports what reached the file.
class SaveError : public IoError
{
public:
  SaveError(const std::string& what, std::uint64_t bytes_written)
    : IoError(what + " after " + std::to_string(bytes_written) + " bytes")
    , bytes_written_(bytes_written)
  {}

  std::uint64_t bytes_written() const noexcept { return bytes_written_; }

private:
  std::uint64_t bytes_written_;
};

namespace detail {

inline void
put_u64_le(std::uint8_t* out, std::uint64_t v) noexcept
{
  for (int i = 0; i < 8; ++i) {
    out[i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
}

inline std::uint64_t
get_u64_le(const std::uint8_t* in) noexcept
{
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | in[i];
  }
  return v;
}

struct FileCloser
{
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};

} // namespace detail

inline std::vector<std::uint8_t>
encode_header(const TableFileHeader& header)
{
  std::vector<std::uint8_t> bytes(header.header_bytes());
  std::memcpy(bytes.data(), kTableMagic.data(), kTableMagic.size());
  bytes[4] = header.version;
  bytes[5] = header.k;
  bytes[6] = static_cast<std::uint8_t>(header.table_sizes.size());
  bytes[7] = header.flags;
  for (std::size_t i = 0; i < header.table_sizes.size(); ++i) {
    detail::put_u64_le(bytes.data() + 8 + 8 * i, header.table_sizes[i]);
  }
  return bytes;
}

inline TableFileHeader
header_of(const CountingFilter& filter)
{
  TableFileHeader header;
  header.k = static_cast<std::uint8_t>(filter.k());
  header.table_sizes = filter.table_sizes();
  return header;
}

/// Save header and tables. Requires exclusive access to the filter.
/// Returns the number of bytes written.
inline std::uint64_t
save_filter(const CountingFilter& filter, const std::filesystem::path& path)
{
  std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) {
    throw SaveError("cannot open " + path.string() + " for writing: " + std::strerror(errno), 0);
  }
  std::uint64_t written = 0;
  auto write = [&](const void* data, std::size_t n) {
    const std::size_t w = std::fwrite(data, 1, n, file.get());
    written += w;
    if (w != n) {
      throw SaveError("write to " + path.string() + " failed", written);
    }
  };
  const auto header = encode_header(header_of(filter));
  write(header.data(), header.size());
  for (std::size_t t = 0; t < filter.n_tables(); ++t) {
    const auto table = filter.table(t);
    write(table.data(), table.size());
  }
  if (std::fflush(file.get()) != 0 || std::fclose(file.release()) != 0) {
    throw SaveError("closing " + path.string() + " failed", written);
  }
  return written;
}

/// Stream variant, for writing a table to standard output.
inline std::uint64_t
save_filter(const CountingFilter& filter, std::ostream& out)
{
  std::uint64_t written = 0;
  auto write = [&](const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) {
      throw SaveError("stream write failed", written);
    }
    written += n;
  };
  const auto header = encode_header(header_of(filter));
  write(header.data(), header.size());
  for (std::size_t t = 0; t < filter.n_tables(); ++t) {
    const auto table = filter.table(t);
    write(table.data(), table.size());
  }
  out.flush();
  return written;
}

/// Read and validate just the header (and the file length it implies).
inline TableFileHeader
read_header(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::array<std::uint8_t, 8> fixed{};
  in.read(reinterpret_cast<char*>(fixed.data()), fixed.size());
  if (in.gcount() < 4 || std::memcmp(fixed.data(), kTableMagic.data(), 4) != 0) {
    throw TableFileError(TableFileErrorKind::NotAFilterFile, path.string() + ": not a filter file");
  }
  if (in.gcount() < 8) {
    throw TableFileError(TableFileErrorKind::Corrupt, path.string() + ": truncated/corrupt header");
  }
  TableFileHeader header;
  header.version = fixed[4];
  header.k = fixed[5];
  header.flags = fixed[7];
  if (header.version != kTableVersion) {
    throw TableFileError(TableFileErrorKind::UnsupportedVersion,
                         path.string() + ": unsupported version " + std::to_string(header.version));
  }
  const std::size_t n_tables = fixed[6];
  if (n_tables == 0 || header.k < 1 || header.k > kMaxK || header.flags != 0) {
    throw TableFileError(TableFileErrorKind::Corrupt, path.string() + ": truncated/corrupt header fields");
  }
  std::vector<std::uint8_t> sizes(8 * n_tables);
  in.read(reinterpret_cast<char*>(sizes.data()), static_cast<std::streamsize>(sizes.size()));
  if (static_cast<std::size_t>(in.gcount()) != sizes.size()) {
    throw TableFileError(TableFileErrorKind::Corrupt, path.string() + ": truncated/corrupt table sizes");
  }
  for (std::size_t i = 0; i < n_tables; ++i) {
    const auto size = detail::get_u64_le(sizes.data() + 8 * i);
    if (size == 0) {
      throw TableFileError(TableFileErrorKind::Corrupt, path.string() + ": truncated/corrupt (zero table size)");
    }
    header.table_sizes.push_back(size);
  }
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec || actual != header.file_bytes()) {
    throw TableFileError(TableFileErrorKind::Corrupt,
                         path.string() + ": truncated/corrupt (expected " + std::to_string(header.file_bytes()) +
                           " bytes, found " + std::to_string(ec ? 0 : actual) + ")");
  }
  return header;
}

inline CountingFilter
load_filter(const std::filesystem::path& path, std::size_t batch_size = FilterConfig{}.batch_size)
{
  const TableFileHeader header = read_header(path);
  FilterConfig config;
  config.k = header.k;
  config.batch_size = batch_size;
  CountingFilter filter(config, header.table_sizes);

  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(header.header_bytes()));
  for (std::size_t t = 0; t < filter.n_tables(); ++t) {
    auto table = filter.mutable_table(t);
    in.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(table.size()));
    if (static_cast<std::size_t>(in.gcount()) != table.size()) {
      throw TableFileError(TableFileErrorKind::Corrupt, path.string() + ": truncated/corrupt table data");
    }
  }
  filter.recount_occupancy();
  return filter;
}

} // namespace kmerflow
