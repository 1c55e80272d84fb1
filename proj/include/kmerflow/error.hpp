#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace kmerflow {

/// Base class for every exception thrown by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A configuration value violates a type invariant (k out of range, zero
/// tables, chunk size not block aligned, ...).
class ConfigError : public Error
{
public:
  using Error::Error;
};

/// Open/read/write failure on a file or stream.
class IoError : public Error
{
public:
  using Error::Error;
};

/// The caller broke an API contract (too many consumer threads, stop without
/// start, ...). State is left untouched when this is thrown.
class ContractViolation : public Error
{
public:
  using Error::Error;
};

/// Allocation of counter tables failed.
class ResourceError : public Error
{
public:
  ResourceError(const std::string& what, std::uint64_t requested_bytes)
    : Error(what + " (requested " + std::to_string(requested_bytes) + " bytes)")
    , requested_bytes_(requested_bytes)
  {}

  std::uint64_t requested_bytes() const noexcept { return requested_bytes_; }

private:
  std::uint64_t requested_bytes_;
};

/// Raised by strict k-mer encoding when a byte is not one of A, C, G, T.
class EncodingError : public Error
{
public:
  EncodingError(const std::string& what, std::size_t index)
    : Error(what)
    , index_(index)
  {}

  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

} // namespace kmerflow
