#pragma once

// 2-bit k-mer encoding, canonicalization, and rolling decomposition of reads.
//
// Base codes follow A=0, T=1, C=2, G=3, so the complement of a base code is
// `code ^ 1`. The first base of a k-mer occupies the most significant pair.

#include "kmerflow/error.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kmerflow {

inline constexpr unsigned kMaxK = 32;

namespace detail {

inline constexpr std::uint8_t kInvalidBase = 4;

constexpr std::array<std::uint8_t, 256> make_base_table()
{
  std::array<std::uint8_t, 256> table{};
  table.fill(kInvalidBase);
  table['A'] = 0;
  table['T'] = 1;
  table['C'] = 2;
  table['G'] = 3;
  return table;
}

inline constexpr std::array<std::uint8_t, 256> kBaseCode = make_base_table();
inline constexpr std::array<char, 4> kCodeBase = { 'A', 'T', 'C', 'G' };

} // namespace detail

/// Uppercase ASCII letters in place by clearing bit 0x20 of every byte.
/// Non-letters with that bit set are altered too; reads only ever carry
/// letters, so this is applied once per sequence before validation.
inline void
normalize_case(std::span<char> sequence) noexcept
{
  for (char& c : sequence) {
    c = static_cast<char>(static_cast<unsigned char>(c) & 0xdfU);
  }
}

inline std::string
normalized(std::string_view sequence)
{
  std::string out(sequence);
  normalize_case(out);
  return out;
}

/// Expects an already case-normalized byte.
constexpr bool
is_valid_dna(char c) noexcept
{
  return detail::kBaseCode[static_cast<unsigned char>(c)] != detail::kInvalidBase;
}

/// Index of the first byte that is not A/C/G/T, or nullopt if the whole
/// (already case-normalized) sequence is valid.
inline std::optional<std::size_t>
first_invalid(std::string_view sequence) noexcept
{
  const auto it = std::find_if_not(sequence.begin(), sequence.end(),
                                   [](char c) { return is_valid_dna(c); });
  if (it == sequence.end()) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(it - sequence.begin());
}

inline bool
is_valid_dna(std::string_view sequence) noexcept
{
  return !first_invalid(sequence).has_value();
}

/// Base classification policy used by the k-mer scanner. The default one
/// expects normalized input and does a single table lookup per byte.
struct UppercaseBases
{
  static constexpr bool requires_normalized_input = true;

  static bool valid(char c) noexcept { return is_valid_dna(c); }
  static std::uint64_t twobit(char c) noexcept
  {
    return detail::kBaseCode[static_cast<unsigned char>(c)];
  }
};

struct KmerCode
{
  std::uint64_t forward = 0;
  std::uint64_t reverse = 0;
  std::uint64_t canonical = 0;

  friend bool operator==(const KmerCode&, const KmerCode&) = default;
};

/// Fixed-k encoder/decoder. Immutable and freely shared between threads.
class KmerCodec
{
public:
  explicit KmerCodec(unsigned k)
    : k_(k)
  {
    if (k < 1 || k > kMaxK) {
      throw ConfigError("k must be in [1, 32], got " + std::to_string(k));
    }
    forward_mask_ = k == kMaxK ? ~std::uint64_t{ 0 } : (std::uint64_t{ 1 } << (2 * k)) - 1;
    high_shift_ = 2 * (k - 1);
  }

  unsigned k() const noexcept { return k_; }
  std::uint64_t forward_mask() const noexcept { return forward_mask_; }
  unsigned high_shift() const noexcept { return high_shift_; }

  /// Strict encode of exactly k uppercase bases.
  KmerCode encode(std::string_view kmer) const
  {
    if (kmer.size() != k_) {
      throw EncodingError("k-mer length " + std::to_string(kmer.size()) + " does not match k=" +
                            std::to_string(k_),
                          std::min<std::size_t>(kmer.size(), k_));
    }
    KmerCode code;
    for (std::size_t i = 0; i < kmer.size(); ++i) {
      const std::uint64_t b = detail::kBaseCode[static_cast<unsigned char>(kmer[i])];
      if (b == detail::kInvalidBase) {
        throw EncodingError(std::string("invalid base '") + kmer[i] + "' at index " + std::to_string(i), i);
      }
      code.forward = (code.forward << 2) | b;
      code.reverse = (code.reverse >> 2) | ((b ^ 1U) << high_shift_);
    }
    code.canonical = std::min(code.forward, code.reverse);
    return code;
  }

  std::string decode(std::uint64_t code) const
  {
    if ((code & ~forward_mask_) != 0) {
      throw std::out_of_range("code " + std::to_string(code) + " does not fit k=" + std::to_string(k_));
    }
    std::string out(k_, 'A');
    for (std::size_t i = k_; i-- > 0;) {
      out[i] = detail::kCodeBase[code & 3U];
      code >>= 2;
    }
    return out;
  }

private:
  unsigned k_;
  std::uint64_t forward_mask_ = 0;
  unsigned high_shift_ = 0;
};

/// Reverse complement of an uppercase sequence. Bytes outside ACGT are kept
/// in place (mirrored).
inline std::string
reverse_complement(std::string_view sequence)
{
  std::string out(sequence.rbegin(), sequence.rend());
  for (char& c : out) {
    switch (c) {
      case 'A': c = 'T'; break;
      case 'T': c = 'A'; break;
      case 'C': c = 'G'; break;
      case 'G': c = 'C'; break;
      default: break;
    }
  }
  return out;
}

/// Rolling decomposition of a sequence into k-mers. Invalid bytes split the
/// sequence into runs; a run of length L >= k yields L - k + 1 codes.
/// Each step shifts one base into both strands; nothing is re-encoded.
template<typename Bases = UppercaseBases>
class KmerScanner
{
public:
  KmerScanner(std::string_view sequence, const KmerCodec& codec) noexcept
    : sequence_(sequence)
    , k_(codec.k())
    , mask_(codec.forward_mask())
    , high_shift_(codec.high_shift())
  {}

  /// Advance to the next k-mer. Returns false once the sequence is exhausted.
  bool next(KmerCode& out) noexcept
  {
    while (index_ < sequence_.size()) {
      const char c = sequence_[index_++];
      if (!Bases::valid(c)) {
        run_ = 0;
        forward_ = 0;
        reverse_ = 0;
        continue;
      }
      const std::uint64_t b = Bases::twobit(c);
      forward_ = ((forward_ << 2) | b) & mask_;
      reverse_ = (reverse_ >> 2) | ((b ^ 1U) << high_shift_);
      if (++run_ >= k_) {
        out.forward = forward_;
        out.reverse = reverse_;
        out.canonical = std::min(forward_, reverse_);
        return true;
      }
    }
    return false;
  }

  /// Start offset of the k-mer most recently returned by next().
  std::size_t position() const noexcept { return index_ - k_; }

private:
  std::string_view sequence_;
  std::size_t index_ = 0;
  std::size_t run_ = 0;
  unsigned k_;
  std::uint64_t mask_;
  unsigned high_shift_;
  std::uint64_t forward_ = 0;
  std::uint64_t reverse_ = 0;
};

/// Calls fn(const KmerCode&, std::size_t position) for every k-mer.
template<typename Bases = UppercaseBases, typename Fn>
inline std::size_t
for_each_kmer(std::string_view sequence, const KmerCodec& codec, Fn&& fn)
{
  KmerScanner<Bases> scanner(sequence, codec);
  KmerCode code;
  std::size_t n = 0;
  while (scanner.next(code)) {
    fn(code, scanner.position());
    ++n;
  }
  return n;
}

inline std::size_t
count_kmers(std::string_view sequence, const KmerCodec& codec)
{
  return for_each_kmer(sequence, codec, [](const KmerCode&, std::size_t) {});
}

} // namespace kmerflow
