#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>

namespace kmerflow {

enum class SequenceFormat
{
  Fasta,
  Fastq,
};

enum class InputFormat
{
  Fasta,
  Fastq,
  Auto,
};

/// One genomic read. The name is kept verbatim (pairing suffixes such as
/// `/1` stay in the name, ` 1:N:0` style suffixes stay in the description).
/// Sequence bytes are stored as read; case folding happens downstream.
struct SequenceRecord
{
  std::string name;
  std::optional<std::string> description;
  std::string sequence;
  std::optional<std::string> quality;
  SequenceFormat source_format = SequenceFormat::Fasta;

  friend bool operator==(const SequenceRecord&, const SequenceRecord&) = default;
};

enum class ParseErrorKind
{
  MalformedHeader,
  TruncatedRecord,
  QualityLengthMismatch,
  EmptySequence,
  IoFailure,
};

inline std::string_view
to_string(ParseErrorKind kind) noexcept
{
  switch (kind) {
    case ParseErrorKind::MalformedHeader: return "MalformedHeader";
    case ParseErrorKind::TruncatedRecord: return "TruncatedRecord";
    case ParseErrorKind::QualityLengthMismatch: return "QualityLengthMismatch";
    case ParseErrorKind::EmptySequence: return "EmptySequence";
    case ParseErrorKind::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

struct ParseError
{
  ParseErrorKind kind = ParseErrorKind::MalformedHeader;
  std::uint64_t byte_offset = 0; // start of the offending record
  std::string detail;

  friend bool operator==(const ParseError&, const ParseError&) = default;
};

inline std::ostream&
operator<<(std::ostream& os, const ParseError& e)
{
  return os << to_string(e.kind) << " at byte " << e.byte_offset << ": " << e.detail;
}

using ParseItem = std::variant<SequenceRecord, ParseError>;

} // namespace kmerflow
