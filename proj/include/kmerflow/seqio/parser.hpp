#pragma once

// FASTA/FASTQ record parser over a chunk stream.
//
// Records that lie entirely inside one chunk are copied straight from the
// chunk into the SequenceRecord. Records that straddle a chunk boundary are
// first gathered into a carry buffer. Malformed records produce a ParseError
// item, after which parsing resumes at the next plausible record start.

#include "kmerflow/seqio/pump.hpp"
#include "kmerflow/seqio/record.hpp"

#include <cstring>
#include <optional>
#include <string>
#include <string_view>

namespace kmerflow {

namespace detail {

struct Line
{
  std::string_view text; // without '\n' and trailing '\r'
  std::size_t next = 0;  // offset just past the line terminator
};

/// Line starting at `pos`. A final unterminated line only counts once the
/// caller knows no more bytes follow.
inline std::optional<Line>
line_at(std::string_view data, std::size_t pos, bool at_eof) noexcept
{
  if (pos >= data.size()) {
    return std::nullopt;
  }
  const void* nl = std::memchr(data.data() + pos, '\n', data.size() - pos);
  std::size_t end = 0;
  std::size_t next = 0;
  if (nl == nullptr) {
    if (!at_eof) {
      return std::nullopt;
    }
    end = data.size();
    next = data.size();
  } else {
    end = static_cast<std::size_t>(static_cast<const char*>(nl) - data.data());
    next = end + 1;
  }
  std::string_view text = data.substr(pos, end - pos);
  if (!text.empty() && text.back() == '\r') {
    text.remove_suffix(1);
  }
  return Line{ text, next };
}

inline bool
is_blank(std::string_view s) noexcept
{
  for (char c : s) {
    if (c != ' ' && c != '\t' && c != '\r' && c != '\f' && c != '\v') {
      return false;
    }
  }
  return true;
}

/// Split "name description" after the record marker.
inline bool
split_header(std::string_view header, SequenceRecord& record)
{
  const auto sep = header.find_first_of(" \t");
  const std::string_view name = header.substr(0, sep);
  if (name.empty()) {
    return false;
  }
  record.name.assign(name);
  record.description.reset();
  if (sep != std::string_view::npos) {
    const auto rest_start = header.find_first_not_of(" \t", sep);
    if (rest_start != std::string_view::npos) {
      record.description.emplace(header.substr(rest_start));
    }
  }
  return true;
}

enum class StepKind
{
  Record,
  Error,
  Skip,
  NeedMore,
};

struct Step
{
  StepKind kind = StepKind::NeedMore;
  std::size_t consumed = 0;
  ParseErrorKind error = ParseErrorKind::MalformedHeader;
  std::string detail;
};

inline Step
need_more()
{
  return Step{};
}

inline Step
skip(std::size_t n)
{
  return Step{ StepKind::Skip, n, {}, {} };
}

} // namespace detail

class RecordParser
{
public:
  RecordParser(ChunkSource& source, InputFormat format)
    : source_(&source)
    , format_(format)
  {}

  RecordParser(const RecordParser&) = delete;
  RecordParser& operator=(const RecordParser&) = delete;

  /// Next record or error, or nullopt at end of stream. An IoFailure error
  /// ends the stream.
  std::optional<ParseItem> next()
  {
    while (!done_) {
      const bool from_carry = carry_pos_ < carry_.size();
      const std::string_view data = from_carry ? std::string_view(carry_).substr(carry_pos_) : chunk_remainder();
      if (data.empty()) {
        if (source_eof_) {
          done_ = true;
          break;
        }
        if (!fetch()) {
          break;
        }
        continue;
      }
      const bool at_eof = from_carry ? (chunk_pos_ == chunk_.size() && source_eof_) : source_eof_;

      SequenceRecord record;
      const detail::Step step = parse_one(data, at_eof, record);
      if (step.kind == detail::StepKind::NeedMore) {
        if (!gather_more(from_carry)) {
          break;
        }
        continue;
      }

      const std::uint64_t record_offset = offset_;
      consume(from_carry, step.consumed);
      if (step.kind == detail::StepKind::Record) {
        return ParseItem{ std::move(record) };
      }
      if (step.kind == detail::StepKind::Error) {
        return ParseItem{ ParseError{ step.error, record_offset, step.detail } };
      }
    }
    if (pending_io_error_) {
      auto error = std::move(*pending_io_error_);
      pending_io_error_.reset();
      return ParseItem{ std::move(error) };
    }
    return std::nullopt;
  }

  /// Format in effect (resolved once Auto has seen the first marker).
  InputFormat format() const noexcept { return format_; }

private:
  std::string_view chunk_remainder() const noexcept
  {
    return { chunk_.data() + chunk_pos_, chunk_.size() - chunk_pos_ };
  }

  bool fetch()
  {
    try {
      chunk_ = source_->next();
    } catch (const std::exception& e) {
      pending_io_error_ = ParseError{ ParseErrorKind::IoFailure, offset_, e.what() };
      done_ = true;
      chunk_ = {};
      return false;
    }
    chunk_pos_ = 0;
    if (chunk_.empty()) {
      source_eof_ = true;
    }
    return true;
  }

  // Extend the contiguous view with more bytes. Only bytes of records that
  // straddle a chunk boundary travel through the carry buffer.
  bool gather_more(bool from_carry)
  {
    if (!from_carry) {
      carry_.assign(chunk_.data() + chunk_pos_, chunk_.size() - chunk_pos_);
      carry_pos_ = 0;
      chunk_pos_ = chunk_.size();
    } else if (carry_pos_ > 0) {
      carry_.erase(0, carry_pos_);
      carry_pos_ = 0;
    }
    if (chunk_pos_ < chunk_.size()) {
      const std::size_t step = std::max<std::size_t>(carry_.size(), 64 * 1024);
      const std::size_t n = std::min(step, chunk_.size() - chunk_pos_);
      carry_.append(chunk_.data() + chunk_pos_, n);
      chunk_pos_ += n;
      return true;
    }
    if (source_eof_) {
      return true;
    }
    return fetch();
  }

  void consume(bool from_carry, std::size_t n)
  {
    offset_ += n;
    if (from_carry) {
      carry_pos_ += n;
      if (carry_pos_ >= carry_.size()) {
        carry_.clear();
        carry_pos_ = 0;
      }
    } else {
      chunk_pos_ += n;
    }
  }

  detail::Step parse_one(std::string_view data, bool at_eof, SequenceRecord& record)
  {
    if (format_ == InputFormat::Auto) {
      return sniff(data, at_eof);
    }
    return format_ == InputFormat::Fastq ? parse_fastq(data, at_eof, record) : parse_fasta(data, at_eof, record);
  }

  // Decide the format from the first non-whitespace byte.
  detail::Step sniff(std::string_view data, bool at_eof)
  {
    const auto first = data.find_first_not_of(" \t\r\n\f\v");
    if (first == std::string_view::npos) {
      return at_eof ? detail::skip(data.size()) : detail::need_more();
    }
    if (data[first] == '>') {
      format_ = InputFormat::Fasta;
      return detail::skip(first);
    }
    if (data[first] == '@') {
      format_ = InputFormat::Fastq;
      return detail::skip(first);
    }
    // Garbage before any record: report once and skip to the first marker line.
    std::size_t pos = 0;
    while (auto line = detail::line_at(data, pos, at_eof)) {
      if (pos > 0 && !line->text.empty() && (line->text[0] == '>' || line->text[0] == '@')) {
        return error(ParseErrorKind::MalformedHeader, pos, "input does not start with '>' or '@'");
      }
      pos = line->next;
    }
    if (!at_eof) {
      return detail::need_more();
    }
    return error(ParseErrorKind::MalformedHeader, data.size(), "input does not start with '>' or '@'");
  }

  static detail::Step error(ParseErrorKind kind, std::size_t consumed, std::string detail)
  {
    return detail::Step{ detail::StepKind::Error, consumed, kind, std::move(detail) };
  }

  // Next line at or after `pos` that starts a FASTQ record: it begins with
  // '@' and the line two below begins with '+'. Quality lines may begin with
  // '@', hence the lookahead.
  static std::optional<std::size_t> resync_fastq(std::string_view data, std::size_t pos, bool at_eof, bool& need_more)
  {
    need_more = false;
    while (auto line = detail::line_at(data, pos, at_eof)) {
      if (!line->text.empty() && line->text[0] == '@') {
        const auto seq = detail::line_at(data, line->next, at_eof);
        const auto plus = seq ? detail::line_at(data, seq->next, at_eof) : std::nullopt;
        if (!plus) {
          if (!at_eof) {
            need_more = true;
            return std::nullopt;
          }
          return pos;
        }
        if (!plus->text.empty() && plus->text[0] == '+') {
          return pos;
        }
      }
      pos = line->next;
    }
    if (!at_eof) {
      need_more = true;
    }
    return std::nullopt;
  }

  static std::optional<std::size_t> resync_fasta(std::string_view data, std::size_t pos, bool at_eof, bool& need_more)
  {
    need_more = false;
    while (auto line = detail::line_at(data, pos, at_eof)) {
      if (!line->text.empty() && line->text[0] == '>') {
        return pos;
      }
      pos = line->next;
    }
    if (!at_eof) {
      need_more = true;
    }
    return std::nullopt;
  }

  detail::Step fail_fastq(std::string_view data, std::size_t resume_from, bool at_eof, ParseErrorKind kind,
                          std::string detail)
  {
    bool more = false;
    const auto target = resync_fastq(data, resume_from, at_eof, more);
    if (more) {
      return detail::need_more();
    }
    return error(kind, target.value_or(data.size()), std::move(detail));
  }

  detail::Step fail_fasta(std::string_view data, std::size_t resume_from, bool at_eof, ParseErrorKind kind,
                          std::string detail)
  {
    bool more = false;
    const auto target = resync_fasta(data, resume_from, at_eof, more);
    if (more) {
      return detail::need_more();
    }
    return error(kind, target.value_or(data.size()), std::move(detail));
  }

  detail::Step parse_fastq(std::string_view data, bool at_eof, SequenceRecord& record)
  {
    using detail::line_at;
    const auto header = line_at(data, 0, at_eof);
    if (!header) {
      return detail::need_more();
    }
    if (detail::is_blank(header->text)) {
      return detail::skip(header->next);
    }
    if (header->text[0] != '@') {
      return fail_fastq(data, header->next, at_eof, ParseErrorKind::MalformedHeader,
                        "expected '@' record start");
    }
    if (!detail::split_header(header->text.substr(1), record)) {
      return fail_fastq(data, header->next, at_eof, ParseErrorKind::MalformedHeader, "empty record name");
    }
    const auto sequence = line_at(data, header->next, at_eof);
    const auto plus = sequence ? line_at(data, sequence->next, at_eof) : std::nullopt;
    const auto quality = plus ? line_at(data, plus->next, at_eof) : std::nullopt;
    if (!quality && !at_eof) {
      return detail::need_more();
    }
    if (!sequence || !plus || plus->text.empty() || plus->text[0] != '+') {
      return fail_fastq(data, header->next, at_eof, ParseErrorKind::TruncatedRecord,
                        "record '" + record.name + "' ends before its '+' separator");
    }
    if (!quality) {
      return fail_fastq(data, header->next, at_eof, ParseErrorKind::TruncatedRecord,
                        "record '" + record.name + "' has no quality line");
    }
    if (sequence->text.empty()) {
      return fail_fastq(data, header->next, at_eof, ParseErrorKind::EmptySequence,
                        "record '" + record.name + "' has an empty sequence");
    }
    if (sequence->text.size() != quality->text.size()) {
      return fail_fastq(data, header->next, at_eof, ParseErrorKind::QualityLengthMismatch,
                        "record '" + record.name + "': " + std::to_string(quality->text.size()) +
                          " quality bytes vs " + std::to_string(sequence->text.size()) + " bases");
    }
    record.sequence.assign(sequence->text);
    record.quality.emplace(quality->text);
    record.source_format = SequenceFormat::Fastq;
    return detail::Step{ detail::StepKind::Record, quality->next, {}, {} };
  }

  detail::Step parse_fasta(std::string_view data, bool at_eof, SequenceRecord& record)
  {
    using detail::line_at;
    const auto header = line_at(data, 0, at_eof);
    if (!header) {
      return detail::need_more();
    }
    if (detail::is_blank(header->text)) {
      return detail::skip(header->next);
    }
    if (header->text[0] != '>') {
      return fail_fasta(data, header->next, at_eof, ParseErrorKind::MalformedHeader, "expected '>' record start");
    }
    if (!detail::split_header(header->text.substr(1), record)) {
      return fail_fasta(data, header->next, at_eof, ParseErrorKind::MalformedHeader, "empty record name");
    }
    // Find the extent first so the sequence is copied exactly once.
    std::size_t pos = header->next;
    std::size_t length = 0;
    for (;;) {
      const auto line = line_at(data, pos, at_eof);
      if (!line) {
        if (!at_eof) {
          return detail::need_more();
        }
        break;
      }
      if (!line->text.empty() && line->text[0] == '>') {
        break;
      }
      length += line->text.size();
      pos = line->next;
    }
    const std::size_t end = pos;
    if (length == 0) {
      return error(ParseErrorKind::EmptySequence, end, "record '" + record.name + "' has an empty sequence");
    }
    record.sequence.clear();
    record.sequence.reserve(length);
    for (pos = header->next; pos < end;) {
      const auto line = line_at(data, pos, true);
      record.sequence.append(line->text);
      pos = line->next;
    }
    record.quality.reset();
    record.source_format = SequenceFormat::Fasta;
    return detail::Step{ detail::StepKind::Record, end, {}, {} };
  }

  ChunkSource* source_;
  InputFormat format_;
  std::span<const char> chunk_;
  std::size_t chunk_pos_ = 0;
  std::string carry_;
  std::size_t carry_pos_ = 0;
  std::uint64_t offset_ = 0;
  bool source_eof_ = false;
  bool done_ = false;
  std::optional<ParseError> pending_io_error_;
};

} // namespace kmerflow
