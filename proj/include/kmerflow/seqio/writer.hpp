#pragma once

#include "kmerflow/seqio/record.hpp"

#include <ostream>
#include <string_view>

namespace kmerflow {

/// Writes records back in their source format. FASTA sequences are written
/// on a single line; the FASTQ separator line is a bare '+'.
class RecordWriter
{
public:
  explicit RecordWriter(std::ostream& out)
    : out_(&out)
  {}

  void write(const SequenceRecord& record) { write(record, record.sequence.size()); }

  /// Write the record with its sequence (and quality) cut to `length`.
  void write(const SequenceRecord& record, std::size_t length)
  {
    const bool fastq = record.source_format == SequenceFormat::Fastq;
    std::ostream& out = *out_;
    out.put(fastq ? '@' : '>');
    out << record.name;
    if (record.description) {
      out.put(' ');
      out << *record.description;
    }
    out.put('\n');
    out << std::string_view(record.sequence).substr(0, length) << '\n';
    if (fastq) {
      out << "+\n";
      if (record.quality) {
        out << std::string_view(*record.quality).substr(0, length);
      }
      out.put('\n');
    }
    ++written_;
  }

  std::size_t written() const noexcept { return written_; }

private:
  std::ostream* out_;
  std::size_t written_ = 0;
};

} // namespace kmerflow
