#pragma once

// Abundance-driven read preprocessing on top of a CountingFilter:
// digital normalization (keep a read only while the median abundance of its
// k-mers is below a coverage cutoff), low-abundance trimming (cut a read at
// its first k-mer below a cutoff) and k-mer abundance histograms.

#include "kmerflow/error.hpp"
#include "kmerflow/kmer.hpp"
#include "kmerflow/seqio/record.hpp"
#include "kmerflow/sketch.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kmerflow {

class AbundanceCutoff
{
public:
  explicit AbundanceCutoff(unsigned cutoff)
    : cutoff_(cutoff)
  {
    if (cutoff < 1 || cutoff > kCounterMax) {
      throw ConfigError("abundance cutoff must be in [1, 255], got " + std::to_string(cutoff));
    }
  }

  unsigned value() const noexcept { return cutoff_; }

private:
  unsigned cutoff_;
};

struct AbundanceStats
{
  unsigned median = 0; // lower median
  double mean = 0.0;
  double stddev = 0.0; // population
  std::size_t n_kmers = 0;
};

enum class Verdict
{
  Keep,
  Discard,
  Trimmed,
};

enum class DecisionReason
{
  BelowCutoff,      // normalization: median below cutoff, read kept
  Redundant,        // normalization: median reached cutoff
  NoKmers,          // read yields no k-mer
  AboveCutoff,      // trimming: every k-mer at or above cutoff
  LowAbundanceTail, // trimming: cut at first low-abundance k-mer
  LowAbundanceHead, // trimming: first k-mer already low, nothing left
};

struct ReadDecision
{
  Verdict verdict = Verdict::Keep;
  std::optional<std::size_t> trim_length;
  unsigned median_abundance = 0;
  DecisionReason reason = DecisionReason::BelowCutoff;
};

namespace detail {

inline void
check_codec(const CountingFilter& filter, const KmerCodec& codec)
{
  if (codec.k() != filter.k()) {
    throw ConfigError("codec k=" + std::to_string(codec.k()) + " does not match filter k=" +
                      std::to_string(filter.k()));
  }
}

/// Per-instance counts of every k-mer in the sequence, with start positions.
inline void
query_counts(const CountingFilter& filter, std::string_view sequence, std::vector<std::uint8_t>& counts,
             std::vector<std::size_t>* positions = nullptr)
{
  auto& scratch = scratch_buffer();
  scratch.assign(sequence);
  normalize_case(scratch);
  counts.clear();
  if (positions != nullptr) {
    positions->clear();
  }
  KmerScanner<> scanner(scratch, filter.codec());
  KmerCode code;
  while (scanner.next(code)) {
    counts.push_back(filter.get_count(code.canonical));
    if (positions != nullptr) {
      positions->push_back(scanner.position());
    }
  }
}

inline std::optional<AbundanceStats>
summarize(std::vector<std::uint8_t>& counts)
{
  if (counts.empty()) {
    return std::nullopt;
  }
  AbundanceStats stats;
  stats.n_kmers = counts.size();
  double sum = 0.0;
  for (auto c : counts) {
    sum += c;
  }
  stats.mean = sum / static_cast<double>(counts.size());
  double squares = 0.0;
  for (auto c : counts) {
    squares += (c - stats.mean) * (c - stats.mean);
  }
  stats.stddev = std::sqrt(squares / static_cast<double>(counts.size()));
  const auto mid = counts.begin() + static_cast<std::ptrdiff_t>((counts.size() - 1) / 2);
  std::nth_element(counts.begin(), mid, counts.end());
  stats.median = *mid;
  return stats;
}

} // namespace detail

/// Median (lower median for even counts), mean and population standard
/// deviation of the filter counts of every k-mer instance in the read.
/// nullopt when the read yields no k-mer.
inline std::optional<AbundanceStats>
median_kmer_count(const CountingFilter& filter, std::string_view sequence)
{
  thread_local std::vector<std::uint8_t> counts;
  detail::query_counts(filter, sequence, counts);
  return detail::summarize(counts);
}

inline std::optional<AbundanceStats>
median_kmer_count(const CountingFilter& filter, std::string_view sequence, const KmerCodec& codec)
{
  detail::check_codec(filter, codec);
  return median_kmer_count(filter, sequence);
}

/// Online digital normalization. A read whose median k-mer count is below
/// the cutoff is kept and its k-mers are added to the filter; otherwise it is
/// discarded and the filter is left untouched. Order-sensitive, so one
/// normalizer must see the reads in stream order from a single thread.
class DigitalNormalizer
{
public:
  DigitalNormalizer(CountingFilter& filter, AbundanceCutoff cutoff)
    : filter_(&filter)
    , cutoff_(cutoff)
  {}

  ReadDecision process(const SequenceRecord& record)
  {
    ReadDecision decision;
    const auto stats = median_kmer_count(*filter_, record.sequence);
    if (!stats) {
      decision.verdict = Verdict::Discard;
      decision.reason = DecisionReason::NoKmers;
      ++discarded_;
      return decision;
    }
    decision.median_abundance = stats->median;
    if (stats->median < cutoff_.value()) {
      filter_->consume_sequence(record.sequence);
      decision.verdict = Verdict::Keep;
      decision.reason = DecisionReason::BelowCutoff;
      ++kept_;
    } else {
      decision.verdict = Verdict::Discard;
      decision.reason = DecisionReason::Redundant;
      ++discarded_;
    }
    return decision;
  }

  std::uint64_t kept() const noexcept { return kept_; }
  std::uint64_t discarded() const noexcept { return discarded_; }

private:
  CountingFilter* filter_;
  AbundanceCutoff cutoff_;
  std::uint64_t kept_ = 0;
  std::uint64_t discarded_ = 0;
};

/// Trims reads at their first k-mer whose count is below the cutoff. Only
/// reads the filter, so one trimmer may be shared between threads.
class AbundanceTrimmer
{
public:
  AbundanceTrimmer(const CountingFilter& filter, AbundanceCutoff cutoff)
    : filter_(&filter)
    , cutoff_(cutoff)
  {}

  ReadDecision process(const SequenceRecord& record) const
  {
    thread_local std::vector<std::uint8_t> counts;
    thread_local std::vector<std::size_t> positions;
    detail::query_counts(*filter_, record.sequence, counts, &positions);

    ReadDecision decision;
    std::optional<std::size_t> first_low;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] < cutoff_.value()) {
        first_low = positions[i];
        break;
      }
    }
    if (const auto stats = detail::summarize(counts)) {
      decision.median_abundance = stats->median;
    }
    if (!first_low) {
      decision.verdict = Verdict::Keep;
      decision.reason = counts.empty() ? DecisionReason::NoKmers : DecisionReason::AboveCutoff;
      return decision;
    }
    const std::size_t k = filter_->k();
    const std::size_t length = *first_low + k - 1;
    if (length < k) {
      decision.verdict = Verdict::Discard;
      decision.reason = DecisionReason::LowAbundanceHead;
      return decision;
    }
    decision.verdict = Verdict::Trimmed;
    decision.trim_length = length;
    decision.reason = DecisionReason::LowAbundanceTail;
    return decision;
  }

private:
  const CountingFilter* filter_;
  AbundanceCutoff cutoff_;
};

/// The record as it should be emitted after a trimming decision.
inline SequenceRecord
apply_decision(SequenceRecord record, const ReadDecision& decision)
{
  if (decision.verdict == Verdict::Trimmed && decision.trim_length) {
    record.sequence.resize(*decision.trim_length);
    if (record.quality) {
      record.quality->resize(*decision.trim_length);
    }
  }
  return record;
}

template<typename Record>
struct FilterResult
{
  std::vector<Record> records;
  std::vector<ReadDecision> decisions;
};

template<typename Range>
FilterResult<SequenceRecord>
normalize_by_median(const Range& records, CountingFilter& filter, AbundanceCutoff cutoff)
{
  FilterResult<SequenceRecord> result;
  DigitalNormalizer normalizer(filter, cutoff);
  for (const SequenceRecord& record : records) {
    auto decision = normalizer.process(record);
    if (decision.verdict == Verdict::Keep) {
      result.records.push_back(record);
    }
    result.decisions.push_back(decision);
  }
  return result;
}

template<typename Range>
FilterResult<SequenceRecord>
filter_abund(const Range& records, const CountingFilter& filter, AbundanceCutoff cutoff)
{
  FilterResult<SequenceRecord> result;
  const AbundanceTrimmer trimmer(filter, cutoff);
  for (const SequenceRecord& record : records) {
    auto decision = trimmer.process(record);
    if (decision.verdict != Verdict::Discard) {
      result.records.push_back(apply_decision(record, decision));
    }
    result.decisions.push_back(decision);
  }
  return result;
}

using AbundanceHistogram = std::array<std::uint64_t, 256>;

/// Add the queried count of every k-mer instance of `sequence` to `histogram`.
inline void
accumulate_abundance(AbundanceHistogram& histogram, const CountingFilter& filter, std::string_view sequence)
{
  thread_local std::vector<std::uint8_t> counts;
  detail::query_counts(filter, sequence, counts);
  for (auto c : counts) {
    ++histogram[c];
  }
}

template<typename Range>
AbundanceHistogram
abundance_distribution(const Range& records, const CountingFilter& filter)
{
  AbundanceHistogram histogram{};
  for (const SequenceRecord& record : records) {
    accumulate_abundance(histogram, filter, record.sequence);
  }
  return histogram;
}

} // namespace kmerflow
