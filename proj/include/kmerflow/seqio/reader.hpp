#pragma once

#include "kmerflow/error.hpp"
#include "kmerflow/seqio/parser.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <thread>
#include <vector>

namespace kmerflow {

/// Key identifying the calling thread, derived from std::thread::id.
inline std::uint64_t
current_thread_key() noexcept
{
  return std::hash<std::thread::id>{}(std::this_thread::get_id());
}

/// Thread-safe record dispenser over a single parser.
///
/// Each thread key owns one segment: a private run of records taken from the
/// parser in file order under a lock. Records are then handed out from the
/// segment without further locking. Every record goes to exactly one thread,
/// and each thread sees its records in file order.
class ConcurrentReader
{
public:
  ConcurrentReader(std::unique_ptr<ChunkSource> source, InputFormat format, std::size_t n_segments,
                   std::size_t records_per_refill = 256)
    : source_(std::move(source))
    , parser_(*source_, format)
    , refill_(std::max<std::size_t>(records_per_refill, 1))
    , segments_(n_segments)
  {
    if (n_segments == 0) {
      throw ConfigError("segment count must be at least 1");
    }
  }

  ConcurrentReader(const ConcurrentReader&) = delete;
  ConcurrentReader& operator=(const ConcurrentReader&) = delete;

  /// Next record for this thread, or nullopt once the input is exhausted.
  /// Throws ContractViolation when more distinct keys call than there are
  /// segments.
  std::optional<SequenceRecord> acquire_record(std::uint64_t thread_key)
  {
    Segment& segment = segment_for(thread_key);
    if (segment.next == segment.records.size()) {
      refill(segment);
      if (segment.records.empty()) {
        return std::nullopt;
      }
    }
    return std::move(segment.records[segment.next++]);
  }

  std::optional<SequenceRecord> acquire_record() { return acquire_record(current_thread_key()); }

  /// Parse errors seen so far, in stream order.
  std::vector<ParseError> errors() const
  {
    std::lock_guard lock(parser_mutex_);
    return errors_;
  }

  std::uint64_t records_parsed() const
  {
    std::lock_guard lock(parser_mutex_);
    return records_parsed_;
  }

  std::size_t n_segments() const noexcept { return segments_.size(); }
  const ChunkSource& source() const noexcept { return *source_; }

private:
  struct Segment
  {
    std::vector<SequenceRecord> records;
    std::size_t next = 0;
  };

  Segment& segment_for(std::uint64_t key)
  {
    {
      std::shared_lock lock(index_mutex_);
      if (auto it = index_.find(key); it != index_.end()) {
        return segments_[it->second];
      }
    }
    std::unique_lock lock(index_mutex_);
    if (auto it = index_.find(key); it != index_.end()) {
      return segments_[it->second];
    }
    if (index_.size() == segments_.size()) {
      throw ContractViolation("reader has " + std::to_string(segments_.size()) +
                              " segments; another distinct thread tried to acquire records");
    }
    const std::size_t slot = index_.size();
    index_.emplace(key, slot);
    return segments_[slot];
  }

  void refill(Segment& segment)
  {
    segment.records.clear();
    segment.next = 0;
    std::lock_guard lock(parser_mutex_);
    while (!exhausted_ && segment.records.size() < refill_) {
      auto item = parser_.next();
      if (!item) {
        exhausted_ = true;
        break;
      }
      if (auto* record = std::get_if<SequenceRecord>(&*item)) {
        segment.records.push_back(std::move(*record));
        ++records_parsed_;
      } else {
        errors_.push_back(std::get<ParseError>(std::move(*item)));
      }
    }
  }

  std::unique_ptr<ChunkSource> source_;
  RecordParser parser_;
  std::size_t refill_;
  mutable std::mutex parser_mutex_;
  bool exhausted_ = false;
  std::uint64_t records_parsed_ = 0;
  std::vector<ParseError> errors_;

  std::shared_mutex index_mutex_;
  std::map<std::uint64_t, std::size_t> index_;
  std::vector<Segment> segments_;
};

} // namespace kmerflow
