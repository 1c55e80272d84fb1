#pragma once

// Multi-threaded drivers: T consumer threads pull records from one
// ConcurrentReader and feed a shared filter (count) or private histograms
// (abundance distribution).

#include "kmerflow/filters.hpp"
#include "kmerflow/metrics.hpp"
#include "kmerflow/seqio.hpp"
#include "kmerflow/sketch.hpp"

#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace kmerflow {

struct StreamSummary
{
  std::uint64_t reads = 0;
  std::uint64_t kmers = 0;
  std::uint64_t bytes = 0;
  std::vector<ParseError> errors;
  std::vector<std::string> warnings;
};

namespace detail {

/// Run `work(thread_index)` on `threads` threads; the first exception wins.
inline void
run_workers(unsigned threads, const std::function<void(unsigned)>& work)
{
  if (threads <= 1) {
    work(0);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        work(t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

inline void
finish_summary(StreamSummary& summary, const ConcurrentReader& reader, MetricsAccumulator* metrics)
{
  summary.errors = reader.errors();
  summary.bytes = reader.source().bytes_delivered();
  summary.warnings = reader.source().warnings();
  if (metrics != nullptr) {
    metrics->add(counters::kBytesRead, summary.bytes);
    metrics->add(counters::kReadsParsed, summary.reads);
    metrics->add(counters::kKmersCounted, summary.kmers);
    for (const auto& w : summary.warnings) {
      metrics->warn(w);
    }
  }
}

} // namespace detail

/// Count every k-mer of every record into `filter` using `threads` consumers.
/// The final tables do not depend on the thread count.
template<typename Bases = UppercaseBases>
StreamSummary
count_stream(std::unique_ptr<ChunkSource> source, InputFormat format, CountingFilter& filter, unsigned threads,
             MetricsAccumulator* metrics = nullptr)
{
  threads = std::max(threads, 1U);
  ConcurrentReader reader(std::move(source), format, threads);
  std::atomic<std::uint64_t> reads{ 0 };
  std::atomic<std::uint64_t> kmers{ 0 };
  detail::run_workers(threads, [&](unsigned t) {
    if (metrics != nullptr) {
      metrics->start_timer("count", t);
    }
    std::uint64_t local_reads = 0;
    std::uint64_t local_kmers = 0;
    {
      HashBatch batch(filter);
      while (auto record = reader.acquire_record(t)) {
        local_kmers += batch.template consume<Bases>(record->sequence);
        ++local_reads;
      }
    }
    reads += local_reads;
    kmers += local_kmers;
    if (metrics != nullptr) {
      metrics->stop_timer("count", t);
    }
  });
  StreamSummary summary;
  summary.reads = reads.load();
  summary.kmers = kmers.load();
  detail::finish_summary(summary, reader, metrics);
  return summary;
}

/// Abundance histogram of every k-mer instance, using `threads` consumers
/// with private histograms merged at the end.
inline AbundanceHistogram
abundance_stream(std::unique_ptr<ChunkSource> source, InputFormat format, const CountingFilter& filter,
                 unsigned threads, StreamSummary* summary_out = nullptr, MetricsAccumulator* metrics = nullptr)
{
  threads = std::max(threads, 1U);
  ConcurrentReader reader(std::move(source), format, threads);
  std::vector<AbundanceHistogram> partial(threads, AbundanceHistogram{});
  std::vector<std::uint64_t> reads(threads, 0);
  detail::run_workers(threads, [&](unsigned t) {
    while (auto record = reader.acquire_record(t)) {
      accumulate_abundance(partial[t], filter, record->sequence);
      ++reads[t];
    }
  });
  AbundanceHistogram histogram{};
  StreamSummary summary;
  for (unsigned t = 0; t < threads; ++t) {
    for (std::size_t c = 0; c < histogram.size(); ++c) {
      histogram[c] += partial[t][c];
      summary.kmers += partial[t][c];
    }
    summary.reads += reads[t];
  }
  detail::finish_summary(summary, reader, metrics);
  if (summary_out != nullptr) {
    *summary_out = std::move(summary);
  }
  return histogram;
}

} // namespace kmerflow
