#pragma once

// Counting Bloom filter over canonical k-mer codes.
//
// N tables of saturating 8-bit counters, each with a distinct prime size.
// Table i indexes a code by `code % size_i`; a query returns the minimum of
// the N counters, so counts are never below the truth (capped at 255) and may
// exceed it on collisions.

#include "kmerflow/error.hpp"
#include "kmerflow/kmer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kmerflow {

inline constexpr std::uint8_t kCounterMax = 255;

struct FilterConfig
{
  unsigned k = 20;
  unsigned n_tables = 4;
  std::uint64_t target_table_size = 100'000'000;
  std::size_t batch_size = 512;

  void validate() const
  {
    if (k < 1 || k > kMaxK) {
      throw ConfigError("k must be in [1, 32], got " + std::to_string(k));
    }
    if (n_tables < 1 || n_tables > 255) {
      throw ConfigError("table count must be in [1, 255], got " + std::to_string(n_tables));
    }
    if (target_table_size < 2) {
      throw ConfigError("target table size must be at least 2");
    }
    if (batch_size < 1) {
      throw ConfigError("batch size must be at least 1");
    }
  }
};

inline bool
is_prime(std::uint64_t n) noexcept
{
  if (n < 2) {
    return false;
  }
  if (n < 4) {
    return true;
  }
  if (n % 2 == 0 || n % 3 == 0) {
    return false;
  }
  for (std::uint64_t d = 5; d <= n / d; d += 6) {
    if (n % d == 0 || n % (d + 2) == 0) {
      return false;
    }
  }
  return true;
}

/// The `count` largest distinct primes <= target, in descending order.
inline std::vector<std::uint64_t>
largest_primes_at_most(std::uint64_t target, unsigned count)
{
  std::vector<std::uint64_t> primes;
  primes.reserve(count);
  for (std::uint64_t n = target; n >= 2 && primes.size() < count; --n) {
    if (is_prime(n)) {
      primes.push_back(n);
    }
  }
  if (primes.size() < count) {
    throw ConfigError("only " + std::to_string(primes.size()) + " primes <= " + std::to_string(target) +
                      ", need " + std::to_string(count));
  }
  return primes;
}

namespace detail {

struct FreeDeleter
{
  void operator()(std::uint8_t* p) const noexcept { std::free(p); }
};

using TableStorage = std::unique_ptr<std::uint8_t[], FreeDeleter>;

struct alignas(64) PaddedCount
{
  std::atomic<std::uint64_t> value{ 0 };
};

/// Indivisible saturating add. Sets `was_zero` when this call took the slot
/// from 0 to 1.
inline std::uint8_t
saturating_increment(std::uint8_t& slot, bool& was_zero) noexcept
{
  std::atomic_ref<std::uint8_t> ref(slot);
  std::uint8_t current = ref.load(std::memory_order_relaxed);
  do {
    if (current == kCounterMax) {
      was_zero = false;
      return kCounterMax;
    }
  } while (!ref.compare_exchange_weak(current, static_cast<std::uint8_t>(current + 1),
                                      std::memory_order_relaxed, std::memory_order_relaxed));
  was_zero = current == 0;
  return static_cast<std::uint8_t>(current + 1);
}

inline std::string&
scratch_buffer()
{
  thread_local std::string buffer;
  return buffer;
}

} // namespace detail

class CountingFilter
{
public:
  /// Allocate zeroed tables sized as the n largest primes <= target.
  explicit CountingFilter(const FilterConfig& config)
    : CountingFilter(config, (config.validate(), largest_primes_at_most(config.target_table_size, config.n_tables)))
  {}

  /// Tables with explicit sizes (used when loading a saved filter).
  CountingFilter(const FilterConfig& config, std::vector<std::uint64_t> table_sizes)
    : config_(config)
    , codec_(config.k)
    , sizes_(std::move(table_sizes))
  {
    config_.n_tables = static_cast<unsigned>(sizes_.size());
    if (!sizes_.empty()) {
      config_.target_table_size = *std::max_element(sizes_.begin(), sizes_.end());
    }
    config_.validate();
    std::uint64_t total = 0;
    for (auto size : sizes_) {
      if (size == 0) {
        throw ConfigError("table size must be positive");
      }
      total += size;
    }
    tables_.reserve(sizes_.size());
    for (auto size : sizes_) {
      auto* memory = static_cast<std::uint8_t*>(std::calloc(size, 1));
      if (memory == nullptr) {
        throw ResourceError("cannot allocate counting filter tables", total);
      }
      tables_.emplace_back(memory);
    }
    occupied_ = std::make_unique<detail::PaddedCount[]>(sizes_.size());
  }

  CountingFilter(const CountingFilter&) = delete;
  CountingFilter& operator=(const CountingFilter&) = delete;
  CountingFilter(CountingFilter&&) noexcept = default;
  CountingFilter& operator=(CountingFilter&&) noexcept = default;

  const FilterConfig& config() const noexcept { return config_; }
  const KmerCodec& codec() const noexcept { return codec_; }
  unsigned k() const noexcept { return config_.k; }
  std::size_t n_tables() const noexcept { return sizes_.size(); }
  const std::vector<std::uint64_t>& table_sizes() const noexcept { return sizes_; }

  std::uint64_t total_bytes() const noexcept
  {
    std::uint64_t total = 0;
    for (auto s : sizes_) {
      total += s;
    }
    return total;
  }

  /// Saturating increment in every table; returns the post-update minimum.
  /// Safe to call concurrently from any number of threads.
  std::uint8_t increment(std::uint64_t code) noexcept
  {
    std::uint8_t result = kCounterMax;
    for (std::size_t t = 0; t < sizes_.size(); ++t) {
      result = std::min(result, increment_in_table(t, code));
    }
    return result;
  }

  std::uint8_t get_count(std::uint64_t code) const noexcept
  {
    std::uint8_t result = kCounterMax;
    for (std::size_t t = 0; t < sizes_.size(); ++t) {
      std::atomic_ref<std::uint8_t> ref(tables_[t][code % sizes_[t]]);
      result = std::min(result, ref.load(std::memory_order_relaxed));
    }
    return result;
  }

  std::uint8_t increment_in_table(std::size_t table, std::uint64_t code) noexcept
  {
    bool was_zero = false;
    const auto value = detail::saturating_increment(tables_[table][code % sizes_[table]], was_zero);
    if (was_zero) {
      occupied_[table].value.fetch_add(1, std::memory_order_relaxed);
    }
    return value;
  }

  /// Count every k-mer of a raw (any case) sequence. Returns the number of
  /// k-mer instances counted.
  template<typename Bases = UppercaseBases>
  std::size_t consume_sequence(std::string_view sequence);

  /// Probability that a never-inserted code reports a nonzero count:
  /// the product of per-table slot occupancy.
  double false_positive_rate() const noexcept
  {
    double rate = 1.0;
    for (std::size_t t = 0; t < sizes_.size(); ++t) {
      rate *= static_cast<double>(occupied(t)) / static_cast<double>(sizes_[t]);
    }
    return rate;
  }

  std::uint64_t occupied(std::size_t table) const noexcept
  {
    return occupied_[table].value.load(std::memory_order_relaxed);
  }

  std::span<const std::uint8_t> table(std::size_t i) const noexcept { return { tables_[i].get(), sizes_[i] }; }

  /// Raw write access for bulk loading. Call recount_occupancy() afterwards.
  std::span<std::uint8_t> mutable_table(std::size_t i) noexcept { return { tables_[i].get(), sizes_[i] }; }

  void recount_occupancy() noexcept
  {
    for (std::size_t t = 0; t < sizes_.size(); ++t) {
      const auto view = table(t);
      const auto n = static_cast<std::uint64_t>(
        view.size() - static_cast<std::size_t>(std::count(view.begin(), view.end(), std::uint8_t{ 0 })));
      occupied_[t].value.store(n, std::memory_order_relaxed);
    }
  }

private:
  FilterConfig config_;
  KmerCodec codec_;
  std::vector<std::uint64_t> sizes_;
  std::vector<detail::TableStorage> tables_;
  std::unique_ptr<detail::PaddedCount[]> occupied_;
};

/// Per-thread buffer of pending canonical codes. Flushing applies all pending
/// codes to table 0, then table 1, and so on, so each pass stays within one
/// table. A capacity of 1 degenerates to unbatched increments.
class HashBatch
{
public:
  HashBatch(CountingFilter& filter, std::size_t capacity)
    : filter_(&filter)
    , capacity_(std::max<std::size_t>(capacity, 1))
  {
    pending_.reserve(capacity_);
  }

  explicit HashBatch(CountingFilter& filter)
    : HashBatch(filter, filter.config().batch_size)
  {}

  HashBatch(const HashBatch&) = delete;
  HashBatch& operator=(const HashBatch&) = delete;

  ~HashBatch() { flush(); }

  void add(std::uint64_t code)
  {
    if (capacity_ == 1) {
      filter_->increment(code);
      return;
    }
    pending_.push_back(code);
    if (pending_.size() == capacity_) {
      flush();
    }
  }

  void flush() noexcept
  {
    for (std::size_t t = 0; t < filter_->n_tables(); ++t) {
      for (auto code : pending_) {
        filter_->increment_in_table(t, code);
      }
    }
    pending_.clear();
  }

  std::size_t pending() const noexcept { return pending_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  /// Normalize a copy of `sequence`, split it at invalid bytes and queue every
  /// canonical k-mer. Returns the number of k-mers queued.
  template<typename Bases = UppercaseBases>
  std::size_t consume(std::string_view sequence)
  {
    std::string_view view = sequence;
    if constexpr (Bases::requires_normalized_input) {
      auto& scratch = detail::scratch_buffer();
      scratch.assign(sequence);
      normalize_case(scratch);
      view = scratch;
    }
    KmerScanner<Bases> scanner(view, filter_->codec());
    KmerCode code;
    std::size_t n = 0;
    while (scanner.next(code)) {
      add(code.canonical);
      ++n;
    }
    return n;
  }

private:
  CountingFilter* filter_;
  std::size_t capacity_;
  std::vector<std::uint64_t> pending_;
};

template<typename Bases>
std::size_t
CountingFilter::consume_sequence(std::string_view sequence)
{
  HashBatch batch(*this);
  return batch.consume<Bases>(sequence);
}

} // namespace kmerflow
