#pragma once

// The data pump: moves file bytes into memory in fixed-size chunks.
//
// Buffered mode issues plain sequential reads and (optionally) readahead
// advice. Cache-bypass mode opens the file with O_DIRECT and performs the
// alignment housekeeping itself: every storage read starts at a block-aligned
// offset, has a block-multiple length and lands in a block-aligned buffer;
// the bytes handed to the consumer are trimmed so the stream is identical to
// the buffered one.

#include "kmerflow/error.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace kmerflow {

inline constexpr std::size_t kMiB = 1024 * 1024;

struct PumpConfig
{
  std::size_t chunk_size = 4 * kMiB;
  std::size_t readahead_hint = 0; // 0 leaves the OS default
  bool cache_bypass = false;
  std::size_t block_size = 4096;
  std::size_t n_segments = 1;

  void validate() const
  {
    if (chunk_size == 0) {
      throw ConfigError("chunk size must be positive");
    }
    if (n_segments == 0) {
      throw ConfigError("segment count must be at least 1");
    }
    if (cache_bypass) {
      if (block_size == 0 || (block_size & (block_size - 1)) != 0) {
        throw ConfigError("block size must be a power of two");
      }
      if (chunk_size % block_size != 0) {
        throw ConfigError("chunk size " + std::to_string(chunk_size) + " is not a multiple of block size " +
                          std::to_string(block_size));
      }
    }
  }
};

/// A stream of byte chunks. The span returned by next() stays valid until the
/// following call; an empty span means end of stream.
class ChunkSource
{
public:
  virtual ~ChunkSource() = default;
  virtual std::span<const char> next() = 0;
  virtual std::vector<std::string> warnings() const { return {}; }
  virtual std::uint64_t bytes_delivered() const = 0;
};

/// Chunks over an in-memory buffer. Handy for tests and for cache-hot runs.
class MemorySource final : public ChunkSource
{
public:
  MemorySource(std::string data, std::size_t chunk_size)
    : data_(std::move(data))
    , chunk_size_(std::max<std::size_t>(chunk_size, 1))
  {}

  std::span<const char> next() override
  {
    const std::size_t n = std::min(chunk_size_, data_.size() - offset_);
    std::span<const char> out(data_.data() + offset_, n);
    offset_ += n;
    return out;
  }

  std::uint64_t bytes_delivered() const override { return offset_; }

private:
  std::string data_;
  std::size_t chunk_size_;
  std::size_t offset_ = 0;
};

namespace detail {

struct AlignedFree
{
  void operator()(char* p) const noexcept { std::free(p); }
};

inline std::size_t
round_up(std::size_t value, std::size_t multiple) noexcept
{
  return (value + multiple - 1) / multiple * multiple;
}

} // namespace detail

/// Owned, block-aligned chunk buffer plus the window of valid bytes.
class Chunk
{
public:
  Chunk() = default;

  void reserve(std::size_t capacity, std::size_t alignment)
  {
    if (capacity <= capacity_) {
      return;
    }
    const std::size_t bytes = detail::round_up(capacity, alignment);
    auto* p = static_cast<char*>(std::aligned_alloc(alignment, bytes));
    if (p == nullptr) {
      throw ResourceError("cannot allocate pump buffer", bytes);
    }
    buffer_.reset(p);
    capacity_ = bytes;
  }

  char* data() noexcept { return buffer_.get(); }
  std::size_t capacity() const noexcept { return capacity_; }

  void set_window(std::size_t begin, std::size_t end) noexcept
  {
    begin_ = begin;
    end_ = end;
  }

  std::span<const char> bytes() const noexcept { return { buffer_.get() + begin_, end_ - begin_ }; }
  bool empty() const noexcept { return end_ == begin_; }

private:
  std::unique_ptr<char, detail::AlignedFree> buffer_;
  std::size_t capacity_ = 0;
  std::size_t begin_ = 0;
  std::size_t end_ = 0;
};

/// Reads a file (or standard input for "-") chunk by chunk. Paths ending in
/// ".gz" are decompressed transparently, which disables cache bypass.
class BytePump final : public ChunkSource
{
public:
  BytePump(const std::string& path, PumpConfig config)
    : path_(path)
    , config_(config)
  {
    config_.validate();
    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (path == "-") {
      fd_ = STDIN_FILENO;
      owns_fd_ = false;
      if (config_.cache_bypass) {
        warn("cache bypass unavailable for standard input; using buffered reads");
        config_.cache_bypass = false;
      }
    } else {
      if (config_.cache_bypass && gz) {
        warn("cache bypass disabled for gzip input " + path);
        config_.cache_bypass = false;
      }
      open_file();
    }
    if (gz) {
      gz_ = gzdopen(fd_, "rb");
      if (gz_ == nullptr) {
        throw IoError("cannot open gzip stream " + path);
      }
      owns_fd_ = false; // gzclose closes it
      gzbuffer(gz_, 256 * 1024);
    } else if (config_.readahead_hint > 0) {
      // Advice only; failures are ignored.
      (void)::posix_fadvise(fd_, 0, 0, POSIX_FADV_SEQUENTIAL);
      (void)::posix_fadvise(fd_, 0, static_cast<off_t>(config_.readahead_hint), POSIX_FADV_WILLNEED);
    }
  }

  BytePump(const BytePump&) = delete;
  BytePump& operator=(const BytePump&) = delete;

  ~BytePump() override
  {
    if (gz_ != nullptr) {
      gzclose(gz_);
    } else if (owns_fd_ && fd_ >= 0) {
      ::close(fd_);
    }
  }

  /// Fill `chunk` with the next run of bytes. Returns false at end of file.
  bool fill(Chunk& chunk)
  {
    const std::size_t alignment = std::max<std::size_t>(config_.block_size, 64);
    chunk.reserve(config_.chunk_size + config_.block_size, alignment);
    std::size_t got = 0;
    if (gz_ != nullptr) {
      got = fill_gzip(chunk);
      chunk.set_window(0, got);
    } else if (config_.cache_bypass) {
      const auto [begin, end] = fill_direct(chunk);
      chunk.set_window(begin, end);
      got = end - begin;
    } else {
      got = fill_buffered(chunk);
      chunk.set_window(0, got);
    }
    position_ += got;
    return got > 0;
  }

  std::span<const char> next() override
  {
    if (!fill(current_)) {
      return {};
    }
    return current_.bytes();
  }

  std::vector<std::string> warnings() const override { return warnings_; }
  std::uint64_t bytes_delivered() const override { return position_; }
  bool cache_bypass_active() const noexcept { return config_.cache_bypass; }
  const PumpConfig& config() const noexcept { return config_; }

private:
  void warn(std::string message) { warnings_.push_back(std::move(message)); }

  void open_file()
  {
    if (config_.cache_bypass) {
      fd_ = ::open(path_.c_str(), O_RDONLY | O_DIRECT | O_CLOEXEC);
      if (fd_ >= 0) {
        return;
      }
      if (errno != EINVAL) {
        throw IoError("cannot open " + path_ + ": " + std::strerror(errno));
      }
      warn("O_DIRECT not supported for " + path_ + "; using buffered reads");
      config_.cache_bypass = false;
    }
    fd_ = ::open(path_.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) {
      throw IoError("cannot open " + path_ + ": " + std::strerror(errno));
    }
  }

  void fall_back_to_buffered()
  {
    warn("direct read failed for " + path_ + "; falling back to buffered reads");
    const int fd = ::open(path_.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) {
      throw IoError("cannot reopen " + path_ + ": " + std::strerror(errno));
    }
    ::close(fd_);
    fd_ = fd;
    config_.cache_bypass = false;
    if (::lseek(fd_, static_cast<off_t>(position_), SEEK_SET) < 0) {
      throw IoError("cannot seek " + path_ + ": " + std::strerror(errno));
    }
  }

  std::size_t fill_buffered(Chunk& chunk)
  {
    std::size_t got = 0;
    while (got < config_.chunk_size) {
      const ssize_t r = ::read(fd_, chunk.data() + got, config_.chunk_size - got);
      if (r < 0) {
        if (errno == EINTR) {
          continue;
        }
        throw IoError("read failed on " + path_ + ": " + std::strerror(errno));
      }
      if (r == 0) {
        break;
      }
      got += static_cast<std::size_t>(r);
    }
    if (config_.readahead_hint > 0 && got > 0) {
      (void)::posix_fadvise(fd_, static_cast<off_t>(position_ + got),
                            static_cast<off_t>(config_.readahead_hint), POSIX_FADV_WILLNEED);
    }
    return got;
  }

  std::pair<std::size_t, std::size_t> fill_direct(Chunk& chunk)
  {
    const std::size_t block = config_.block_size;
    const std::uint64_t aligned_offset = position_ / block * block;
    const auto skip = static_cast<std::size_t>(position_ - aligned_offset);
    const std::size_t want = detail::round_up(skip + config_.chunk_size, block);
    std::size_t got = 0;
    while (got < want) {
      const ssize_t r = ::pread(fd_, chunk.data() + got, want - got, static_cast<off_t>(aligned_offset + got));
      if (r < 0) {
        if (errno == EINTR) {
          continue;
        }
        if (errno == EINVAL) {
          fall_back_to_buffered();
          return { 0, fill_buffered(chunk) };
        }
        throw IoError("direct read failed on " + path_ + ": " + std::strerror(errno));
      }
      if (r == 0) {
        break;
      }
      got += static_cast<std::size_t>(r);
      if (static_cast<std::size_t>(r) % block != 0) {
        break; // short read: end of file (or a partial block we re-read next time)
      }
    }
    if (got <= skip) {
      return { 0, 0 };
    }
    return { skip, std::min(got, skip + config_.chunk_size) };
  }

  std::size_t fill_gzip(Chunk& chunk)
  {
    std::size_t got = 0;
    while (got < config_.chunk_size) {
      const int r = gzread(gz_, chunk.data() + got, static_cast<unsigned>(config_.chunk_size - got));
      if (r < 0) {
        int code = 0;
        const char* message = gzerror(gz_, &code);
        throw IoError("gzip read failed on " + path_ + ": " + message);
      }
      if (r == 0) {
        break;
      }
      got += static_cast<std::size_t>(r);
    }
    return got;
  }

  std::string path_;
  PumpConfig config_;
  int fd_ = -1;
  bool owns_fd_ = true;
  gzFile gz_ = nullptr;
  std::uint64_t position_ = 0;
  Chunk current_;
  std::vector<std::string> warnings_;
};

/// Runs a BytePump on a background thread, keeping up to `depth` filled
/// chunks ahead of the consumer. The prefetch buffer is split into one
/// segment (chunk) per consumer thread, with a minimum of two so that reading
/// overlaps parsing.
class PrefetchPump final : public ChunkSource
{
public:
  PrefetchPump(std::unique_ptr<BytePump> pump, std::size_t depth)
    : pump_(std::move(pump))
    , depth_(std::max<std::size_t>(depth, 2))
  {
    for (std::size_t i = 0; i < depth_; ++i) {
      free_.push_back(std::make_unique<Chunk>());
    }
    worker_ = std::thread([this] { produce(); });
  }

  PrefetchPump(const PrefetchPump&) = delete;
  PrefetchPump& operator=(const PrefetchPump&) = delete;

  ~PrefetchPump() override
  {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  std::span<const char> next() override
  {
    std::unique_lock lock(mutex_);
    if (current_) {
      free_.push_back(std::move(current_));
      cv_.notify_all();
    }
    cv_.wait(lock, [this] { return !ready_.empty() || finished_; });
    if (ready_.empty()) {
      if (error_) {
        std::rethrow_exception(error_);
      }
      return {};
    }
    current_ = std::move(ready_.front());
    ready_.pop_front();
    delivered_ += current_->bytes().size();
    return current_->bytes();
  }

  std::vector<std::string> warnings() const override
  {
    std::lock_guard lock(mutex_);
    return pump_->warnings();
  }

  std::uint64_t bytes_delivered() const override
  {
    std::lock_guard lock(mutex_);
    return delivered_;
  }

private:
  void produce()
  {
    try {
      for (;;) {
        std::unique_ptr<Chunk> chunk;
        {
          std::unique_lock lock(mutex_);
          cv_.wait(lock, [this] { return !free_.empty() || stop_; });
          if (stop_) {
            break;
          }
          chunk = std::move(free_.front());
          free_.pop_front();
        }
        const bool more = pump_->fill(*chunk);
        std::lock_guard lock(mutex_);
        if (!more) {
          break;
        }
        ready_.push_back(std::move(chunk));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
    }
    std::lock_guard lock(mutex_);
    finished_ = true;
    cv_.notify_all();
  }

  std::unique_ptr<BytePump> pump_;
  std::size_t depth_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::unique_ptr<Chunk>> free_;
  std::deque<std::unique_ptr<Chunk>> ready_;
  std::unique_ptr<Chunk> current_;
  std::exception_ptr error_;
  std::uint64_t delivered_ = 0;
  bool stop_ = false;
  bool finished_ = false;
  std::thread worker_;
};

/// Open a file as a chunk stream.
inline std::unique_ptr<ChunkSource>
open_pump(const std::string& path, const PumpConfig& config, bool prefetch = false)
{
  auto pump = std::make_unique<BytePump>(path, config);
  if (!prefetch) {
    return pump;
  }
  return std::make_unique<PrefetchPump>(std::move(pump), config.n_segments);
}

} // namespace kmerflow
