#pragma once

// Manual instrumentation: named timers accumulating wall-clock and per-thread
// CPU time in nanoseconds, monotone counters, and an Amdahl's-law fit of
// measured speedups.

#include "kmerflow/error.hpp"

#include <nlohmann/json.hpp>

#include <time.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace kmerflow {

namespace counters {
inline constexpr std::string_view kBytesRead = "bytes_read";
inline constexpr std::string_view kReadsParsed = "reads_parsed";
inline constexpr std::string_view kReadsKept = "reads_kept";
inline constexpr std::string_view kKmersCounted = "kmers_counted";
} // namespace counters

/// Timer whose longest per-thread real time is used as the run's wall time
/// when deriving throughputs.
inline constexpr std::string_view kWallTimer = "wall";

struct TimerTotals
{
  std::uint64_t real_ns = 0;
  std::uint64_t cpu_ns = 0;
  std::uint64_t calls = 0;
};

namespace detail {

inline std::uint64_t
clock_ns(clockid_t clock) noexcept
{
  timespec ts{};
  clock_gettime(clock, &ts);
  return static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ULL + static_cast<std::uint64_t>(ts.tv_nsec);
}

} // namespace detail

class MetricsAccumulator
{
public:
  explicit MetricsAccumulator(bool enabled = true)
    : enabled_(enabled)
  {
    for (auto name : { counters::kBytesRead, counters::kReadsParsed, counters::kReadsKept, counters::kKmersCounted }) {
      counters_.emplace(std::string(name), std::make_unique<std::atomic<std::uint64_t>>(0));
    }
  }

  MetricsAccumulator(const MetricsAccumulator&) = delete;
  MetricsAccumulator& operator=(const MetricsAccumulator&) = delete;

  bool enabled() const noexcept { return enabled_; }

  /// Must be called from the thread being timed: CPU time is read from the
  /// calling thread's clock.
  void start_timer(std::string_view name, std::uint64_t thread_id)
  {
    if (!enabled_) {
      return;
    }
    Slot& slot = thread_state(thread_id).slot(name);
    if (slot.running) {
      throw ContractViolation("timer '" + std::string(name) + "' already running on thread " +
                              std::to_string(thread_id));
    }
    slot.running = true;
    slot.start_real = detail::clock_ns(CLOCK_MONOTONIC);
    slot.start_cpu = detail::clock_ns(CLOCK_THREAD_CPUTIME_ID);
  }

  void stop_timer(std::string_view name, std::uint64_t thread_id)
  {
    if (!enabled_) {
      return;
    }
    const auto cpu = detail::clock_ns(CLOCK_THREAD_CPUTIME_ID);
    const auto real = detail::clock_ns(CLOCK_MONOTONIC);
    ThreadState& state = thread_state(thread_id);
    auto it = state.slots.find(name);
    if (it == state.slots.end() || !it->second.running) {
      throw ContractViolation("timer '" + std::string(name) + "' stopped without start on thread " +
                              std::to_string(thread_id));
    }
    Slot& slot = it->second;
    slot.running = false;
    slot.totals.real_ns += real - slot.start_real;
    slot.totals.cpu_ns += cpu - slot.start_cpu;
    ++slot.totals.calls;
  }

  /// Add an externally measured duration.
  void record(std::string_view name, std::uint64_t thread_id, std::uint64_t real_ns, std::uint64_t cpu_ns)
  {
    if (!enabled_) {
      return;
    }
    Slot& slot = thread_state(thread_id).slot(name);
    slot.totals.real_ns += real_ns;
    slot.totals.cpu_ns += cpu_ns;
    ++slot.totals.calls;
  }

  void add(std::string_view counter, std::uint64_t n = 1)
  {
    if (!enabled_) {
      return;
    }
    counter_ref(counter).fetch_add(n, std::memory_order_relaxed);
  }

  std::uint64_t counter(std::string_view name) const
  {
    std::shared_lock lock(counters_mutex_);
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second->load(std::memory_order_relaxed);
  }

  std::map<std::string, std::uint64_t> counter_values() const
  {
    std::shared_lock lock(counters_mutex_);
    std::map<std::string, std::uint64_t> out;
    for (const auto& [name, value] : counters_) {
      out.emplace(name, value->load(std::memory_order_relaxed));
    }
    return out;
  }

  TimerTotals timer(std::string_view name, std::uint64_t thread_id) const
  {
    std::shared_lock lock(threads_mutex_);
    auto it = threads_.find(thread_id);
    if (it == threads_.end()) {
      return {};
    }
    auto slot = it->second->slots.find(name);
    return slot == it->second->slots.end() ? TimerTotals{} : slot->second.totals;
  }

  /// Per-thread totals keyed by (timer name, thread id). Read once timing has
  /// finished; running timers are not included.
  std::map<std::pair<std::string, std::uint64_t>, TimerTotals> timer_values() const
  {
    std::shared_lock lock(threads_mutex_);
    std::map<std::pair<std::string, std::uint64_t>, TimerTotals> out;
    for (const auto& [tid, state] : threads_) {
      for (const auto& [name, slot] : state->slots) {
        out.emplace(std::make_pair(name, tid), slot.totals);
      }
    }
    return out;
  }

  void warn(std::string message)
  {
    std::lock_guard lock(warnings_mutex_);
    warnings_.push_back(std::move(message));
  }

  std::vector<std::string> warnings() const
  {
    std::lock_guard lock(warnings_mutex_);
    return warnings_;
  }

private:
  struct Slot
  {
    TimerTotals totals;
    bool running = false;
    std::uint64_t start_real = 0;
    std::uint64_t start_cpu = 0;
  };

  // Touched only by its own thread while timing.
  struct ThreadState
  {
    std::map<std::string, Slot, std::less<>> slots;

    Slot& slot(std::string_view name)
    {
      auto it = slots.find(name);
      if (it == slots.end()) {
        it = slots.emplace(std::string(name), Slot{}).first;
      }
      return it->second;
    }
  };

  ThreadState& thread_state(std::uint64_t thread_id)
  {
    {
      std::shared_lock lock(threads_mutex_);
      if (auto it = threads_.find(thread_id); it != threads_.end()) {
        return *it->second;
      }
    }
    std::unique_lock lock(threads_mutex_);
    auto& state = threads_[thread_id];
    if (!state) {
      state = std::make_unique<ThreadState>();
    }
    return *state;
  }

  std::atomic<std::uint64_t>& counter_ref(std::string_view name)
  {
    {
      std::shared_lock lock(counters_mutex_);
      if (auto it = counters_.find(name); it != counters_.end()) {
        return *it->second;
      }
    }
    std::unique_lock lock(counters_mutex_);
    auto it = counters_.find(name);
    if (it == counters_.end()) {
      it = counters_.emplace(std::string(name), std::make_unique<std::atomic<std::uint64_t>>(0)).first;
    }
    return *it->second;
  }

  bool enabled_;
  mutable std::shared_mutex threads_mutex_;
  std::map<std::uint64_t, std::unique_ptr<ThreadState>> threads_;
  mutable std::shared_mutex counters_mutex_;
  std::map<std::string, std::unique_ptr<std::atomic<std::uint64_t>>, std::less<>> counters_;
  mutable std::mutex warnings_mutex_;
  std::vector<std::string> warnings_;
};

/// Starts a timer on construction and stops it on destruction.
class ScopedTimer
{
public:
  ScopedTimer(MetricsAccumulator& metrics, std::string_view name, std::uint64_t thread_id)
    : metrics_(&metrics)
    , name_(name)
    , thread_id_(thread_id)
  {
    metrics_->start_timer(name_, thread_id_);
  }

  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

  ~ScopedTimer() { metrics_->stop_timer(name_, thread_id_); }

private:
  MetricsAccumulator* metrics_;
  std::string name_;
  std::uint64_t thread_id_;
};

// ---------------------------------------------------------------------------
// Speedup model

struct SpeedupObservation
{
  double cores = 1.0;
  double speedup = 1.0;
};

/// Amdahl's law: S(N) = 1 / ((1 - P) + P / N).
inline double
amdahl_speedup(double cores, double parallel_fraction) noexcept
{
  return 1.0 / ((1.0 - parallel_fraction) + parallel_fraction / cores);
}

/// Parallel fraction P in [0, 1] minimizing the squared speedup residuals.
/// A single observation is inverted exactly: P = (1 - 1/S) / (1 - 1/N).
inline double
fit_parallel_fraction(std::span<const SpeedupObservation> observations)
{
  bool informative = false;
  for (const auto& o : observations) {
    if (!(o.cores >= 1.0) || !(o.speedup >= 1.0)) {
      throw ConfigError("speedup observations need N >= 1 and S >= 1");
    }
    informative = informative || o.cores >= 2.0;
  }
  if (!informative) {
    throw ConfigError("need at least one observation with N >= 2");
  }
  if (observations.size() == 1) {
    const auto& o = observations.front();
    return std::clamp((1.0 - 1.0 / o.speedup) / (1.0 - 1.0 / o.cores), 0.0, 1.0);
  }
  auto sse = [&](double p) {
    double total = 0.0;
    for (const auto& o : observations) {
      const double r = o.speedup - amdahl_speedup(o.cores, p);
      total += r * r;
    }
    return total;
  };
  // Coarse grid, then golden-section refinement around the best cell.
  constexpr int kGrid = 1000;
  int best = 0;
  double best_value = sse(0.0);
  for (int i = 1; i <= kGrid; ++i) {
    const double v = sse(static_cast<double>(i) / kGrid);
    if (v < best_value) {
      best_value = v;
      best = i;
    }
  }
  double lo = std::max(0, best - 1) / static_cast<double>(kGrid);
  double hi = std::min(kGrid, best + 1) / static_cast<double>(kGrid);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - ratio * (hi - lo);
  double b = lo + ratio * (hi - lo);
  double fa = sse(a);
  double fb = sse(b);
  for (int i = 0; i < 100 && hi - lo > 1e-12; ++i) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - ratio * (hi - lo);
      fa = sse(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + ratio * (hi - lo);
      fb = sse(b);
    }
  }
  const double p = (lo + hi) / 2.0;
  return sse(p) <= best_value ? p : static_cast<double>(best) / kGrid;
}

inline double
fit_parallel_fraction(std::initializer_list<SpeedupObservation> observations)
{
  return fit_parallel_fraction(std::span<const SpeedupObservation>(observations.begin(), observations.size()));
}

struct SpeedupFit
{
  double parallel_fraction = 0.0;
  double asymptote = 1.0; // 1 / (1 - P), infinite when P = 1
  std::vector<double> predicted;
  std::vector<double> residuals; // observed - predicted
};

/// Fit plus per-observation residuals. Systematically negative residuals at
/// high N hint at contention that plain Amdahl does not model.
inline SpeedupFit
fit_speedup(std::span<const SpeedupObservation> observations)
{
  SpeedupFit fit;
  fit.parallel_fraction = fit_parallel_fraction(observations);
  fit.asymptote = fit.parallel_fraction < 1.0 ? 1.0 / (1.0 - fit.parallel_fraction) : INFINITY;
  for (const auto& o : observations) {
    const double s = amdahl_speedup(o.cores, fit.parallel_fraction);
    fit.predicted.push_back(s);
    fit.residuals.push_back(o.speedup - s);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Reporting

enum class ReportFormat
{
  Text,
  JsonLines,
};

struct Throughputs
{
  double wall_seconds = 0.0;
  double bytes_per_s = 0.0;
  double reads_per_s = 0.0;
  double kmers_per_s = 0.0;
};

inline Throughputs
throughputs(const MetricsAccumulator& metrics)
{
  Throughputs t;
  std::uint64_t wall_ns = 0;
  for (const auto& [key, totals] : metrics.timer_values()) {
    if (key.first == kWallTimer) {
      wall_ns = std::max(wall_ns, totals.real_ns);
    }
  }
  t.wall_seconds = static_cast<double>(wall_ns) / 1e9;
  if (wall_ns > 0) {
    t.bytes_per_s = static_cast<double>(metrics.counter(counters::kBytesRead)) / t.wall_seconds;
    t.reads_per_s = static_cast<double>(metrics.counter(counters::kReadsParsed)) / t.wall_seconds;
    t.kmers_per_s = static_cast<double>(metrics.counter(counters::kKmersCounted)) / t.wall_seconds;
  }
  return t;
}

inline std::string
report(const MetricsAccumulator& metrics, ReportFormat format, std::span<const SpeedupObservation> observations = {})
{
  using nlohmann::json;
  std::vector<json> lines;

  for (const auto& [name, value] : metrics.counter_values()) {
    lines.push_back({ { "kind", "counter" }, { "name", name }, { "value", value } });
  }
  std::map<std::string, TimerTotals> aggregate;
  for (const auto& [key, totals] : metrics.timer_values()) {
    lines.push_back({ { "kind", "timer" },
                      { "name", key.first },
                      { "thread", key.second },
                      { "real_ns", totals.real_ns },
                      { "cpu_ns", totals.cpu_ns },
                      { "calls", totals.calls } });
    auto& agg = aggregate[key.first];
    agg.real_ns += totals.real_ns;
    agg.cpu_ns += totals.cpu_ns;
    agg.calls += totals.calls;
  }
  for (const auto& [name, totals] : aggregate) {
    lines.push_back({ { "kind", "timer_total" },
                      { "name", name },
                      { "real_ns", totals.real_ns },
                      { "cpu_ns", totals.cpu_ns },
                      { "calls", totals.calls } });
  }
  const auto rates = throughputs(metrics);
  lines.push_back({ { "kind", "throughput" }, { "name", "wall_seconds" }, { "value", rates.wall_seconds } });
  lines.push_back({ { "kind", "throughput" }, { "name", "bytes_per_s" }, { "value", rates.bytes_per_s } });
  lines.push_back({ { "kind", "throughput" }, { "name", "reads_per_s" }, { "value", rates.reads_per_s } });
  lines.push_back({ { "kind", "throughput" }, { "name", "kmers_per_s" }, { "value", rates.kmers_per_s } });

  if (!observations.empty()) {
    const auto fit = fit_speedup(observations);
    json obs = json::array();
    for (std::size_t i = 0; i < observations.size(); ++i) {
      obs.push_back({ { "cores", observations[i].cores },
                      { "speedup", observations[i].speedup },
                      { "predicted", fit.predicted[i] },
                      { "residual", fit.residuals[i] } });
    }
    json line = { { "kind", "speedup_fit" }, { "parallel_fraction", fit.parallel_fraction }, { "observations", obs } };
    line["asymptote"] = std::isfinite(fit.asymptote) ? json(fit.asymptote) : json(nullptr);
    lines.push_back(std::move(line));
  }
  for (const auto& w : metrics.warnings()) {
    lines.push_back({ { "kind", "warning" }, { "message", w } });
  }

  std::ostringstream out;
  if (format == ReportFormat::JsonLines) {
    for (const auto& line : lines) {
      out << line.dump() << '\n';
    }
    return out.str();
  }
  for (const auto& line : lines) {
    const std::string kind = line["kind"];
    if (kind == "counter" || kind == "throughput") {
      out << kind << ' ' << line["name"].get<std::string>() << ' ' << line["value"].dump() << '\n';
    } else if (kind == "timer") {
      out << "timer " << line["name"].get<std::string>() << " thread " << line["thread"].dump() << " real_ns "
          << line["real_ns"].dump() << " cpu_ns " << line["cpu_ns"].dump() << " calls " << line["calls"].dump()
          << '\n';
    } else if (kind == "timer_total") {
      out << "timer " << line["name"].get<std::string>() << " total real_ns " << line["real_ns"].dump()
          << " cpu_ns " << line["cpu_ns"].dump() << " calls " << line["calls"].dump() << '\n';
    } else if (kind == "speedup_fit") {
      out << "speedup parallel_fraction " << line["parallel_fraction"].dump() << " asymptote "
          << line["asymptote"].dump() << '\n';
      for (const auto& o : line["observations"]) {
        out << "speedup observation cores " << o["cores"].dump() << " measured " << o["speedup"].dump()
            << " predicted " << o["predicted"].dump() << " residual " << o["residual"].dump() << '\n';
      }
    } else if (kind == "warning") {
      out << "warning " << line["message"].get<std::string>() << '\n';
    }
  }
  return out.str();
}

} // namespace kmerflow
