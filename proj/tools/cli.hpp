#pragma once

// kmerflow command line: count, normalize, filter-abund, abund-dist, info.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "kmerflow/filters.hpp"
#include "kmerflow/metrics.hpp"
#include "kmerflow/persist.hpp"
#include "kmerflow/pipeline.hpp"
#include "kmerflow/seqio.hpp"
#include "kmerflow/sketch.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace kmerflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct CliConfig
{
  unsigned k = 0;
  unsigned tables = 4;
  std::uint64_t table_size = 100'000'000;
  unsigned cutoff = 0;
  unsigned threads = 1;
  std::size_t batch_size = 512;
  std::size_t chunk_size = 4 * kMiB;
  std::size_t readahead = 0;
  bool direct_io = false;
  bool metrics = false;
  std::string metrics_format = "text";
  std::string save_table;
  std::vector<std::string> paths;
};

class UsageError : public Error
{
public:
  using Error::Error;
};

namespace detail {

constexpr std::size_t kMaxReportedErrors = 10;

/// Output stream for a path, "-" meaning the caller's standard output.
class Output
{
public:
  Output(const std::string& path, std::ostream& standard_out)
  {
    if (path == "-") {
      stream_ = &standard_out;
      return;
    }
    file_.rdbuf()->pubsetbuf(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) {
      throw IoError("cannot open " + path + " for writing");
    }
    stream_ = &file_;
  }

  std::ostream& stream() { return *stream_; }

  void close(const std::string& path)
  {
    stream_->flush();
    if (!*stream_) {
      throw IoError("write to " + path + " failed");
    }
    if (file_.is_open()) {
      file_.close();
    }
  }

private:
  std::vector<char> buffer_ = std::vector<char>(1 << 20);
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
};

inline PumpConfig
pump_config(const CliConfig& cfg)
{
  PumpConfig pump;
  pump.chunk_size = cfg.chunk_size;
  pump.cache_bypass = cfg.direct_io;
  pump.readahead_hint = cfg.readahead;
  pump.n_segments = cfg.threads;
  return pump;
}

inline void
report_parse_errors(const std::string& path, const std::vector<ParseError>& errors, std::ostream& err)
{
  for (std::size_t i = 0; i < errors.size() && i < kMaxReportedErrors; ++i) {
    err << "parse error: " << path << ": " << errors[i] << '\n';
  }
  if (errors.size() > kMaxReportedErrors) {
    err << "parse error: " << path << ": ... " << errors.size() - kMaxReportedErrors << " more\n";
  }
}

inline void
report_warnings(const std::vector<std::string>& warnings, std::ostream& err)
{
  for (const auto& w : warnings) {
    err << "warning: " << w << '\n';
  }
}

inline void
emit_metrics(const CliConfig& cfg, const MetricsAccumulator& metrics, std::ostream& err)
{
  if (cfg.metrics) {
    err << report(metrics, cfg.metrics_format == "jsonl" ? ReportFormat::JsonLines : ReportFormat::Text);
  }
}

inline void
check_table_k(const CliConfig& cfg, const CountingFilter& filter)
{
  if (cfg.k != 0 && cfg.k != filter.k()) {
    throw ConfigError("-k " + std::to_string(cfg.k) + " does not match table k=" + std::to_string(filter.k()));
  }
}

inline int
run_count(const CliConfig& cfg, std::ostream& out, std::ostream& err)
{
  if (cfg.paths.size() < 2) {
    throw UsageError("count needs at least one input and an output table path");
  }
  MetricsAccumulator metrics(cfg.metrics);
  metrics.start_timer(kWallTimer, 0);
  FilterConfig fc;
  fc.k = cfg.k;
  fc.n_tables = cfg.tables;
  fc.target_table_size = cfg.table_size;
  fc.batch_size = cfg.batch_size;
  CountingFilter filter(fc);

  std::uint64_t reads = 0;
  std::uint64_t kmers = 0;
  std::uint64_t errors = 0;
  for (std::size_t i = 0; i + 1 < cfg.paths.size(); ++i) {
    const auto& input = cfg.paths[i];
    auto summary =
      count_stream(open_pump(input, pump_config(cfg), true), InputFormat::Auto, filter, cfg.threads, &metrics);
    report_warnings(summary.warnings, err);
    report_parse_errors(input, summary.errors, err);
    reads += summary.reads;
    kmers += summary.kmers;
    errors += summary.errors.size();
  }
  const auto& output = cfg.paths.back();
  const auto bytes = output == "-" ? save_filter(filter, out) : save_filter(filter, output);
  metrics.stop_timer(kWallTimer, 0);
  err << "count: " << reads << " reads, " << kmers << " k-mers, " << errors << " parse errors; wrote " << bytes
      << " bytes to " << output << '\n';
  emit_metrics(cfg, metrics, err);
  return kExitOk;
}

inline int
run_normalize(const CliConfig& cfg, std::ostream& out, std::ostream& err)
{
  if (cfg.paths.size() != 2) {
    throw UsageError("normalize needs exactly one input and one output");
  }
  MetricsAccumulator metrics(cfg.metrics);
  metrics.start_timer(kWallTimer, 0);
  FilterConfig fc;
  fc.k = cfg.k;
  fc.n_tables = cfg.tables;
  fc.target_table_size = cfg.table_size;
  fc.batch_size = cfg.batch_size;
  CountingFilter filter(fc);
  DigitalNormalizer normalizer(filter, AbundanceCutoff(cfg.cutoff));

  PumpConfig pump = pump_config(cfg);
  pump.n_segments = 1;
  auto source = open_pump(cfg.paths[0], pump, true);
  RecordParser parser(*source, InputFormat::Auto);
  Output output(cfg.paths[1], out);
  RecordWriter writer(output.stream());
  std::vector<ParseError> errors;
  std::uint64_t reads = 0;
  while (auto item = parser.next()) {
    if (auto* error = std::get_if<ParseError>(&*item)) {
      errors.push_back(std::move(*error));
      continue;
    }
    const auto& record = std::get<SequenceRecord>(*item);
    ++reads;
    if (normalizer.process(record).verdict == Verdict::Keep) {
      writer.write(record);
    }
  }
  output.close(cfg.paths[1]);
  if (!cfg.save_table.empty()) {
    save_filter(filter, cfg.save_table);
  }
  metrics.stop_timer(kWallTimer, 0);
  metrics.add(counters::kBytesRead, source->bytes_delivered());
  metrics.add(counters::kReadsParsed, reads);
  metrics.add(counters::kReadsKept, normalizer.kept());
  for (const auto& w : source->warnings()) {
    metrics.warn(w);
  }
  report_warnings(source->warnings(), err);
  report_parse_errors(cfg.paths[0], errors, err);
  err << "normalize: " << reads << " reads, kept " << normalizer.kept() << ", discarded " << normalizer.discarded()
      << ", " << errors.size() << " parse errors\n";
  emit_metrics(cfg, metrics, err);
  return kExitOk;
}

inline int
run_filter_abund(const CliConfig& cfg, std::ostream& out, std::ostream& err)
{
  if (cfg.paths.size() != 3) {
    throw UsageError("filter-abund needs a table, one input and one output");
  }
  MetricsAccumulator metrics(cfg.metrics);
  metrics.start_timer(kWallTimer, 0);
  const CountingFilter filter = load_filter(cfg.paths[0], cfg.batch_size);
  check_table_k(cfg, filter);
  const AbundanceTrimmer trimmer(filter, AbundanceCutoff(cfg.cutoff));

  auto source = open_pump(cfg.paths[1], pump_config(cfg), true);
  RecordParser parser(*source, InputFormat::Auto);
  Output output(cfg.paths[2], out);
  RecordWriter writer(output.stream());
  std::vector<ParseError> errors;
  std::uint64_t reads = 0;
  std::uint64_t kept = 0;
  std::uint64_t trimmed = 0;
  std::uint64_t discarded = 0;

  // Records are processed in batches split across threads, then written in
  // input order so output does not depend on the thread count.
  const std::size_t batch_records = 4096 * cfg.threads;
  std::vector<SequenceRecord> batch;
  std::vector<ReadDecision> decisions;
  bool more = true;
  while (more) {
    batch.clear();
    while (batch.size() < batch_records) {
      auto item = parser.next();
      if (!item) {
        more = false;
        break;
      }
      if (auto* error = std::get_if<ParseError>(&*item)) {
        errors.push_back(std::move(*error));
      } else {
        batch.push_back(std::get<SequenceRecord>(std::move(*item)));
      }
    }
    decisions.assign(batch.size(), ReadDecision{});
    const std::size_t per_thread = (batch.size() + cfg.threads - 1) / cfg.threads;
    kmerflow::detail::run_workers(cfg.threads, [&](unsigned t) {
      const std::size_t begin = std::min(batch.size(), t * per_thread);
      const std::size_t end = std::min(batch.size(), begin + per_thread);
      for (std::size_t i = begin; i < end; ++i) {
        decisions[i] = trimmer.process(batch[i]);
      }
    });
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ++reads;
      switch (decisions[i].verdict) {
        case Verdict::Keep:
          ++kept;
          writer.write(batch[i]);
          break;
        case Verdict::Trimmed:
          ++trimmed;
          writer.write(batch[i], *decisions[i].trim_length);
          break;
        case Verdict::Discard: ++discarded; break;
      }
    }
  }
  output.close(cfg.paths[2]);
  metrics.stop_timer(kWallTimer, 0);
  metrics.add(counters::kBytesRead, source->bytes_delivered());
  metrics.add(counters::kReadsParsed, reads);
  metrics.add(counters::kReadsKept, kept + trimmed);
  report_warnings(source->warnings(), err);
  report_parse_errors(cfg.paths[1], errors, err);
  err << "filter-abund: " << reads << " reads, kept " << kept << ", trimmed " << trimmed << ", discarded "
      << discarded << ", " << errors.size() << " parse errors\n";
  emit_metrics(cfg, metrics, err);
  return kExitOk;
}

inline int
run_abund_dist(const CliConfig& cfg, std::ostream& out, std::ostream& err)
{
  if (cfg.paths.size() != 3) {
    throw UsageError("abund-dist needs a table, one input and one output");
  }
  MetricsAccumulator metrics(cfg.metrics);
  metrics.start_timer(kWallTimer, 0);
  const CountingFilter filter = load_filter(cfg.paths[0], cfg.batch_size);
  check_table_k(cfg, filter);
  StreamSummary summary;
  const auto histogram = abundance_stream(open_pump(cfg.paths[1], pump_config(cfg), true), InputFormat::Auto,
                                          filter, cfg.threads, &summary, &metrics);
  Output output(cfg.paths[2], out);
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    if (histogram[c] != 0) {
      output.stream() << c << '\t' << histogram[c] << '\n';
    }
  }
  output.close(cfg.paths[2]);
  metrics.stop_timer(kWallTimer, 0);
  report_warnings(summary.warnings, err);
  report_parse_errors(cfg.paths[1], summary.errors, err);
  err << "abund-dist: " << summary.reads << " reads, " << summary.kmers << " k-mers, " << summary.errors.size()
      << " parse errors\n";
  emit_metrics(cfg, metrics, err);
  return kExitOk;
}

inline int
run_info(const CliConfig& cfg, std::ostream& out)
{
  if (cfg.paths.size() != 1) {
    throw UsageError("info needs exactly one table path");
  }
  const auto header = read_header(cfg.paths[0]);
  out << "magic=KCT1\n";
  out << "version=" << unsigned(header.version) << '\n';
  out << "k=" << unsigned(header.k) << '\n';
  out << "n_tables=" << header.table_sizes.size() << '\n';
  out << "flags=" << unsigned(header.flags) << '\n';
  out << "table_sizes=";
  for (std::size_t i = 0; i < header.table_sizes.size(); ++i) {
    out << (i ? "," : "") << header.table_sizes[i];
  }
  out << '\n';
  out << "file_bytes=" << header.file_bytes() << '\n';
  return kExitOk;
}

} // namespace detail

inline int
run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
  CLI::App app{ "kmerflow: streaming k-mer counting and read preprocessing" };
  app.name("kmerflow");
  app.require_subcommand(1);

  CliConfig cfg;
  const auto add_filter_options = [&](CLI::App* sub, bool k_required, unsigned default_cutoff, bool table_opts) {
    auto* k = sub->add_option("-k", cfg.k, "k-mer size")->check(CLI::Range(1, 32));
    if (k_required) {
      k->required();
    }
    if (table_opts) {
      sub->add_option("--tables", cfg.tables, "number of hash tables")->check(CLI::Range(1, 255));
      sub->add_option("--table-size", cfg.table_size, "target bytes per table (largest primes below are used)")
        ->check(CLI::Range(std::uint64_t{ 1000 }, std::uint64_t{ 1ULL << 40 }));
    }
    if (default_cutoff != 0) {
      cfg.cutoff = default_cutoff;
      sub->add_option("--cutoff", cfg.cutoff, "abundance cutoff")->check(CLI::Range(1, 255));
    }
    sub->add_option("--threads", cfg.threads, "consumer threads")->check(CLI::Range(1, 1024));
    sub->add_option("--batch-size", cfg.batch_size, "hash codes buffered per table pass")
      ->check(CLI::Range(std::size_t{ 1 }, std::size_t{ 1 } << 24));
    sub->add_option("--chunk-size", cfg.chunk_size, "bytes per storage read")
      ->check(CLI::Range(std::size_t{ 1 }, std::size_t{ 1 } << 32));
    sub->add_option("--readahead", cfg.readahead, "sequential readahead hint in bytes (0 = OS default)");
    sub->add_flag("--direct-io", cfg.direct_io, "bypass the page cache (O_DIRECT)");
    sub->add_flag("--metrics", cfg.metrics, "print instrumentation to standard error");
    sub->add_option("--metrics-format", cfg.metrics_format, "text or jsonl")
      ->check(CLI::IsMember({ "text", "jsonl" }));
  };

  auto* count = app.add_subcommand("count", "count k-mers of the inputs and save the table file");
  add_filter_options(count, true, 0, true);
  count->add_option("paths", cfg.paths, "INPUT... OUTPUT.kct")->required();

  auto* normalize = app.add_subcommand(
    "normalize", "digital normalization: keep reads whose median k-mer abundance is below the cutoff "
                 "(always single-threaded; --threads is ignored)");
  add_filter_options(normalize, true, 20, true);
  normalize->add_option("--save-table", cfg.save_table, "also save the final table file");
  normalize->add_option("paths", cfg.paths, "INPUT OUTPUT ('-' for standard streams)")->required();

  auto* filter_abund = app.add_subcommand("filter-abund", "trim reads at their first k-mer below the cutoff");
  add_filter_options(filter_abund, false, 2, false);
  filter_abund->add_option("paths", cfg.paths, "TABLE.kct INPUT OUTPUT")->required();

  auto* abund_dist = app.add_subcommand("abund-dist", "k-mer abundance histogram (count<TAB>frequency)");
  add_filter_options(abund_dist, false, 0, false);
  abund_dist->add_option("paths", cfg.paths, "TABLE.kct INPUT OUTPUT")->required();

  auto* info = app.add_subcommand("info", "print a table file header");
  info->add_option("paths", cfg.paths, "TABLE.kct")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (cfg.direct_io && cfg.chunk_size % 4096 != 0) {
      throw UsageError("--chunk-size must be a multiple of 4096 with --direct-io");
    }
    if (*count) {
      return detail::run_count(cfg, out, err);
    }
    if (*normalize) {
      return detail::run_normalize(cfg, out, err);
    }
    if (*filter_abund) {
      return detail::run_filter_abund(cfg, out, err);
    }
    if (*abund_dist) {
      return detail::run_abund_dist(cfg, out, err);
    }
    return detail::run_info(cfg, out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline int
run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    args.emplace_back(argv[i]);
  }
  return run(args, out, err);
}

} // namespace kmerflow::cli
