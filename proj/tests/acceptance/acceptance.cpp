// End-to-end acceptance checks. Prints one line per criterion:
//   criterion N: PASS|FAIL|SKIP  <summary>  (measured details)
// Exits non-zero if any criterion fails. SKIP is only used when the
// machine does not meet a criterion's stated precondition.

#include "cli.hpp"
#include "kmerflow/kmerflow.hpp"

#include "support/test_support.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace kt = kmerflow::test;
using namespace kmerflow;

namespace {

enum class Outcome
{
  Pass,
  Fail,
  Skip,
};

struct Check
{
  Outcome outcome = Outcome::Fail;
  std::string details;
};

std::string
fmt(const char* format, auto... args)
{
  char buffer[512];
  std::snprintf(buffer, sizeof buffer, format, args...);
  return buffer;
}

Check
pass_if(bool ok, std::string details)
{
  return { ok ? Outcome::Pass : Outcome::Fail, std::move(details) };
}

double
best_of(int runs, const std::function<void()>& fn)
{
  double best = INFINITY;
  for (int i = 0; i < runs; ++i) {
    best = std::min(best, kt::seconds(fn));
  }
  return best;
}

std::vector<std::string>
random_sequences(std::mt19937_64& rng, std::size_t n, std::size_t length, std::string_view alphabet = "ACGT")
{
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(kt::random_dna(rng, length, alphabet));
  }
  return out;
}

std::string
as_fastq(const std::vector<std::string>& sequences)
{
  std::string out;
  out.reserve(sequences.size() * (sequences.empty() ? 0 : 2 * sequences[0].size() + 16));
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    out += "@r" + std::to_string(i) + '\n' + sequences[i] + "\n+\n" + std::string(sequences[i].size(), 'I') + '\n';
  }
  return out;
}

SequenceRecord
record_of(std::string name, std::string sequence)
{
  SequenceRecord r;
  r.name = std::move(name);
  r.quality = std::string(sequence.size(), 'I');
  r.sequence = std::move(sequence);
  r.source_format = SequenceFormat::Fastq;
  return r;
}

int
cli_run(std::vector<std::string> args)
{
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  if (code != 0) {
    std::cerr << err.str();
  }
  return code;
}

// ---------------------------------------------------------------------------

Check
oracle_equivalence()
{
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  const auto reads = random_sequences(rng, 10'000, 100);
  FilterConfig config;
  config.k = 20;
  config.n_tables = 4;
  CountingFilter filter(config, { 999983, 999979, 999961, 999959 });
  count_stream(std::make_unique<MemorySource>(as_fastq(reads), 4 * kMiB), InputFormat::Auto, filter, 1);

  const auto oracle = kt::exact_kmer_counts(reads, 20);
  std::size_t equal = 0;
  std::size_t under = 0;
  for (const auto& [kmer, count] : oracle) {
    const auto got = filter.get_count(filter.codec().encode(kmer).canonical);
    const auto expected = std::min<std::uint64_t>(count, kCounterMax);
    equal += got == expected;
    under += got < expected;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double fraction = static_cast<double>(equal) / static_cast<double>(oracle.size());
  // A k-mer is overcounted only if another distinct k-mer shares its slot in
  // every table.
  double all_shared = 1.0;
  for (auto size : filter.table_sizes()) {
    all_shared *= 1.0 - std::exp(-static_cast<double>(oracle.size() - 1) / static_cast<double>(size));
  }
  return pass_if(fraction >= 0.999 && under == 0 && seconds < 30.0,
                 fmt("exact on %.5f of %zu distinct k-mers (collision model predicts %.5f), %zu undercounts, %.2f s",
                     fraction, oracle.size(), 1.0 - all_shared, under, seconds));
}

Check
false_positive_model()
{
  std::mt19937_64 rng(2);
  std::string details;
  bool ok = true;
  for (double target : { 0.01, 0.10, 0.40 }) {
    FilterConfig config;
    config.k = 20;
    config.n_tables = 2;
    config.target_table_size = 200'000;
    CountingFilter filter(config);
    const double size = static_cast<double>(filter.table_sizes()[0]);
    const auto inserts = static_cast<std::size_t>(-size * std::log(1.0 - target));
    std::uniform_int_distribution<std::uint64_t> code(0, filter.codec().forward_mask());
    std::unordered_set<std::uint64_t> inserted;
    for (std::size_t i = 0; i < inserts; ++i) {
      const auto c = code(rng);
      inserted.insert(c);
      filter.increment(c);
    }
    const double p = filter.false_positive_rate();
    const std::size_t n = 100'000;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n;) {
      const auto c = code(rng);
      if (inserted.count(c) != 0) {
        continue;
      }
      hits += filter.get_count(c) > 0;
      ++i;
    }
    const double expected = p * static_cast<double>(n);
    const double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    const bool within = std::abs(static_cast<double>(hits) - expected) <= 3.0 * sigma;
    ok = ok && within;
    details += fmt("occupancy %.3f/%.3f: %zu hits vs %.1f +- %.1f; ", static_cast<double>(filter.occupied(0)) / size,
                   static_cast<double>(filter.occupied(1)) / static_cast<double>(filter.table_sizes()[1]), hits,
                   expected, 3.0 * sigma);
  }
  return pass_if(ok, details);
}

Check
thread_determinism(const kt::TempDir& dir)
{
  std::mt19937_64 rng(3);
  const auto input = dir / "threads.fq";
  kt::write_file(input, as_fastq(random_sequences(rng, 100'000, 100)));
  std::string reference;
  std::string details;
  bool ok = true;
  for (const char* threads : { "1", "2", "4", "8" }) {
    const auto output = (dir / (std::string("t") + threads + ".kct")).string();
    if (cli_run({ "count", "-k", "20", "--table-size", "10000000", "--threads", threads, input.string(), output }) != 0) {
      return { Outcome::Fail, fmt("count --threads %s failed", threads) };
    }
    kt::Sha256 sha;
    const auto bytes = kt::read_file(output);
    sha.update(bytes.data(), bytes.size());
    const auto digest = sha.hex();
    if (reference.empty()) {
      reference = digest;
    }
    ok = ok && digest == reference;
    details += fmt("threads %s %.12s; ", threads, digest.c_str());
  }
  return pass_if(ok, details);
}

Check
batch_equivalence(const kt::TempDir& dir)
{
  const auto input = dir / "threads.fq";
  std::string reference;
  std::string details;
  bool ok = true;
  for (const char* batch : { "1", "64", "512", "4096" }) {
    const auto output = (dir / (std::string("b") + batch + ".kct")).string();
    if (cli_run({ "count", "-k", "20", "--table-size", "10000000", "--threads", "4", "--batch-size", batch,
                  input.string(), output }) != 0) {
      return { Outcome::Fail, fmt("count --batch-size %s failed", batch) };
    }
    const auto digest = kt::sha256_hex(kt::read_file(output));
    if (reference.empty()) {
      reference = digest;
    }
    ok = ok && digest == reference;
    details += fmt("batch %s %.12s; ", batch, digest.c_str());
  }
  return pass_if(ok, details);
}

// Scripted normalization over exact string counts: keep while the lower
// median of the read's k-mer counts is below the cutoff.
std::map<std::string, std::size_t>
oracle_kept_per_name(const std::vector<SequenceRecord>& records, std::size_t k, unsigned cutoff)
{
  auto canonical = [&](const std::string& w) {
    std::string rc(w.rbegin(), w.rend());
    for (auto& c : rc) {
      c = c == 'A' ? 'T' : c == 'T' ? 'A' : c == 'C' ? 'G' : 'C';
    }
    return std::min(w, rc);
  };
  std::unordered_map<std::string, std::uint64_t> counts;
  std::map<std::string, std::size_t> kept;
  for (const auto& r : records) {
    std::vector<std::uint64_t> per;
    for (std::size_t i = 0; i + k <= r.sequence.size(); ++i) {
      const auto it = counts.find(canonical(r.sequence.substr(i, k)));
      per.push_back(it == counts.end() ? 0 : it->second);
    }
    std::sort(per.begin(), per.end());
    if (per[(per.size() - 1) / 2] < cutoff) {
      ++kept[r.name];
      for (std::size_t i = 0; i + k <= r.sequence.size(); ++i) {
        ++counts[canonical(r.sequence.substr(i, k))];
      }
    }
  }
  return kept;
}

Check
normalization_bound()
{
  std::mt19937_64 rng(5);
  const auto distinct = random_sequences(rng, 200, 100);
  std::vector<SequenceRecord> records;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    for (int copy = 0; copy < 50; ++copy) {
      records.push_back(record_of("d" + std::to_string(i), distinct[i]));
    }
  }
  std::shuffle(records.begin(), records.end(), rng);

  auto tally = [](const FilterResult<SequenceRecord>& result) {
    std::map<std::string, std::size_t> per_name;
    for (const auto& r : result.records) {
      ++per_name[r.name];
    }
    return per_name;
  };
  FilterConfig config;
  config.k = 20;
  config.n_tables = 4;
  CountingFilter exact(config, { 999983, 999979, 999961, 999959 });
  const auto exact_kept = tally(normalize_by_median(records, exact, AbundanceCutoff(20)));
  const auto oracle = oracle_kept_per_name(records, 20, 20);

  bool exact_ok = exact_kept.size() == 200 && exact_kept == oracle;
  for (const auto& [name, n] : exact_kept) {
    exact_ok = exact_ok && n == 20;
  }
  config.n_tables = 2;
  CountingFilter small(config, { 1009, 1013 });
  const auto small_kept = tally(normalize_by_median(records, small, AbundanceCutoff(20)));
  std::size_t worst = 0;
  std::size_t total_small = 0;
  for (const auto& [name, n] : small_kept) {
    worst = std::max(worst, n);
    total_small += n;
  }
  return pass_if(exact_ok && worst <= 20,
                 fmt("exact tables: %zu reads x 20 copies (oracle agrees: %s); undersized {1009,1013} at FP %.3f: max "
                     "%zu copies per read, %zu kept total",
                     exact_kept.size(), exact_kept == oracle ? "yes" : "no", small.false_positive_rate(), worst,
                     total_small));
}

Check
trimming_correctness()
{
  std::mt19937_64 rng(6);
  const std::size_t k = 20;
  const std::size_t length = 100;
  const auto genome = random_sequences(rng, 200, length);
  std::vector<std::string> corpus;
  for (const auto& g : genome) {
    for (int c = 0; c < 20; ++c) {
      corpus.push_back(g);
    }
  }
  // One substitution per error read, in the tail half of the read.
  std::uniform_int_distribution<std::size_t> position(length / 2, length - 1);
  std::vector<std::pair<std::string, std::size_t>> errors;
  for (const auto& g : genome) {
    auto read = g;
    const auto p = position(rng);
    read[p] = read[p] == 'A' ? 'C' : read[p] == 'C' ? 'G' : read[p] == 'G' ? 'T' : 'A';
    errors.emplace_back(read, p);
    corpus.push_back(read);
  }
  std::shuffle(corpus.begin(), corpus.end(), rng);

  FilterConfig config;
  config.k = static_cast<unsigned>(k);
  config.n_tables = 4;
  CountingFilter filter(config, { 999983, 999979, 999961, 999959 });
  count_stream(std::make_unique<MemorySource>(as_fastq(corpus), kMiB), InputFormat::Auto, filter, 1);
  const auto counts = kt::exact_kmer_counts(corpus, k);

  const AbundanceTrimmer trimmer(filter, AbundanceCutoff(2));
  std::size_t correct = 0;
  std::size_t oracle_agrees = 0;
  for (const auto& [read, p] : errors) {
    // Oracle: first window whose exact count is below 2.
    std::optional<std::size_t> predicted;
    for (std::size_t i = 0; i + k <= read.size() && !predicted; ++i) {
      const auto w = kt::exact_kmer_counts({ read.substr(i, k) }, k);
      if (counts.at(w.begin()->first) < 2) {
        predicted = i + k - 1;
      }
    }
    oracle_agrees += predicted == p; // the window ending just before the error
    const auto d = trimmer.process(record_of("e", read));
    correct += d.verdict == Verdict::Trimmed && d.trim_length == predicted;
  }
  return pass_if(correct == errors.size(),
                 fmt("%zu/%zu error reads trimmed at the oracle position (%zu/%zu at the base before the error)",
                     correct, errors.size(), oracle_agrees, errors.size()));
}

Check
round_trip(const kt::TempDir& dir)
{
  std::mt19937_64 rng(7);
  FilterConfig config;
  config.k = 20;
  config.target_table_size = 100'000;
  CountingFilter filter(config);
  for (const auto& s : random_sequences(rng, 2000, 100)) {
    filter.consume_sequence(s);
  }
  save_filter(filter, dir / "one.kct");
  save_filter(load_filter(dir / "one.kct"), dir / "two.kct");
  const auto one = kt::read_file(dir / "one.kct");
  const bool identical = one == kt::read_file(dir / "two.kct");

  auto kind_of = [&](const std::string& bytes) -> std::optional<TableFileErrorKind> {
    kt::write_file(dir / "broken.kct", bytes);
    try {
      load_filter(dir / "broken.kct");
    } catch (const TableFileError& e) {
      return e.kind();
    }
    return std::nullopt;
  };
  auto bad_magic = one;
  bad_magic.replace(0, 4, "XXXX");
  auto bad_version = one;
  bad_version[4] = 7;
  const auto magic = kind_of(bad_magic);
  const auto version = kind_of(bad_version);
  const auto truncated = kind_of(one.substr(0, one.size() - 1000));
  const bool classes = magic == TableFileErrorKind::NotAFilterFile &&
                       version == TableFileErrorKind::UnsupportedVersion && truncated == TableFileErrorKind::Corrupt;
  return pass_if(identical && classes, fmt("save-load-save identical: %s; error classes distinct and correct: %s",
                                           identical ? "yes" : "no", classes ? "yes" : "no"));
}

Check
case_folding()
{
  std::mt19937_64 rng(8);
  std::string buffer = kt::random_dna(rng, 100'000'000, "ACGTacgtN");
  std::string work;
  const double bitmask = best_of(3, [&] {
    work = buffer;
    normalize_case(work);
  });
  const double toupper = best_of(3, [&] {
    work = buffer;
    for (auto& c : work) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
  });

  const auto reads = random_sequences(rng, 100'000, 150, "ACGTacgt");
  const auto text = as_fastq(reads);
  FilterConfig config;
  config.k = 20;
  config.target_table_size = 1'000'000;
  std::uint64_t kmers_fast = 0;
  std::uint64_t kmers_slow = 0;
  double fast = INFINITY;
  double slow = INFINITY;
  for (int i = 0; i < 3; ++i) {
    fast = std::min(fast, kt::seconds([&] {
      CountingFilter filter(config);
      kmers_fast = count_stream(std::make_unique<MemorySource>(text, 4 * kMiB), InputFormat::Auto, filter, 1).kmers;
    }));
    slow = std::min(slow, kt::seconds([&] {
      CountingFilter filter(config);
      kmers_slow = count_stream<kt::ToupperBases>(std::make_unique<MemorySource>(text, 4 * kMiB), InputFormat::Auto,
                                                  filter, 1)
                     .kmers;
    }));
  }
  return pass_if(bitmask <= toupper && fast < slow && kmers_fast == kmers_slow,
                 fmt("100 MB fold: bitmask %.3f s vs toupper %.3f s; count: precomputed %.3f s vs per-check toupper "
                     "%.3f s (%.1f%% faster)",
                     bitmask, toupper, fast, slow, 100.0 * (slow - fast) / slow));
}

Check
parallel_speedup()
{
  const unsigned cores = std::thread::hardware_concurrency();
  std::mt19937_64 rng(9);
  const auto text = as_fastq(random_sequences(rng, 1'000'000, 100));
  FilterConfig config;
  config.k = 20;
  config.target_table_size = 10'000'000;
  std::map<unsigned, double> seconds;
  for (unsigned threads : { 1U, 2U, 4U }) {
    CountingFilter filter(config);
    seconds[threads] = kt::seconds([&] {
      count_stream(std::make_unique<MemorySource>(text, 4 * kMiB), InputFormat::Auto, filter, threads);
    });
  }
  const double s2 = seconds[1] / seconds[2];
  const double s4 = seconds[1] / seconds[4];
  std::optional<double> p;
  try {
    p = fit_parallel_fraction({ { 2, std::max(1.0, s2) }, { 4, std::max(1.0, s4) } });
  } catch (const ConfigError&) {
  }
  const auto details = fmt("%u hardware threads; 1/2/4 threads %.2f/%.2f/%.2f s; S(2)=%.2f S(4)=%.2f; fitted P=%.3f",
                           cores, seconds[1], seconds[2], seconds[4], s2, s4, p.value_or(NAN));
  if (cores < 4) {
    return { Outcome::Skip, "requires a >=4-core machine; " + details };
  }
  return pass_if(s4 >= 2.0 && p && *p >= 0.8, details);
}

Check
amdahl_inversion()
{
  const double p = fit_parallel_fraction({ { 2, 1.9 } });
  return pass_if(std::abs(p - 0.947) <= 0.001, fmt("P = %.6f", p));
}

Check
stream_identity(const kt::TempDir& dir)
{
  std::mt19937_64 rng(11);
  const auto path = dir / "stream.bin";
  std::string data = kt::random_dna(rng, 37'000'000);
  kt::write_file(path, data);
  const auto reference = kt::sha256_hex(data);
  data.clear();
  data.shrink_to_fit();

  bool ok = true;
  bool bypass_active = true;
  for (std::size_t chunk : { std::size_t{ 4096 }, kMiB, 4 * kMiB }) {
    for (bool bypass : { false, true }) {
      PumpConfig config;
      config.chunk_size = chunk;
      config.cache_bypass = bypass;
      BytePump pump(path, config);
      kt::Sha256 sha;
      for (auto span = pump.next(); !span.empty(); span = pump.next()) {
        sha.update(span.data(), span.size());
      }
      ok = ok && sha.hex() == reference;
      if (bypass) {
        bypass_active = bypass_active && pump.cache_bypass_active();
      }
    }
  }
  return pass_if(ok, fmt("SHA-256 %.16s... identical across 6 configurations; O_DIRECT in effect: %s",
                         reference.c_str(), bypass_active ? "yes" : "no (buffered fallback)"));
}

Check
parser_robustness()
{
  std::mt19937_64 rng(12);
  // 17 distinct, non-adjacent damaged records: adjacent damage is one
  // damaged region and resynchronizes as one error.
  std::vector<std::size_t> damaged;
  std::uniform_int_distribution<std::size_t> pick(0, 999);
  while (damaged.size() < 17) {
    const auto i = pick(rng);
    const bool clear = std::none_of(damaged.begin(), damaged.end(), [&](std::size_t d) { return d + 1 >= i && d <= i + 1; });
    if (clear) {
      damaged.push_back(i);
    }
  }
  const auto corpus = kt::corrupted_fastq(rng, 1000, damaged);
  MemorySource source(corpus.text, 64 * 1024);
  RecordParser parser(source, InputFormat::Auto);
  std::vector<std::string> names;
  std::size_t errors = 0;
  while (auto item = parser.next()) {
    if (const auto* r = std::get_if<SequenceRecord>(&*item)) {
      names.push_back(r->name);
    } else {
      ++errors;
    }
  }
  return pass_if(names.size() == 983 && errors == 17 && names == corpus.intact_names,
                 fmt("%zu records, %zu errors, intact records preserved in order: %s", names.size(), errors,
                     names == corpus.intact_names ? "yes" : "no"));
}

} // namespace

int
main()
{
  kt::TempDir dir;
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
    { "oracle equivalence (exact regime)", oracle_equivalence },
    { "false-positive model at three occupancies", false_positive_model },
    { "count output independent of --threads", [&] { return thread_determinism(dir); } },
    { "table bytes independent of batch size", [&] { return batch_equivalence(dir); } },
    { "digital normalization bound", normalization_bound },
    { "trimming at oracle position", trimming_correctness },
    { "table file round-trip and error classes", [&] { return round_trip(dir); } },
    { "case folding faster than per-check toupper", case_folding },
    { "parallel speedup", parallel_speedup },
    { "Amdahl inversion of 1.9x at N=2", amdahl_inversion },
    { "stream identity with and without cache bypass", [&] { return stream_identity(dir); } },
    { "parser robustness on damaged FASTQ", parser_robustness },
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = { Outcome::Fail, std::string("exception: ") + e.what() };
    }
    const char* word = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Fail ? "FAIL" : "SKIP";
    failures += v.outcome == Outcome::Fail;
    std::cout << "criterion " << i + 1 << ": " << word << "  " << criteria[i].first << "  (" << v.details << ")"
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
