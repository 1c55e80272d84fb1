#include "kmerflow/persist.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace kmerflow {
namespace {

using test::TempDir;

CountingFilter
filter_with_sizes(unsigned k, std::vector<std::uint64_t> sizes)
{
  FilterConfig config;
  config.k = k;
  config.n_tables = static_cast<unsigned>(sizes.size());
  return CountingFilter(config, std::move(sizes));
}

CountingFilter
populated(std::size_t inserts, std::uint64_t seed, std::uint64_t target = 100'000)
{
  FilterConfig config;
  config.k = 20;
  config.n_tables = 4;
  config.target_table_size = target;
  CountingFilter filter(config);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> code(0, filter.codec().forward_mask());
  for (std::size_t i = 0; i < inserts; ++i) {
    filter.increment(code(rng));
  }
  return filter;
}

void
expect_same_tables(const CountingFilter& a, const CountingFilter& b)
{
  ASSERT_EQ(a.table_sizes(), b.table_sizes());
  ASSERT_EQ(a.k(), b.k());
  for (std::size_t t = 0; t < a.n_tables(); ++t) {
    const auto x = a.table(t);
    const auto y = b.table(t);
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << "table " << t;
    EXPECT_EQ(a.occupied(t), b.occupied(t));
  }
}

TEST(SaveFilter, FileLengthFormula)
{
  TempDir dir;
  const auto filter = filter_with_sizes(20, { 101, 97 });
  EXPECT_EQ(save_filter(filter, dir / "a.kct"), 222U);
  EXPECT_EQ(std::filesystem::file_size(dir / "a.kct"), 222U);

  const auto bytes = test::read_file(dir / "a.kct");
  EXPECT_EQ(bytes.substr(0, 4), "KCT1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 20);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[7], 0);
  // 101 little-endian
  EXPECT_EQ(bytes.substr(8, 8), std::string("\x65\0\0\0\0\0\0\0", 8));
  EXPECT_EQ(bytes.substr(16, 8), std::string("\x61\0\0\0\0\0\0\0", 8));

  const auto header = read_header(dir / "a.kct");
  EXPECT_EQ(header.k, 20);
  EXPECT_EQ(header.table_sizes, (std::vector<std::uint64_t>{ 101, 97 }));
  EXPECT_EQ(header.header_bytes(), 24U);
  EXPECT_EQ(header.file_bytes(), 222U);
}

TEST(SaveFilter, FreshRoundTripIsAllZero)
{
  TempDir dir;
  const auto filter = filter_with_sizes(11, { 1009, 1013, 1019 });
  save_filter(filter, dir / "f.kct");
  const auto loaded = load_filter(dir / "f.kct");
  for (std::size_t t = 0; t < loaded.n_tables(); ++t) {
    const auto table = loaded.table(t);
    EXPECT_TRUE(std::all_of(table.begin(), table.end(), [](auto c) { return c == 0; }));
  }
  EXPECT_EQ(loaded.false_positive_rate(), 0.0);
}

TEST(SaveFilter, PopulatedRoundTripIsBitExact)
{
  TempDir dir;
  const auto filter = populated(10'000, 1);
  save_filter(filter, dir / "p.kct");
  const auto loaded = load_filter(dir / "p.kct");
  expect_same_tables(filter, loaded);
  EXPECT_DOUBLE_EQ(loaded.false_positive_rate(), filter.false_positive_rate());
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint64_t> code(0, filter.codec().forward_mask());
  for (int i = 0; i < 10'000; ++i) {
    const auto c = code(rng);
    ASSERT_EQ(loaded.get_count(c), filter.get_count(c));
  }
}

TEST(SaveFilter, DoubleRoundTripIsByteIdentical)
{
  TempDir dir;
  for (std::uint64_t seed : { 2, 3, 4 }) {
    const auto filter = populated(5'000 * seed, seed);
    save_filter(filter, dir / "one.kct");
    save_filter(load_filter(dir / "one.kct"), dir / "two.kct");
    EXPECT_EQ(test::sha256_hex(test::read_file(dir / "one.kct")), test::sha256_hex(test::read_file(dir / "two.kct")));
  }
}

TableFileErrorKind
load_error_kind(const std::filesystem::path& path)
{
  try {
    load_filter(path);
  } catch (const TableFileError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded on " << path;
  return TableFileErrorKind::Corrupt;
}

TEST(LoadFilter, DistinctErrorClasses)
{
  TempDir dir;
  save_filter(populated(1000, 5, 2000), dir / "good.kct");
  const auto good = test::read_file(dir / "good.kct");

  auto bad_magic = good;
  bad_magic.replace(0, 4, "XXXX");
  test::write_file(dir / "magic.kct", bad_magic);
  EXPECT_EQ(load_error_kind(dir / "magic.kct"), TableFileErrorKind::NotAFilterFile);

  test::write_file(dir / "tiny.kct", "KC");
  EXPECT_EQ(load_error_kind(dir / "tiny.kct"), TableFileErrorKind::NotAFilterFile);

  auto version = good;
  version[4] = 2;
  test::write_file(dir / "version.kct", version);
  EXPECT_EQ(load_error_kind(dir / "version.kct"), TableFileErrorKind::UnsupportedVersion);

  for (std::size_t cut : { std::size_t{ 6 }, std::size_t{ 20 }, good.size() / 2, good.size() - 1 }) {
    test::write_file(dir / "trunc.kct", good.substr(0, cut));
    EXPECT_EQ(load_error_kind(dir / "trunc.kct"), TableFileErrorKind::Corrupt) << "cut at " << cut;
  }

  test::write_file(dir / "long.kct", good + "x");
  EXPECT_EQ(load_error_kind(dir / "long.kct"), TableFileErrorKind::Corrupt);

  auto zero_tables = good;
  zero_tables[6] = 0;
  test::write_file(dir / "zero.kct", zero_tables);
  EXPECT_EQ(load_error_kind(dir / "zero.kct"), TableFileErrorKind::Corrupt);

  EXPECT_THROW(load_filter(dir / "missing.kct"), IoError);
}

TEST(SaveFilter, UnwritablePathIsIoError)
{
  const auto filter = filter_with_sizes(5, { 101 });
  EXPECT_THROW(save_filter(filter, "/nonexistent-dir/x.kct"), IoError);
}

// Write-out cost depends on table bytes only, not on how much was counted.
TEST(SaveFilter, WriteOutTimeIndependentOfReadCount)
{
  TempDir dir;
  const auto light = populated(20'000, 6, 4'000'000);
  const auto heavy = populated(200'000, 7, 4'000'000);
  std::vector<double> light_times;
  std::vector<double> heavy_times;
  // Warm up allocation and page cache paths.
  save_filter(light, dir / "warm.kct");
  for (int i = 0; i < 11; ++i) {
    std::filesystem::remove(dir / "l.kct");
    std::filesystem::remove(dir / "h.kct");
    light_times.push_back(test::seconds([&] { save_filter(light, dir / "l.kct"); }));
    heavy_times.push_back(test::seconds([&] { save_filter(heavy, dir / "h.kct"); }));
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  const double a = median(light_times);
  const double b = median(heavy_times);
  EXPECT_NEAR(b / a, 1.0, 0.10) << "light " << a << " s, heavy " << b << " s";
}

} // namespace
} // namespace kmerflow
