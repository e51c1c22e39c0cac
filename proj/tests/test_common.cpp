#include <atomic>
#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "decelgp/common.hpp"
#include "decelgp/config.hpp"
#include "doctest.h"

using namespace decelgp;

TEST_CASE("digest matches published FNV-1a vectors") {
  Digest empty;
  CHECK(empty.hex() == "cbf29ce484222325");
  Digest a;
  a.update(std::string_view("a"));
  CHECK(a.hex() == "af63dc4c8601ec8c");
  Digest foobar;
  foobar.update(std::string_view("foobar"));
  CHECK(foobar.hex() == "85944171f73967e8");
}

TEST_CASE("digest of integers is little-endian bytes") {
  Digest by_int;
  by_int.update(std::uint64_t{0x0102030405060708ULL});
  Digest by_bytes;
  const char bytes[] = {8, 7, 6, 5, 4, 3, 2, 1};
  by_bytes.update(std::string_view(bytes, 8));
  CHECK(by_int.value() == by_bytes.value());
}

TEST_CASE("derive_seed separates labels and indices") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t root : {0ULL, 1ULL, 42ULL})
    for (const char* label : {"folds", "rf", "restarts", "landing"})
      for (std::uint64_t a = 0; a < 5; ++a)
        for (std::uint64_t b = 0; b < 5; ++b) seen.insert(derive_seed(root, label, a, b));
  CHECK(seen.size() == 3 * 4 * 5 * 5);
  CHECK(derive_seed(7, "x", 1, 2) == derive_seed(7, "x", 1, 2));
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(-0.0) == "-0");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e300) == "1e+300");
  CHECK(format_double(2.5) == "2.5");

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::uint64_t> bits;
  int checked = 0;
  while (checked < 2000) {
    const double v = std::bit_cast<double>(bits(rng));
    if (!std::isfinite(v)) continue;
    const double back = parse_double(format_double(v), "v");
    CHECK(std::bit_cast<std::uint64_t>(back) == std::bit_cast<std::uint64_t>(v));
    ++checked;
  }
}

TEST_CASE("strict number parsing") {
  CHECK(parse_double("1.5", "x") == 1.5);
  CHECK(parse_double("+2", "x") == 2.0);
  CHECK(parse_int("-12", "x") == -12);
  CHECK_THROWS_AS(parse_double("", "x"), SchemaError);
  CHECK_THROWS_AS(parse_double("1.5abc", "x"), SchemaError);
  CHECK_THROWS_AS(parse_double(" 1", "x"), SchemaError);
  CHECK_THROWS_AS(parse_int("1.0", "x"), SchemaError);
  CHECK_THROWS_AS(parse_int("99999999999999999999999", "x"), SchemaError);
}

TEST_CASE("parallel_for visits each index once for any worker count") {
  for (unsigned threads : {1U, 2U, 3U, 8U}) {
    std::vector<std::atomic<int>> hits(97);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("body called for empty range"); });
}

TEST_CASE("parallel_for reports the lowest failing index") {
  for (unsigned threads : {1U, 2U, 4U}) {
    try {
      parallel_for(40, threads, [](std::size_t i) {
        if (i % 7 == 3) throw std::runtime_error("index " + std::to_string(i));
      });
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "index 3");
    }
  }
}

TEST_CASE("flat config parsing") {
  const auto cfg = FlatConfig::parse("# comment\n a = 1 \n\nname=x y\r\nb=2.5\n");
  CHECK(cfg.get_int("a", 0) == 1);
  CHECK(cfg.get_string("name", "") == "x y");
  CHECK(cfg.get_double("b", 0.0) == 2.5);
  CHECK(cfg.get_int("missing", 9) == 9);
  CHECK(cfg.canonical() == "a=1\nb=2.5\nname=x y\n");
  CHECK_THROWS_AS(FlatConfig::parse("novalue\n"), SchemaError);
  CHECK_THROWS_AS(FlatConfig::parse("=3\n"), SchemaError);
  CHECK_THROWS_AS(cfg.get_int("name", 0), SchemaError);
  CHECK_THROWS_AS(FlatConfig::load("/nonexistent/cfg"), SchemaError);
}
