#include "doctest.h"

#include "racer/config.hpp"

using racer::config::KV;

TEST_CASE("parses keys, comments, and whitespace") {
  KV kv = KV::parse_string(
      "# header comment\n"
      "a = 1.5\n"
      "  b.c =  hello world  # trailing comment\n"
      "\n"
      "flag = true\n",
      "t.cfg");
  REQUIRE(kv.ok());
  CHECK(kv.get_double("a", 0.0) == 1.5);
  CHECK(kv.get_string("b.c", "") == "hello world");
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.unknown_keys().empty());
}

TEST_CASE("missing keys fall back; required keys error") {
  KV kv = KV::parse_string("a = 1\n", "t.cfg");
  CHECK(kv.get_double("nope", 7.0) == 7.0);
  CHECK(kv.ok());
  kv.require_double("also_missing");
  REQUIRE_FALSE(kv.ok());
  CHECK(kv.errors()[0].find("also_missing") != std::string::npos);
}

TEST_CASE("type errors carry file and line") {
  KV kv = KV::parse_string("x = 1\ny = abc\n", "demo.cfg");
  kv.get_double("y", 0.0);
  REQUIRE_FALSE(kv.ok());
  CHECK(kv.errors()[0].find("demo.cfg:2") != std::string::npos);
  CHECK(kv.errors()[0].find("abc") != std::string::npos);
}

TEST_CASE("malformed lines are reported but parsing continues") {
  KV kv = KV::parse_string("good = 1\nthis has no equals\nalso_good = 2\n", "m.cfg");
  CHECK(kv.errors().size() == 1);
  CHECK(kv.errors()[0].find("m.cfg:2") != std::string::npos);
  CHECK(kv.get_double("good", 0.0) == 1.0);
  CHECK(kv.get_double("also_good", 0.0) == 2.0);
}

TEST_CASE("repeated keys concatenate into lists") {
  KV kv = KV::parse_string(
      "pt = 0.0 1.0\n"
      "pt = 2.0 3.0\n"
      "seeds = 1 2 3\n",
      "t.cfg");
  auto pts = kv.get_doubles("pt");
  REQUIRE(pts.size() == 4);
  CHECK(pts[0] == 0.0);
  CHECK(pts[3] == 3.0);
  auto seeds = kv.get_longs("seeds");
  REQUIRE(seeds.size() == 3);
  CHECK(seeds[2] == 3);
}

TEST_CASE("unconsumed keys are flagged as unknown") {
  KV kv = KV::parse_string("known = 1\ntypo_key = 2\n", "u.cfg");
  kv.get_double("known", 0.0);
  auto unknown = kv.unknown_keys();
  REQUIRE(unknown.size() == 1);
  CHECK(unknown[0].find("typo_key") != std::string::npos);
  CHECK(unknown[0].find("u.cfg:2") != std::string::npos);
}

TEST_CASE("set replaces every occurrence") {
  KV kv = KV::parse_string("a = 1\na = 2\nb = 3\n", "s.cfg");
  kv.set("a", "9");
  auto vals = kv.get_doubles("a");
  REQUIRE(vals.size() == 1);
  CHECK(vals[0] == 9.0);
  kv.set("c", "4");
  CHECK(kv.get_double("c", 0.0) == 4.0);
}

TEST_CASE("hash is stable under key reordering and value-whitespace changes") {
  KV a = KV::parse_string("x = 1\ny = 2 3\nz = hi\n", "a.cfg");
  KV b = KV::parse_string("z = hi\nx = 1\ny =   2   3\n", "b.cfg");
  CHECK(a.hash() == b.hash());

  KV c = KV::parse_string("x = 1\ny = 2 3\nz = ho\n", "c.cfg");
  CHECK(a.hash() != c.hash());
}

TEST_CASE("hash keeps repeated-key order significant") {
  KV a = KV::parse_string("p = 1\np = 2\n", "a.cfg");
  KV b = KV::parse_string("p = 2\np = 1\n", "b.cfg");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("missing file is a single aggregated error") {
  KV kv = KV::parse_file("/nonexistent/path/x.cfg");
  REQUIRE(kv.errors().size() == 1);
  CHECK(kv.errors()[0].find("/nonexistent/path/x.cfg") != std::string::npos);
}
