#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evs/event_stream.hpp"
#include "evs/rng.hpp"
#include "evs/synthetic.hpp"

using evs::EventPoint;
using evs::EventStream;
using evs::Rng;
using evs::StreamError;

namespace {

EventStream random_stream(Rng& rng) {
  EventStream s;
  s.width = 1 + static_cast<std::uint32_t>(rng.below(100));
  s.height = 1 + static_cast<std::uint32_t>(rng.below(100));
  const std::size_t n = static_cast<std::size_t>(rng.below(51));
  std::uint64_t t = rng.below(1000);
  for (std::size_t i = 0; i < n; ++i) {
    EventPoint e;
    e.t = t;
    e.x = static_cast<std::uint16_t>(rng.below(s.width));
    e.y = static_cast<std::uint16_t>(rng.below(s.height));
    e.p = static_cast<std::uint8_t>(rng.below(2));
    s.events.push_back(e);
    t += rng.below(3);  // non-decreasing, with frequent ties
  }
  return s;
}

bool streams_equal(const EventStream& a, const EventStream& b) {
  return a.width == b.width && a.height == b.height && a.events == b.events;
}

std::string text_of(const EventStream& s) {
  std::ostringstream out;
  evs::write_text(s, out);
  return out.str();
}

std::string binary_of(const EventStream& s) {
  std::ostringstream out;
  evs::write_binary(s, out);
  return out.str();
}

EventStream from_text(const std::string& bytes, bool strict = true) {
  std::istringstream in(bytes);
  return evs::parse_text(in, strict);
}

EventStream from_binary(const std::string& bytes, bool strict = true) {
  std::istringstream in(bytes);
  return evs::parse_binary(in, strict);
}

}  // namespace

TEST_CASE("text parsing handles the documented forms") {
  SECTION("two data lines") {
    const EventStream s = from_text("# evt1 w=4 h=4\n0,1,2,1\n5,3,0,0\n");
    REQUIRE(s.width == 4);
    REQUIRE(s.height == 4);
    REQUIRE(s.events.size() == 2);
    CHECK(s.events[0].t == 0);
    CHECK(s.events[0].x == 1);
    CHECK(s.events[0].y == 2);
    CHECK(s.events[0].p == 1);
    CHECK(s.events[1].t == 5);
    CHECK(s.events[1].x == 3);
    CHECK(s.events[1].y == 0);
    CHECK(s.events[1].p == 0);
    CHECK(s.duration_us() == 5);
  }
  SECTION("header-only input") {
    const EventStream s = from_text("# evt1 w=4 h=4\n");
    CHECK(s.width == 4);
    CHECK(s.events.empty());
    CHECK(s.duration_us() == 0);
  }
  SECTION("comments, blank lines, CRLF") {
    const EventStream s = from_text("# evt1 w=8 h=8\r\n\r\n# note\n7,1,1,0\r\n");
    REQUIRE(s.events.size() == 1);
    CHECK(s.events[0].t == 7);
  }
}

TEST_CASE("text parsing rejects malformed input with the offending line") {
  CHECK_THROWS_MATCHES(from_text("# evt1 w=4 h=4\n0,9,0,1\n"), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("line 2") &&
                           Catch::Matchers::ContainsSubstring("out of bounds")));
  CHECK_THROWS_MATCHES(from_text("bogus\n"), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("line 1")));
  CHECK_THROWS_AS(from_text(""), StreamError);
  CHECK_THROWS_MATCHES(from_text("# evt1 w=4 h=4\n0,1\n"), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("line 2") &&
                           Catch::Matchers::ContainsSubstring("4 fields")));
  CHECK_THROWS_MATCHES(from_text("# evt1 w=4 h=4\n0,1,2,1,9\n"), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("too many fields")));
  CHECK_THROWS_MATCHES(from_text("# evt1 w=4 h=4\n1,2,x,1\n"), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("non-numeric")));
  CHECK_THROWS_MATCHES(from_text("# evt1 w=4 h=4\n1,2,3,2\n"), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("polarity")));
  SECTION("strict mode rejects out-of-order timestamps, lenient sorts them") {
    const std::string body = "# evt1 w=4 h=4\n5,1,1,1\n2,0,0,0\n";
    CHECK_THROWS_MATCHES(from_text(body), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("line 3") &&
                             Catch::Matchers::ContainsSubstring("non-decreasing")));
    const EventStream s = from_text(body, false);
    REQUIRE(s.events.size() == 2);
    CHECK(s.events[0].t == 2);
    CHECK(s.events[1].t == 5);
  }
  SECTION("lenient sort is stable for equal timestamps") {
    const EventStream s = from_text("# evt1 w=4 h=4\n5,1,1,1\n2,0,0,0\n2,3,3,1\n", false);
    REQUIRE(s.events.size() == 3);
    CHECK(s.events[0].x == 0);
    CHECK(s.events[1].x == 3);
    CHECK(s.events[2].x == 1);
  }
}

TEST_CASE("text round-trip is the identity on random streams") {
  for (int i = 0; i < 100; ++i) {
    Rng rng(evs::mix_seed(311, static_cast<std::uint64_t>(i)));
    const EventStream s = random_stream(rng);
    INFO("stream " << i << " with " << s.events.size() << " events");
    CHECK(streams_equal(from_text(text_of(s)), s));
  }
  SECTION("empty stream writes a header-only document") {
    EventStream s;
    s.width = 3;
    s.height = 7;
    CHECK(text_of(s) == "# evt1 w=3 h=7\n");
  }
}

TEST_CASE("binary round-trip is the identity and the encoding is canonical") {
  for (int i = 0; i < 100; ++i) {
    Rng rng(evs::mix_seed(1117, static_cast<std::uint64_t>(i)));
    const EventStream s = random_stream(rng);
    const std::string bytes = binary_of(s);
    INFO("stream " << i << " with " << s.events.size() << " events");
    CHECK(bytes.size() == evs::kBinaryHeaderBytes + evs::kBinaryRecordBytes * s.events.size());
    const EventStream back = from_binary(bytes);
    CHECK(streams_equal(back, s));
    CHECK(binary_of(back) == bytes);
  }
}

TEST_CASE("binary parsing rejects corrupted input") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  for (int i = 0; i < 5; ++i)
    s.events.push_back({static_cast<std::uint64_t>(i), 1, 1, 1});
  const std::string good = binary_of(s);

  SECTION("bad magic") {
    std::string bytes = good;
    bytes[0] = 'X';
    CHECK_THROWS_MATCHES(from_binary(bytes), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("bad magic")));
  }
  SECTION("declared count 5 but only 3 records present") {
    const std::string bytes =
        good.substr(0, evs::kBinaryHeaderBytes + 3 * evs::kBinaryRecordBytes);
    CHECK_THROWS_MATCHES(from_binary(bytes), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("truncated")));
  }
  SECTION("truncated header") {
    CHECK_THROWS_MATCHES(from_binary(good.substr(0, 10)), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("truncated")));
  }
  SECTION("nonzero pad byte rejected in strict mode only") {
    std::string bytes = good;
    bytes[evs::kBinaryHeaderBytes + 13] = 1;
    CHECK_THROWS_MATCHES(from_binary(bytes), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("pad")));
    CHECK(streams_equal(from_binary(bytes, false), s));
  }
  SECTION("out-of-bounds coordinate rejected after decode") {
    EventStream bad = s;
    bad.events[2].x = 9;
    CHECK_THROWS_MATCHES(from_binary(binary_of(bad)), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("out of bounds")));
  }
  SECTION("polarity outside {0,1} rejected after decode") {
    EventStream bad = s;
    bad.events[0].p = 2;
    CHECK_THROWS_AS(from_binary(binary_of(bad)), StreamError);
  }
}

TEST_CASE("stream validation enforces bounds, polarity, and order") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events = {{0, 1, 1, 1}, {5, 2, 2, 0}};
  CHECK_NOTHROW(evs::validate_stream(s));

  EventStream bad = s;
  bad.events[1].x = 4;
  CHECK_THROWS_AS(evs::validate_stream(bad), StreamError);
  bad = s;
  bad.events[1].y = 200;
  CHECK_THROWS_AS(evs::validate_stream(bad), StreamError);
  bad = s;
  bad.events[0].p = 3;
  CHECK_THROWS_AS(evs::validate_stream(bad), StreamError);
  bad = s;
  std::swap(bad.events[0], bad.events[1]);
  CHECK_THROWS_MATCHES(evs::validate_stream(bad), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("timestamp order")));
  bad.width = 0;
  CHECK_THROWS_AS(evs::validate_stream(bad), StreamError);
}

TEST_CASE("file helpers pick the format from the extension") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "evs_io_test";
  fs::create_directories(dir);
  Rng rng(evs::mix_seed(98, 0));
  const EventStream s = random_stream(rng);

  const std::string bin_path = (dir / "sample.evt").string();
  evs::save_stream(s, bin_path);
  {
    std::ifstream in(bin_path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "EVT1");
  }
  CHECK(streams_equal(evs::load_stream(bin_path), s));

  const std::string txt_path = (dir / "sample.csv").string();
  evs::save_stream(s, txt_path);
  {
    std::ifstream in(txt_path);
    std::string first;
    std::getline(in, first);
    CHECK(first.substr(0, 7) == "# evt1 ");
  }
  CHECK(streams_equal(evs::load_stream(txt_path), s));

  CHECK_THROWS_MATCHES(evs::load_stream((dir / "missing.evt").string()), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("cannot open")));
  fs::remove_all(dir);
}

TEST_CASE("synthetic streams are deterministic and well formed") {
  SECTION("same arguments give byte-equal output") {
    const EventStream a = evs::synthesize_stream(1, 7, 32, 32, 100000, 5.0);
    const EventStream b = evs::synthesize_stream(1, 7, 32, 32, 100000, 5.0);
    CHECK(binary_of(a) == binary_of(b));
    const EventStream c = evs::synthesize_stream(1, 8, 32, 32, 100000, 5.0);
    CHECK(binary_of(a) != binary_of(c));
  }
  SECTION("event count matches rate times duration") {
    const EventStream s = evs::synthesize_stream(0, 3, 32, 32, 1000000, 10.0);
    CHECK(s.events.size() == 10000);  // exact: the generator rounds rate*duration once
    CHECK(s.events.size() >= 9500);
    CHECK(s.events.size() <= 10500);
    CHECK(s.label == 0);
    CHECK_NOTHROW(evs::validate_stream(s));
  }
  SECTION("every category validates and carries its label") {
    for (int cat = 0; cat < evs::kCategoryCount; ++cat) {
      const EventStream s = evs::synthesize_stream(cat, 11, 32, 32, 200000, 8.0);
      INFO("category " << cat);
      CHECK(s.label == cat);
      CHECK(s.events.size() == 1600);
      CHECK_NOTHROW(evs::validate_stream(s));
    }
  }
  SECTION("unknown generator id is rejected") {
    CHECK_THROWS_MATCHES(evs::synthesize_stream(evs::kCategoryCount, 1, 32, 32, 1000, 1.0),
                         StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("unknown generator id")));
    CHECK_THROWS_AS(evs::synthesize_stream(-1, 1, 32, 32, 1000, 1.0), StreamError);
    CHECK_THROWS_AS(evs::synthesize_stream(0, 1, 4, 32, 1000, 1.0), StreamError);
    CHECK_THROWS_AS(evs::synthesize_stream(0, 1, 32, 32, 0, 1.0), StreamError);
  }
}

TEST_CASE("translating-bar centroid moves monotonically") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const EventStream s = evs::synthesize_stream(0, seed, 32, 32, 500000, 10.0);
    const std::uint64_t t0 = s.events.front().t;
    const std::uint64_t span = s.duration_us() + 1;
    double sum_x[8] = {};
    std::size_t n[8] = {};
    for (const EventPoint& e : s.events) {
      std::size_t b = static_cast<std::size_t>((e.t - t0) * 8 / span);
      sum_x[b] += e.x;
      n[b] += 1;
    }
    double prev = -1.0;
    for (int b = 0; b < 8; ++b) {
      REQUIRE(n[b] > 0);
      const double centroid = sum_x[b] / static_cast<double>(n[b]);
      INFO("seed " << seed << ", bin " << b << ": centroid " << centroid);
      CHECK(centroid > prev);
      prev = centroid;
    }
  }
}
