#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evs/frames.hpp"
#include "evs/rng.hpp"
#include "evs/synthetic.hpp"
#include "evs/voxels.hpp"

using evs::EventFrameStack;
using evs::EventPoint;
using evs::EventStream;
using evs::Rng;
using evs::StreamError;
using evs::VoxelGrid;

namespace {

EventStream random_stream(Rng& rng, std::uint32_t width, std::uint32_t height,
                          std::size_t n_events, std::uint64_t t_step_max) {
  EventStream s;
  s.width = width;
  s.height = height;
  std::uint64_t t = rng.below(100);
  for (std::size_t i = 0; i < n_events; ++i) {
    EventPoint e;
    e.t = t;
    e.x = static_cast<std::uint16_t>(rng.below(width));
    e.y = static_cast<std::uint16_t>(rng.below(height));
    e.p = static_cast<std::uint8_t>(rng.below(2));
    s.events.push_back(e);
    t += rng.below(t_step_max + 1);
  }
  return s;
}

}  // namespace

TEST_CASE("window boundaries and window index agree everywhere") {
  for (std::uint64_t span : {1ull, 2ull, 3ull, 7ull, 8ull, 13ull, 40ull}) {
    for (std::int64_t n = 1; n <= static_cast<std::int64_t>(span); ++n) {
      const std::uint64_t t0 = 17;
      const auto b = evs::window_boundaries(t0, span, n);
      INFO("span " << span << ", windows " << n);
      REQUIRE(b.size() == static_cast<std::size_t>(n) + 1);
      CHECK(b.front() == t0);
      CHECK(b.back() == t0 + span);
      for (std::size_t i = 1; i < b.size(); ++i) CHECK(b[i] > b[i - 1]);
      for (std::uint64_t t = t0; t < t0 + span; ++t) {
        const std::int64_t k = evs::window_index(t, t0, span, n);
        REQUIRE(k >= 0);
        REQUIRE(k < n);
        CHECK(t >= b[static_cast<std::size_t>(k)]);
        CHECK(t < b[static_cast<std::size_t>(k) + 1]);
      }
    }
  }
  CHECK_THROWS_MATCHES(evs::window_boundaries(0, 3, 4), StreamError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("cannot be split")));
  CHECK_THROWS_AS(evs::window_boundaries(0, 5, 0), StreamError);
}

TEST_CASE("frame stacking preserves counts and places events correctly") {
  SECTION("single positive event at the origin, native resolution") {
    EventStream s;
    s.width = 8;
    s.height = 8;
    s.events = {{42, 0, 0, 1}};
    const EventFrameStack stack = evs::stack_frames(s, 1, 8, 8);
    CHECK(stack.total() == 1);
    CHECK(stack.at(0, 1, 0, 0) == 1);
    std::uint64_t ch0 = 0;
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) ch0 += stack.at(0, 0, y, x);
    CHECK(ch0 == 0);
    CHECK(stack.boundaries == std::vector<std::uint64_t>{42, 43});
  }
  SECTION("100 uniformly spread events over 4 frames") {
    EventStream s;
    s.width = 16;
    s.height = 16;
    for (int i = 0; i < 100; ++i)
      s.events.push_back({static_cast<std::uint64_t>(i * 10), static_cast<std::uint16_t>(i % 16),
                          static_cast<std::uint16_t>((i / 16) % 16),
                          static_cast<std::uint8_t>(i % 2)});
    const EventFrameStack stack = evs::stack_frames(s, 4, 16, 16);
    REQUIRE(stack.frames == 4);
    CHECK(stack.total() == 100);
    std::uint64_t per_frame[4] = {};
    for (std::int64_t f = 0; f < 4; ++f)
      for (std::int64_t ch = 0; ch < 2; ++ch)
        for (std::int64_t y = 0; y < 16; ++y)
          for (std::int64_t x = 0; x < 16; ++x) per_frame[f] += stack.at(f, ch, y, x);
    CHECK(per_frame[0] + per_frame[1] + per_frame[2] + per_frame[3] == 100);
    CHECK(per_frame[0] == 25);  // 10 us spacing divides evenly into 4 windows
    CHECK(per_frame[3] == 25);
  }
  SECTION("downscaling floors the pixel mapping") {
    EventStream s;
    s.width = 4;
    s.height = 4;
    s.events = {{0, 0, 0, 0}, {1, 1, 3, 0}, {2, 2, 0, 0}, {3, 3, 1, 0}};
    const EventFrameStack stack = evs::stack_frames(s, 1, 2, 2);
    CHECK(stack.at(0, 0, 0, 0) == 1);  // (0,0)
    CHECK(stack.at(0, 0, 1, 0) == 1);  // (1,3) halves to (0,1)
    CHECK(stack.at(0, 0, 0, 1) == 2);  // (2,0) and (3,1) both halve to (1,0)
    CHECK(stack.total() == 4);
  }
  SECTION("count conservation on random streams") {
    for (int i = 0; i < 30; ++i) {
      Rng rng(evs::mix_seed(5150, static_cast<std::uint64_t>(i)));
      const EventStream s = random_stream(rng, 32, 24, 200 + rng.below(300), 40);
      const EventFrameStack stack = evs::stack_frames(s, 8, 12, 12);
      INFO("stream " << i);
      CHECK(stack.total() == s.events.size());
      CHECK(stack.boundaries.front() == s.events.front().t);
      CHECK(stack.boundaries.back() == s.events.back().t + 1);
    }
  }
  SECTION("equal-timestamp events can be permuted freely") {
    EventStream a;
    a.width = 8;
    a.height = 8;
    a.events = {{5, 1, 1, 1}, {5, 2, 2, 0}, {5, 3, 3, 1}, {9, 0, 0, 0}};
    EventStream b = a;
    std::swap(b.events[0], b.events[2]);
    const EventFrameStack sa = evs::stack_frames(a, 2, 8, 8);
    const EventFrameStack sb = evs::stack_frames(b, 2, 8, 8);
    CHECK(sa.counts == sb.counts);
  }
  SECTION("errors") {
    EventStream empty;
    empty.width = empty.height = 8;
    CHECK_THROWS_MATCHES(evs::stack_frames(empty, 4, 8, 8), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("no time span")));
    EventStream tiny;
    tiny.width = tiny.height = 8;
    tiny.events = {{0, 0, 0, 0}, {1, 1, 1, 1}};
    CHECK_THROWS_AS(evs::stack_frames(tiny, 4, 8, 8), StreamError);  // span 2 < 4 frames
    CHECK_THROWS_AS(evs::stack_frames(tiny, 0, 8, 8), StreamError);
  }
}

TEST_CASE("voxelization buckets events into cubic cells") {
  SECTION("three events inside the first cell") {
    EventStream s;
    s.width = 8;
    s.height = 8;
    s.events = {{0, 0, 0, 1}, {1, 1, 1, 0}, {2, 1, 0, 1}};
    const VoxelGrid g = evs::voxelize(s, 2, 2, 10);
    CHECK(g.counts[static_cast<std::size_t>(g.cell_index(0, 0, 0))] == 3);
    CHECK(g.total() == 3);
    CHECK(g.polarity[static_cast<std::size_t>(g.cell_index(0, 0, 0))] == 1);  // +1 -1 +1
  }
  SECTION("4x4 sensor, span of 4 time cells, 2x2 pixel cells gives 16 cells") {
    EventStream s;
    s.width = 4;
    s.height = 4;
    s.events = {{0, 0, 0, 0}, {39, 3, 3, 1}};  // inclusive tick span 40 = 4 * c
    const VoxelGrid g = evs::voxelize(s, 2, 2, 10);
    CHECK(g.nx == 2);
    CHECK(g.ny == 2);
    CHECK(g.nt == 4);
    CHECK(g.cell_count() == 16);
    CHECK(g.counts[static_cast<std::size_t>(g.cell_index(0, 0, 0))] == 1);
    CHECK(g.counts[static_cast<std::size_t>(g.cell_index(1, 1, 3))] == 1);
  }
  SECTION("floor assignment for every event") {
    Rng rng(evs::mix_seed(7272, 0));
    const EventStream s = random_stream(rng, 20, 14, 64, 25);
    const std::uint32_t a = 3, b = 5;
    const std::uint64_t c = 17;
    const VoxelGrid g = evs::voxelize(s, a, b, c);
    VoxelGrid expect = g;
    std::fill(expect.counts.begin(), expect.counts.end(), 0u);
    for (const EventPoint& e : s.events) {
      const std::int64_t cell = expect.cell_index(e.x / a, e.y / b,
                                                  static_cast<std::int64_t>((e.t - g.t0) / c));
      ++expect.counts[static_cast<std::size_t>(cell)];
    }
    CHECK(g.counts == expect.counts);
  }
  SECTION("count conservation and polarity bound on a large random stream") {
    const EventStream s = evs::synthesize_stream(3, 99, 32, 32, 1000000, 10.0);
    REQUIRE(s.events.size() == 10000);
    const VoxelGrid g = evs::voxelize(s, 2, 2, 5000);
    CHECK(g.total() == 10000);
    for (std::int64_t i = 0; i < g.cell_count(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      CHECK(static_cast<std::uint32_t>(std::abs(g.polarity[idx])) <= g.counts[idx]);
    }
  }
  SECTION("cell edges must be positive") {
    EventStream s;
    s.width = s.height = 8;
    s.events = {{0, 0, 0, 0}, {9, 1, 1, 1}};
    CHECK_THROWS_AS(evs::voxelize(s, 0, 2, 10), StreamError);
    CHECK_THROWS_AS(evs::voxelize(s, 2, 2, 0), StreamError);
    CHECK_THROWS_AS(evs::voxelize(s, 2, 2, 10, 0), StreamError);
  }
}

TEST_CASE("voxel descriptors summarize cell contents") {
  EventStream s;
  s.width = 8;
  s.height = 8;
  s.events = {{0, 1, 1, 1}};
  const VoxelGrid g = evs::voxelize(s, 4, 4, 8);

  SECTION("single positive event") {
    const std::vector<double> d = evs::voxel_descriptor(g, g.cell_index(0, 0, 0));
    REQUIRE(d.size() == 10);  // 2^3 micro bins + count + polarity
    double micro_total = 0;
    for (int i = 0; i < 8; ++i) micro_total += d[static_cast<std::size_t>(i)];
    CHECK(micro_total == 1.0);
    CHECK(d[8] == 1.0);
    CHECK(d[9] == 1.0);
  }
  SECTION("empty cell gives the zero vector") {
    const std::vector<double> d = evs::voxel_descriptor(g, g.cell_index(1, 1, 0));
    CHECK(std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; }));
  }
  SECTION("identical event placement gives identical descriptors") {
    EventStream two;
    two.width = 8;
    two.height = 8;
    two.events = {{0, 1, 1, 1}, {0, 5, 1, 1}};  // same offset inside cells (0,0) and (1,0)
    const VoxelGrid g2 = evs::voxelize(two, 4, 4, 8);
    CHECK(evs::voxel_descriptor(g2, g2.cell_index(0, 0, 0)) ==
          evs::voxel_descriptor(g2, g2.cell_index(1, 0, 0)));
  }
  SECTION("repeat calls are deterministic") {
    CHECK(evs::voxel_descriptor(g, 0) == evs::voxel_descriptor(g, 0));
  }
  SECTION("descriptor length follows the micro-binning factor") {
    CHECK(evs::voxel_descriptor_length(2) == 10);
    CHECK(evs::voxel_descriptor_length(3) == 29);
    CHECK(evs::voxel_descriptor_length(1) == 3);
  }
  SECTION("cell index is range checked") {
    CHECK_THROWS_MATCHES(evs::voxel_descriptor(g, g.cell_count()), StreamError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("out of range")));
    CHECK_THROWS_AS(evs::voxel_descriptor(g, -1), StreamError);
  }
}

TEST_CASE("per-clip voxel grids cover the stream without losing events") {
  SECTION("empty middle clips give all-zero grids") {
    EventStream s;
    s.width = 8;
    s.height = 8;
    for (std::uint64_t t : {0ull, 1ull, 2ull, 97ull, 98ull, 99ull})
      s.events.push_back({t, 1, 1, 1});
    const auto grids = evs::clip_voxel_grids(s, 4, 2, 2, 5);
    REQUIRE(grids.size() == 4);
    CHECK(grids[0].total() == 3);
    CHECK(grids[1].total() == 0);
    CHECK(grids[2].total() == 0);
    CHECK(grids[3].total() == 3);
    CHECK(grids[1].cell_count() >= 1);
  }
  SECTION("clip totals sum to the stream size on random streams") {
    for (int i = 0; i < 20; ++i) {
      Rng rng(evs::mix_seed(606, static_cast<std::uint64_t>(i)));
      const EventStream s = random_stream(rng, 32, 32, 300, 30);
      const auto grids = evs::clip_voxel_grids(s, 3, 4, 4, 200);
      std::uint64_t total = 0;
      for (const VoxelGrid& g : grids) total += g.total();
      INFO("stream " << i);
      CHECK(total == s.events.size());
    }
  }
  SECTION("clip time origins line up with the window boundaries") {
    Rng rng(evs::mix_seed(607, 0));
    const EventStream s = random_stream(rng, 16, 16, 120, 20);
    const auto bounds =
        evs::window_boundaries(s.events.front().t, evs::stream_tick_span(s), 4);
    const auto grids = evs::clip_voxel_grids(s, 4, 4, 4, 100);
    for (std::size_t k = 0; k < grids.size(); ++k) CHECK(grids[k].t0 == bounds[k]);
  }
}

TEST_CASE("frame tensor export matches the accumulated counts") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events = {{0, 0, 0, 0}, {5, 1, 2, 1}, {9, 3, 3, 1}};
  const EventFrameStack stack = evs::stack_frames(s, 2, 4, 4);
  const auto t = evs::frame_tensor<float>(stack);
  REQUIRE(t.shape() == evs::Shape{2, 2, 4, 4});
  float total = 0;
  for (float v : t.values()) total += v;
  CHECK(total == 3.0f);
}

TEST_CASE("diagnostic exports are well formed") {
  namespace fs = std::filesystem;
  EventStream s;
  s.width = 4;
  s.height = 2;
  s.events = {{0, 0, 0, 0}, {1, 1, 1, 1}, {2, 3, 1, 1}, {9, 2, 0, 0}};

  SECTION("PGM export") {
    const EventFrameStack stack = evs::stack_frames(s, 1, 2, 4);
    const fs::path path = fs::temp_directory_path() / "evs_frame_test.pgm";
    evs::write_frame_pgm(stack, 0, 1, path.string());
    std::ifstream in(path, std::ios::binary);
    std::string header;
    std::getline(in, header);
    CHECK(header == "P5");
    std::string dims, maxval;
    std::getline(in, dims);
    std::getline(in, maxval);
    CHECK(dims == "4 2");
    CHECK(maxval == "255");
    std::string pixels((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(pixels.size() == 8);
    fs::remove(path);
    CHECK_THROWS_AS(evs::write_frame_pgm(stack, 1, 0, path.string()), StreamError);
    CHECK_THROWS_AS(evs::write_frame_pgm(stack, 0, 2, path.string()), StreamError);
  }
  SECTION("voxel CSV lists each occupied cell once") {
    const VoxelGrid g = evs::voxelize(s, 2, 2, 5);
    std::ostringstream out;
    evs::write_voxel_csv(g, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "cx,cy,ct,count,polarity_sum");
    std::uint64_t total = 0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      const auto c3 = line.rfind(',');
      const auto c4 = line.rfind(',', c3 - 1);
      total += std::stoull(line.substr(c4 + 1, c3 - c4 - 1));
    }
    CHECK(total == s.events.size());
    std::int64_t occupied = 0;
    for (auto v : g.counts) occupied += v > 0 ? 1 : 0;
    CHECK(rows == static_cast<std::size_t>(occupied));
  }
}
