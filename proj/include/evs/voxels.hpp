#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "evs/event_stream.hpp"
#include "evs/frames.hpp"

namespace evs {

// Events bucketed into cubic cells of a x b pixels by c microseconds. Besides
// per-cell totals, each cell keeps an s x s x s micro histogram of where its
// events fell inside the cell; descriptors are built from it.
struct VoxelGrid {
  std::uint32_t cell_a = 1;   // pixels along x
  std::uint32_t cell_b = 1;   // pixels along y
  std::uint64_t cell_c = 1;   // microseconds
  std::int64_t nx = 0, ny = 0, nt = 0;
  std::uint64_t t0 = 0;       // time origin of the grid
  int micro_s = 2;            // micro-binning factor per axis
  std::vector<std::uint32_t> counts;       // [nt][ny][nx]
  std::vector<std::int32_t> polarity;      // signed sums, same layout
  std::vector<std::uint32_t> micro;        // [cell][s^3]

  std::int64_t cell_count() const { return nx * ny * nt; }
  std::int64_t cell_index(std::int64_t cx, std::int64_t cy, std::int64_t ct) const {
    return (ct * ny + cy) * nx + cx;
  }
  void cell_coords(std::int64_t idx, std::int64_t& cx, std::int64_t& cy, std::int64_t& ct) const {
    cx = idx % nx;
    cy = (idx / nx) % ny;
    ct = idx / (nx * ny);
  }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto v : counts) n += v;
    return n;
  }
};

namespace detail {

inline void accumulate_event(VoxelGrid& g, const EventPoint& e) {
  const std::int64_t cx = e.x / g.cell_a;
  const std::int64_t cy = e.y / g.cell_b;
  const std::int64_t ct = static_cast<std::int64_t>((e.t - g.t0) / g.cell_c);
  const std::int64_t cell = g.cell_index(cx, cy, ct);
  ++g.counts[static_cast<std::size_t>(cell)];
  g.polarity[static_cast<std::size_t>(cell)] += e.p ? 1 : -1;

  const int s = g.micro_s;
  const std::int64_t lx = e.x - cx * static_cast<std::int64_t>(g.cell_a);
  const std::int64_t ly = e.y - cy * static_cast<std::int64_t>(g.cell_b);
  const std::uint64_t lt = (e.t - g.t0) - static_cast<std::uint64_t>(ct) * g.cell_c;
  const auto mx = std::min<std::int64_t>(s - 1, lx * s / g.cell_a);
  const auto my = std::min<std::int64_t>(s - 1, ly * s / g.cell_b);
  const auto mt = std::min<std::int64_t>(
      s - 1, static_cast<std::int64_t>(lt * static_cast<std::uint64_t>(s) / g.cell_c));
  ++g.micro[static_cast<std::size_t>(cell * s * s * s + (mx * s + my) * s + mt)];
}

inline VoxelGrid make_grid(std::uint32_t width, std::uint32_t height, std::uint64_t t0,
                           std::uint64_t tick_span, std::uint32_t a, std::uint32_t b,
                           std::uint64_t c, int micro_s) {
  stream_check(a >= 1 && b >= 1 && c >= 1, "voxel cell edges must be >= 1");
  stream_check(micro_s >= 1, "micro-binning factor must be >= 1");
  VoxelGrid g;
  g.cell_a = a;
  g.cell_b = b;
  g.cell_c = c;
  g.t0 = t0;
  g.micro_s = micro_s;
  g.nx = static_cast<std::int64_t>((width + a - 1) / a);
  g.ny = static_cast<std::int64_t>((height + b - 1) / b);
  g.nt = static_cast<std::int64_t>((tick_span + c - 1) / c);
  if (g.nt < 1) g.nt = 1;  // window with no events still forms one time slab
  const auto cells = static_cast<std::size_t>(g.cell_count());
  g.counts.assign(cells, 0);
  g.polarity.assign(cells, 0);
  g.micro.assign(cells * static_cast<std::size_t>(micro_s * micro_s * micro_s), 0);
  return g;
}

}  // namespace detail

// Buckets the whole stream. Grid dims are ceil(W/a) x ceil(H/b) x
// ceil(span/c) with span counted in inclusive microsecond ticks.
inline VoxelGrid voxelize(const EventStream& s, std::uint32_t a, std::uint32_t b,
                          std::uint64_t c, int micro_s = 2) {
  const std::uint64_t span = stream_tick_span(s);
  VoxelGrid g = detail::make_grid(s.width, s.height, s.events.front().t, span, a, b, c, micro_s);
  for (const EventPoint& e : s.events) detail::accumulate_event(g, e);
  return g;
}

// Splits the stream into `clips` equal-duration windows and buckets each
// window into its own grid (time origin at the window start). Windows without
// events yield all-zero grids.
inline std::vector<VoxelGrid> clip_voxel_grids(const EventStream& s, std::int64_t clips,
                                               std::uint32_t a, std::uint32_t b, std::uint64_t c,
                                               int micro_s = 2) {
  const std::uint64_t span = stream_tick_span(s);
  const std::uint64_t t0 = s.events.front().t;
  const std::vector<std::uint64_t> bounds = window_boundaries(t0, span, clips);

  std::vector<VoxelGrid> grids;
  grids.reserve(static_cast<std::size_t>(clips));
  for (std::int64_t k = 0; k < clips; ++k)
    grids.push_back(detail::make_grid(s.width, s.height, bounds[static_cast<std::size_t>(k)],
                                      bounds[static_cast<std::size_t>(k) + 1] -
                                          bounds[static_cast<std::size_t>(k)],
                                      a, b, c, micro_s));
  for (const EventPoint& e : s.events) {
    const std::int64_t k = window_index(e.t, t0, span, clips);
    detail::accumulate_event(grids[static_cast<std::size_t>(k)], e);
  }
  return grids;
}

// Fixed-length cell descriptor: the s^3 micro histogram flattened, then
// [count, polarity sum]. Empty cells give the zero vector.
inline std::vector<double> voxel_descriptor(const VoxelGrid& g, std::int64_t cell) {
  stream_check(cell >= 0 && cell < g.cell_count(),
               "cell index out of range: " + std::to_string(cell));
  const int s3 = g.micro_s * g.micro_s * g.micro_s;
  std::vector<double> d(static_cast<std::size_t>(s3) + 2);
  for (int i = 0; i < s3; ++i)
    d[static_cast<std::size_t>(i)] =
        static_cast<double>(g.micro[static_cast<std::size_t>(cell) * s3 + i]);
  d[static_cast<std::size_t>(s3)] = static_cast<double>(g.counts[static_cast<std::size_t>(cell)]);
  d[static_cast<std::size_t>(s3) + 1] =
      static_cast<double>(g.polarity[static_cast<std::size_t>(cell)]);
  return d;
}

inline std::int64_t voxel_descriptor_length(int micro_s) {
  return static_cast<std::int64_t>(micro_s) * micro_s * micro_s + 2;
}

// Debug dump of occupied cells: `cx,cy,ct,count,polarity_sum`.
inline void write_voxel_csv(const VoxelGrid& g, std::ostream& out) {
  out << "cx,cy,ct,count,polarity_sum\n";
  for (std::int64_t i = 0; i < g.cell_count(); ++i) {
    if (g.counts[static_cast<std::size_t>(i)] == 0) continue;
    std::int64_t cx, cy, ct;
    g.cell_coords(i, cx, cy, ct);
    out << cx << ',' << cy << ',' << ct << ',' << g.counts[static_cast<std::size_t>(i)] << ','
        << g.polarity[static_cast<std::size_t>(i)] << "\n";
  }
}

}  // namespace evs
