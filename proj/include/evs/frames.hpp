#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "evs/event_stream.hpp"
#include "evs/tensor.hpp"

namespace evs {

// Events accumulated into T frames of 2 polarity channels at an output
// resolution. Values are raw integer counts; any normalization is a model
// concern. boundaries[i] .. boundaries[i+1] is frame i's half-open time span.
struct EventFrameStack {
  std::int64_t frames = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint32_t> counts;           // [frames][2][height][width]
  std::vector<std::uint64_t> boundaries;       // frames + 1 entries

  std::uint32_t& at(std::int64_t f, std::int64_t ch, std::int64_t y, std::int64_t x) {
    return counts[static_cast<std::size_t>(((f * 2 + ch) * height + y) * width + x)];
  }
  std::uint32_t at(std::int64_t f, std::int64_t ch, std::int64_t y, std::int64_t x) const {
    return counts[static_cast<std::size_t>(((f * 2 + ch) * height + y) * width + x)];
  }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto v : counts) n += v;
    return n;
  }
};

// The stream's inclusive time span measured in microsecond ticks, so a single
// event occupies span 1 and every event falls in a half-open window.
inline std::uint64_t stream_tick_span(const EventStream& s) {
  stream_check(!s.events.empty(), "empty stream has no time span to divide");
  return s.events.back().t - s.events.front().t + 1;
}

// Half-open window boundaries splitting the span into `n` equal-duration
// parts: b_i = t0 + ceil(i * span / n). Strictly increasing iff span >= n.
inline std::vector<std::uint64_t> window_boundaries(std::uint64_t t0, std::uint64_t span,
                                                    std::int64_t n) {
  stream_check(n >= 1, "window count must be >= 1");
  stream_check(span >= static_cast<std::uint64_t>(n),
               "time span of " + std::to_string(span) + " ticks cannot be split into " +
                   std::to_string(n) + " windows");
  std::vector<std::uint64_t> b(static_cast<std::size_t>(n) + 1);
  for (std::int64_t i = 0; i <= n; ++i) {
    const std::uint64_t num = static_cast<std::uint64_t>(i) * span;
    b[static_cast<std::size_t>(i)] = t0 + (num + static_cast<std::uint64_t>(n) - 1) /
                                              static_cast<std::uint64_t>(n);
  }
  return b;
}

// Window index of timestamp t under the same split: floor((t-t0) * n / span).
inline std::int64_t window_index(std::uint64_t t, std::uint64_t t0, std::uint64_t span,
                                 std::int64_t n) {
  const std::uint64_t k = (t - t0) * static_cast<std::uint64_t>(n) / span;
  return std::min<std::int64_t>(static_cast<std::int64_t>(k), n - 1);
}

inline EventFrameStack stack_frames(const EventStream& s, std::int64_t frame_count,
                                    std::int64_t out_height, std::int64_t out_width) {
  stream_check(frame_count >= 1, "frame count must be >= 1");
  stream_check(out_height >= 1 && out_width >= 1, "output resolution must be >= 1");
  const std::uint64_t span = stream_tick_span(s);
  const std::uint64_t t0 = s.events.front().t;

  EventFrameStack stack;
  stack.frames = frame_count;
  stack.height = out_height;
  stack.width = out_width;
  stack.counts.assign(static_cast<std::size_t>(frame_count * 2 * out_height * out_width), 0);
  stack.boundaries = window_boundaries(t0, span, frame_count);

  for (const EventPoint& e : s.events) {
    const std::int64_t f = window_index(e.t, t0, span, frame_count);
    const std::int64_t px = static_cast<std::int64_t>(
        static_cast<std::uint64_t>(e.x) * static_cast<std::uint64_t>(out_width) / s.width);
    const std::int64_t py = static_cast<std::int64_t>(
        static_cast<std::uint64_t>(e.y) * static_cast<std::uint64_t>(out_height) / s.height);
    ++stack.at(f, e.p, py, px);
  }
  return stack;
}

// Raw counts as a [frames, 2, height, width] tensor.
template <typename S>
Tensor<S> frame_tensor(const EventFrameStack& stack) {
  std::vector<S> v(stack.counts.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(stack.counts[i]);
  return Tensor<S>::from_data({stack.frames, 2, stack.height, stack.width}, std::move(v));
}

// One frame channel as a binary PGM image, scaled to the channel's max count.
inline void write_frame_pgm(const EventFrameStack& stack, std::int64_t frame,
                            std::int64_t channel, const std::string& path) {
  stream_check(frame >= 0 && frame < stack.frames && channel >= 0 && channel < 2,
               "frame or channel index out of range");
  std::uint32_t max_count = 1;
  for (std::int64_t y = 0; y < stack.height; ++y)
    for (std::int64_t x = 0; x < stack.width; ++x)
      max_count = std::max(max_count, stack.at(frame, channel, y, x));
  std::ofstream out(path, std::ios::binary);
  stream_check(static_cast<bool>(out), "cannot open PGM for writing: " + path);
  out << "P5\n" << stack.width << " " << stack.height << "\n255\n";
  for (std::int64_t y = 0; y < stack.height; ++y)
    for (std::int64_t x = 0; x < stack.width; ++x) {
      const std::uint32_t c = stack.at(frame, channel, y, x);
      out.put(static_cast<char>(static_cast<unsigned char>(255u * c / max_count)));
    }
  stream_check(static_cast<bool>(out), "write failure in PGM export: " + path);
}

}  // namespace evs
