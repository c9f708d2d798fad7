#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "evs/event_stream.hpp"
#include "evs/rng.hpp"

namespace evs {

// Motion-pattern categories for synthetic sensor data. Each emits a
// characteristic trajectory; patterns differ in where activity lives and how
// it moves, so both frame and voxel views can separate them.
inline constexpr int kCategoryCount = 5;

inline constexpr std::array<const char*, kCategoryCount> kCategoryNames = {
    "translating_bar", "rotating_dot", "expanding_ring", "zigzag_point", "two_body_crossing"};

inline int category_index(const std::string& name) {
  for (int i = 0; i < kCategoryCount; ++i)
    if (name == kCategoryNames[static_cast<std::size_t>(i)]) return i;
  return -1;
}

// 10% of emitted events are uniform background noise.
inline constexpr double kNoiseFraction = 0.1;

namespace detail {

inline std::uint16_t clamp_pix(double v, std::uint32_t extent) {
  long r = std::lround(v);
  if (r < 0) r = 0;
  if (r >= static_cast<long>(extent)) r = static_cast<long>(extent) - 1;
  return static_cast<std::uint16_t>(r);
}

}  // namespace detail

// Deterministic synthetic recording: `rate_per_ms` events per millisecond on
// average, of which a fixed fraction is uniform noise and the rest follows
// the category's motion pattern. Pure function of its arguments.
inline EventStream synthesize_stream(int category, std::uint64_t seed, std::uint32_t width,
                                     std::uint32_t height, std::uint64_t duration_us,
                                     double rate_per_ms) {
  stream_check(category >= 0 && category < kCategoryCount,
               "unknown generator id: " + std::to_string(category));
  stream_check(width >= 8 && height >= 8, "generator needs width and height >= 8");
  stream_check(duration_us > 0, "generator needs positive duration");
  stream_check(rate_per_ms > 0, "generator needs positive event rate");

  const std::int64_t n_total =
      std::llround(rate_per_ms * static_cast<double>(duration_us) / 1000.0);
  const std::int64_t n_noise = std::llround(static_cast<double>(n_total) * kNoiseFraction);
  const std::int64_t n_signal = n_total - n_noise;

  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(category)));
  EventStream s;
  s.width = width;
  s.height = height;
  s.label = category;
  s.events.reserve(static_cast<std::size_t>(n_total));

  const double w1 = width - 1.0, h1 = height - 1.0;
  const double margin = width / 8.0;
  const double cx = w1 / 2.0, cy = h1 / 2.0;
  const double rmax = 0.45 * std::min(w1, h1);
  const double jitter = 0.7;

  for (std::int64_t i = 0; i < n_signal; ++i) {
    const double tau = (static_cast<double>(i) + 0.5) / static_cast<double>(n_signal);
    EventPoint e;
    e.t = std::min<std::uint64_t>(
        duration_us - 1, static_cast<std::uint64_t>(tau * static_cast<double>(duration_us)));
    switch (category) {
      case 0: {  // vertical bar sweeping left to right; leading edge positive
        const double bar_x = margin + tau * (w1 - 2.0 * margin);
        const double dx = rng.normal() * jitter;
        e.x = detail::clamp_pix(bar_x + dx, width);
        e.y = detail::clamp_pix(height / 4.0 + rng.uniform(0.0, height / 2.0), height);
        e.p = dx >= 0.0 ? 1 : 0;
        break;
      }
      case 1: {  // dot orbiting the center, two revolutions
        const double th = 2.0 * 3.14159265358979323846 * 2.0 * tau;
        e.x = detail::clamp_pix(cx + 0.78 * rmax * std::cos(th) + rng.normal() * jitter, width);
        e.y = detail::clamp_pix(cy + 0.78 * rmax * std::sin(th) + rng.normal() * jitter, height);
        e.p = std::sin(th) > 0.0 ? 1 : 0;
        break;
      }
      case 2: {  // ring expanding from the center; bright leading edge
        const double r = tau * rmax;
        const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        e.x = detail::clamp_pix(cx + r * std::cos(phi) + rng.normal() * 0.4, width);
        e.y = detail::clamp_pix(cy + r * std::sin(phi) + rng.normal() * 0.4, height);
        e.p = rng.below(10) > 0 ? 1 : 0;
        break;
      }
      case 3: {  // point descending while bouncing left-right (4 half sweeps)
        double phase = std::fmod(tau * 4.0, 2.0);
        const bool rightwards = phase < 1.0;
        if (!rightwards) phase = 2.0 - phase;
        e.x = detail::clamp_pix(margin + phase * (w1 - 2.0 * margin) + rng.normal() * jitter,
                                width);
        e.y = detail::clamp_pix(tau * h1 + rng.normal() * jitter, height);
        e.p = rightwards ? 1 : 0;
        break;
      }
      default: {  // two dots crossing on opposite horizontal tracks
        const bool first = (i % 2) == 0;
        const double along = margin + tau * (w1 - 2.0 * margin);
        const double wob = 1.5 * std::sin(tau * 6.0 + (first ? 0.0 : 2.0));
        e.x = detail::clamp_pix(first ? along : w1 - along, width);
        e.y = detail::clamp_pix((first ? h1 / 3.0 : 2.0 * h1 / 3.0) + wob + rng.normal() * jitter,
                                height);
        e.p = first ? 1 : 0;
        break;
      }
    }
    s.events.push_back(e);
  }

  for (std::int64_t i = 0; i < n_noise; ++i) {
    EventPoint e;
    e.t = rng.next_u64() % duration_us;
    e.x = static_cast<std::uint16_t>(rng.below(width));
    e.y = static_cast<std::uint16_t>(rng.below(height));
    e.p = static_cast<std::uint8_t>(rng.below(2));
    s.events.push_back(e);
  }

  sort_events(s);
  validate_stream(s);
  return s;
}

}  // namespace evs
