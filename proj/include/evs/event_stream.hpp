#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evs {

class StreamError : public std::runtime_error {
 public:
  explicit StreamError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void stream_check(bool ok, const std::string& msg) {
  if (!ok) throw StreamError(msg);
}

// One sensor event: microsecond timestamp, pixel location, polarity in {0,1}
// (0 = brightness decrease, 1 = increase).
struct EventPoint {
  std::uint64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t p = 0;
};

inline bool operator==(const EventPoint& a, const EventPoint& b) {
  return a.t == b.t && a.x == b.x && a.y == b.y && a.p == b.p;
}

inline constexpr std::uint32_t kMaxSensorExtent = 65536;

// An event stream plus the sensor geometry it was recorded on. Events are
// kept sorted by timestamp (ties keep input order). `label` carries the
// category index when the stream came from a labeled dataset, else -1.
struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::int32_t label = -1;
  std::vector<EventPoint> events;

  std::uint64_t duration_us() const {
    return events.empty() ? 0 : events.back().t - events.front().t;
  }
};

inline void validate_stream(const EventStream& s) {
  stream_check(s.width >= 1 && s.width <= kMaxSensorExtent &&
                   s.height >= 1 && s.height <= kMaxSensorExtent,
               "sensor extent out of range: " + std::to_string(s.width) + "x" +
                   std::to_string(s.height));
  std::uint64_t prev_t = 0;
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const EventPoint& e = s.events[i];
    stream_check(e.x < s.width && e.y < s.height,
                 "event " + std::to_string(i) + " out of bounds: (" + std::to_string(e.x) +
                     "," + std::to_string(e.y) + ")");
    stream_check(e.p <= 1, "event " + std::to_string(i) + " has polarity " +
                               std::to_string(int(e.p)));
    stream_check(i == 0 || e.t >= prev_t,
                 "event " + std::to_string(i) + " breaks timestamp order");
    prev_t = e.t;
  }
}

// Lenient ingestion keeps out-of-order input by stably sorting it; bounds and
// polarity violations are still rejected by the validation that follows.
inline void sort_events(EventStream& s) {
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const EventPoint& a, const EventPoint& b) { return a.t < b.t; });
}

// ---------------------------------------------------------------------------
// text codec
//
//   # evt1 w=<width> h=<height>
//   <t>,<x>,<y>,<p>
//
// Later comment lines (leading '#') and blank lines are skipped.

namespace detail {

inline std::uint64_t parse_u64_field(const std::string& field, std::uint64_t max,
                                     std::size_t line_no, const char* what) {
  stream_check(!field.empty(), "line " + std::to_string(line_no) + ": empty " + what);
  std::uint64_t v = 0;
  for (char c : field) {
    stream_check(c >= '0' && c <= '9',
                 "line " + std::to_string(line_no) + ": non-numeric " + what + " '" + field + "'");
    stream_check(v <= (max - (c - '0')) / 10,
                 "line " + std::to_string(line_no) + ": " + what + " out of range");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

}  // namespace detail

inline EventStream parse_text(std::istream& in, bool strict = true) {
  EventStream s;
  std::string line;
  std::size_t line_no = 0;

  stream_check(static_cast<bool>(std::getline(in, line)), "line 1: missing header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  unsigned long w = 0, h = 0;
  stream_check(std::sscanf(line.c_str(), "# evt1 w=%lu h=%lu", &w, &h) == 2,
               "line 1: expected '# evt1 w=<width> h=<height>', got '" + line + "'");
  s.width = static_cast<std::uint32_t>(w);
  s.height = static_cast<std::uint32_t>(h);

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;

    std::string fields[4];
    std::size_t start = 0, fi = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        stream_check(fi < 4, "line " + std::to_string(line_no) + ": too many fields");
        fields[fi++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    stream_check(fi == 4, "line " + std::to_string(line_no) + ": expected 4 fields, got " +
                              std::to_string(fi));
    EventPoint e;
    e.t = detail::parse_u64_field(fields[0], UINT64_MAX, line_no, "timestamp");
    e.x = static_cast<std::uint16_t>(
        detail::parse_u64_field(fields[1], UINT16_MAX, line_no, "x"));
    e.y = static_cast<std::uint16_t>(
        detail::parse_u64_field(fields[2], UINT16_MAX, line_no, "y"));
    e.p = static_cast<std::uint8_t>(
        detail::parse_u64_field(fields[3], 255, line_no, "polarity"));
    stream_check(e.x < s.width && e.y < s.height,
                 "line " + std::to_string(line_no) + ": event out of bounds (" +
                     std::to_string(e.x) + "," + std::to_string(e.y) + ")");
    stream_check(e.p <= 1,
                 "line " + std::to_string(line_no) + ": polarity must be 0 or 1");
    if (strict)
      stream_check(s.events.empty() || e.t >= s.events.back().t,
                   "line " + std::to_string(line_no) + ": timestamps must be non-decreasing");
    s.events.push_back(e);
  }
  if (!strict) sort_events(s);
  validate_stream(s);
  return s;
}

inline void write_text(const EventStream& s, std::ostream& out) {
  out << "# evt1 w=" << s.width << " h=" << s.height << "\n";
  for (const EventPoint& e : s.events)
    out << e.t << ',' << e.x << ',' << e.y << ',' << int(e.p) << "\n";
  stream_check(static_cast<bool>(out), "write failure in text event stream");
}

// ---------------------------------------------------------------------------
// binary codec
//
// Header: magic "EVT1", u32 width, u32 height, u64 count (20 bytes), then
// `count` 14-byte records: u64 t, u16 x, u16 y, u8 p, u8 pad. Little-endian.

inline constexpr char kBinaryMagic[4] = {'E', 'V', 'T', '1'};
inline constexpr std::size_t kBinaryHeaderBytes = 20;
inline constexpr std::size_t kBinaryRecordBytes = 14;

inline EventStream parse_binary(std::istream& in, bool strict = true) {
  auto read_exact = [&](void* dst, std::size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    stream_check(static_cast<std::size_t>(in.gcount()) == n,
                 std::string("binary stream truncated while reading ") + what);
  };
  char magic[4];
  read_exact(magic, 4, "magic");
  stream_check(std::memcmp(magic, kBinaryMagic, 4) == 0, "bad magic in binary event stream");
  EventStream s;
  std::uint32_t w, h;
  std::uint64_t count;
  read_exact(&w, 4, "width");
  read_exact(&h, 4, "height");
  read_exact(&count, 8, "event count");
  s.width = w;
  s.height = h;
  s.events.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    unsigned char rec[kBinaryRecordBytes];
    read_exact(rec, kBinaryRecordBytes, "event record");
    EventPoint& e = s.events[i];
    std::memcpy(&e.t, rec + 0, 8);
    std::memcpy(&e.x, rec + 8, 2);
    std::memcpy(&e.y, rec + 10, 2);
    e.p = rec[12];
    stream_check(!strict || rec[13] == 0,
                 "record " + std::to_string(i) + ": nonzero pad byte");
  }
  if (!strict) sort_events(s);
  validate_stream(s);
  return s;
}

inline void write_binary(const EventStream& s, std::ostream& out) {
  out.write(kBinaryMagic, 4);
  out.write(reinterpret_cast<const char*>(&s.width), 4);
  out.write(reinterpret_cast<const char*>(&s.height), 4);
  const std::uint64_t count = s.events.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const EventPoint& e : s.events) {
    unsigned char rec[kBinaryRecordBytes] = {};
    std::memcpy(rec + 0, &e.t, 8);
    std::memcpy(rec + 8, &e.x, 2);
    std::memcpy(rec + 10, &e.y, 2);
    rec[12] = e.p;
    out.write(reinterpret_cast<const char*>(rec), kBinaryRecordBytes);
  }
  stream_check(static_cast<bool>(out), "write failure in binary event stream");
}

// ---------------------------------------------------------------------------
// file helpers; format picked by extension (.evt binary, anything else text)

inline bool is_binary_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".evt") == 0;
}

inline EventStream load_stream(const std::string& path, bool strict = true) {
  std::ifstream in(path, std::ios::binary);
  stream_check(static_cast<bool>(in), "cannot open event stream: " + path);
  return is_binary_path(path) ? parse_binary(in, strict) : parse_text(in, strict);
}

inline void save_stream(const EventStream& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  stream_check(static_cast<bool>(out), "cannot open for writing: " + path);
  if (is_binary_path(path)) write_binary(s, out);
  else write_text(s, out);
}

}  // namespace evs
