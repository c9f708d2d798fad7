#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "evs/event_stream.hpp"
#include "evs/rng.hpp"
#include "evs/synthetic.hpp"

namespace evs {

// Summary row describing one stored sample.
struct SampleInfo {
  std::string id;
  std::string category;
  std::uint64_t point_count = 0;
  std::uint64_t duration_us = 0;
};

struct IndexEntry {
  std::string sample_path;  // resolved against the index file's directory
  int category_index = -1;
  std::string category_name;
};

struct DatasetGenConfig {
  std::string out_dir;
  int categories = kCategoryCount;  // uses the first n synthetic patterns
  int train_per_category = 200;
  int test_per_category = 100;
  std::uint32_t width = 32;
  std::uint32_t height = 32;
  std::uint64_t duration_us = 100000;
  double rate_per_ms = 20.0;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::string sample_file_name(int category, int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d.evt", idx);
  return std::string(kCategoryNames[static_cast<std::size_t>(category)]) + "_" + buf;
}

inline void write_split(const std::filesystem::path& split_dir, int per_category,
                        std::uint64_t split_seed, const DatasetGenConfig& cfg) {
  std::filesystem::create_directories(split_dir);
  std::ofstream index(split_dir / "index.csv");
  stream_check(static_cast<bool>(index),
               "cannot write dataset index under: " + split_dir.string());
  index << "sample_path,category_index,category_name\n";
  for (int cat = 0; cat < cfg.categories; ++cat) {
    const std::string cat_name = kCategoryNames[static_cast<std::size_t>(cat)];
    std::filesystem::create_directories(split_dir / cat_name);
    for (int i = 0; i < per_category; ++i) {
      const std::uint64_t sample_seed =
          mix_seed(split_seed, (static_cast<std::uint64_t>(cat) << 32) |
                                   static_cast<std::uint64_t>(i));
      EventStream s = synthesize_stream(cat, sample_seed, cfg.width, cfg.height,
                                        cfg.duration_us, cfg.rate_per_ms);
      const std::string rel = cat_name + "/" + sample_file_name(cat, i);
      save_stream(s, (split_dir / rel).string());
      index << rel << ',' << cat << ',' << cat_name << "\n";
    }
  }
  stream_check(static_cast<bool>(index),
               "write failure in dataset index under: " + split_dir.string());
}

}  // namespace detail

// Writes <out>/{train,test}/<category>/<sample>.evt plus an index.csv per
// split. Fully determined by cfg.seed; per-sample seeds are derived so the
// split layout never depends on generation order.
inline void write_dataset(const DatasetGenConfig& cfg) {
  stream_check(cfg.train_per_category >= 1 && cfg.test_per_category >= 1,
               "dataset generation needs at least 1 sample per category and split");
  stream_check(cfg.categories >= 2 && cfg.categories <= kCategoryCount,
               "dataset generation supports 2.." + std::to_string(kCategoryCount) +
                   " categories");
  const std::filesystem::path root(cfg.out_dir);
  std::filesystem::create_directories(root);
  detail::write_split(root / "train", cfg.train_per_category, mix_seed(cfg.seed, 0), cfg);
  detail::write_split(root / "test", cfg.test_per_category, mix_seed(cfg.seed, 1), cfg);
}

inline std::vector<IndexEntry> read_index(const std::string& index_path) {
  std::ifstream in(index_path);
  stream_check(static_cast<bool>(in), "cannot open dataset index: " + index_path);
  const std::filesystem::path base = std::filesystem::path(index_path).parent_path();
  std::vector<IndexEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("sample_path", 0) == 0) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    stream_check(c1 != std::string::npos && c2 != std::string::npos,
                 "index line " + std::to_string(line_no) + ": expected 3 fields");
    IndexEntry e;
    e.sample_path = (base / line.substr(0, c1)).string();
    const std::string idx_str = line.substr(c1 + 1, c2 - c1 - 1);
    try {
      e.category_index = std::stoi(idx_str);
    } catch (const std::exception&) {
      throw StreamError("index line " + std::to_string(line_no) +
                        ": bad category index '" + idx_str + "'");
    }
    stream_check(e.category_index >= 0,
                 "index line " + std::to_string(line_no) + ": negative category index");
    e.category_name = line.substr(c2 + 1);
    entries.push_back(std::move(e));
  }
  return entries;
}

inline SampleInfo describe_sample(const std::string& path, const EventStream& s) {
  SampleInfo info;
  info.id = std::filesystem::path(path).stem().string();
  info.category = s.label >= 0 && s.label < kCategoryCount
                      ? kCategoryNames[static_cast<std::size_t>(s.label)]
                      : "unknown";
  info.point_count = s.events.size();
  info.duration_us = s.duration_us();
  return info;
}

}  // namespace evs
