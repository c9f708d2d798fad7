#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

// Indices of the k largest scores, ordered by descending score. Equal scores
// keep ascending index order, so rankings are deterministic.
inline std::vector<std::int64_t> top_k_indices(const std::vector<double>& scores,
                                               std::int64_t k) {
  tensor_check(k >= 1, "top_k_indices: k must be >= 1");
  std::vector<std::int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return scores[a] > scores[b]; });
  if (static_cast<std::size_t>(k) < order.size()) order.resize(static_cast<std::size_t>(k));
  return order;
}

// Accuracy and confusion bookkeeping over a stream of (label, scores) pairs.
// "top-5" uses k = min(5, categories). The confusion matrix is row-major with
// rows indexed by true category and columns by predicted category.
struct MetricsReport {
  std::int64_t categories = 0;
  std::int64_t samples = 0;
  std::int64_t top1_hits = 0;
  std::int64_t top5_hits = 0;
  std::vector<std::int64_t> confusion;
  std::vector<std::string> category_names;
  double wall_seconds = 0.0;

  explicit MetricsReport(std::int64_t n_categories)
      : categories(n_categories),
        confusion(static_cast<std::size_t>(n_categories * n_categories), 0) {
    tensor_check(n_categories >= 2, "metrics: category count must be >= 2");
  }

  void record(std::int64_t label, const std::vector<double>& scores) {
    tensor_check(label >= 0 && label < categories, "metrics: label out of range");
    tensor_check(static_cast<std::int64_t>(scores.size()) == categories,
                 "metrics: score vector size must match category count");
    const std::vector<std::int64_t> ranked =
        top_k_indices(scores, std::min<std::int64_t>(5, categories));
    ++samples;
    ++confusion[static_cast<std::size_t>(label * categories + ranked[0])];
    if (ranked[0] == label) ++top1_hits;
    if (std::find(ranked.begin(), ranked.end(), label) != ranked.end()) ++top5_hits;
  }

  std::int64_t at(std::int64_t truth, std::int64_t predicted) const {
    return confusion[static_cast<std::size_t>(truth * categories + predicted)];
  }
  std::int64_t row_total(std::int64_t truth) const {
    std::int64_t total = 0;
    for (std::int64_t c = 0; c < categories; ++c) total += at(truth, c);
    return total;
  }
  double top1() const { return samples == 0 ? 0.0 : double(top1_hits) / double(samples); }
  double top5() const { return samples == 0 ? 0.0 : double(top5_hits) / double(samples); }
  // A category with no evaluated samples reports accuracy 0.
  double category_accuracy(std::int64_t truth) const {
    const std::int64_t total = row_total(truth);
    return total == 0 ? 0.0 : double(at(truth, truth)) / double(total);
  }
  std::string name_of(std::int64_t c) const {
    if (static_cast<std::size_t>(c) < category_names.size()) return category_names[c];
    return "cat" + std::to_string(c);
  }
};

namespace detail {

inline std::string fixed6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

// Keys: samples, categories, top1, top5, wall_seconds, and one
// category.<name> accuracy line per category, all as key=value.
inline void write_metrics_report(const MetricsReport& report, std::ostream& out) {
  out << "samples=" << report.samples << "\n";
  out << "categories=" << report.categories << "\n";
  out << "top1=" << detail::fixed6(report.top1()) << "\n";
  out << "top5=" << detail::fixed6(report.top5()) << "\n";
  out << "wall_seconds=" << detail::fixed6(report.wall_seconds) << "\n";
  for (std::int64_t c = 0; c < report.categories; ++c)
    out << "category." << report.name_of(c) << "=" << detail::fixed6(report.category_accuracy(c))
        << "\n";
}

// One header row of predicted-category names, then one row per true category:
// its name followed by the counts predicted as each category.
inline void write_confusion_csv(const MetricsReport& report, std::ostream& out) {
  out << "true_category";
  for (std::int64_t c = 0; c < report.categories; ++c) out << "," << report.name_of(c);
  out << "\n";
  for (std::int64_t r = 0; r < report.categories; ++r) {
    out << report.name_of(r);
    for (std::int64_t c = 0; c < report.categories; ++c) out << "," << report.at(r, c);
    out << "\n";
  }
}

}  // namespace evs
