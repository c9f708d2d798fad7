#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "evs/checkpoint.hpp"
#include "evs/config.hpp"
#include "evs/dataset.hpp"
#include "evs/event_stream.hpp"
#include "evs/frames.hpp"
#include "evs/metrics.hpp"
#include "evs/model.hpp"
#include "evs/voxel_scan.hpp"
#include "evs/voxels.hpp"

namespace evs {

inline std::int64_t resolve_threads(std::int64_t requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<std::int64_t>(hc);
}

namespace detail {

// Runs fn(i) for i in [0, n). Each index writes only its own output slots,
// so results never depend on scheduling order. The first worker exception
// is rethrown on the calling thread.
template <typename F>
void parallel_for(std::int64_t n, std::int64_t threads, F&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (std::int64_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      try {
        for (std::int64_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset loading

inline std::vector<IndexEntry> read_split_index(const std::string& data_dir,
                                                const std::string& split) {
  return read_index((std::filesystem::path(data_dir) / split / "index.csv").string());
}

inline void check_category_count(const std::vector<IndexEntry>& entries, const Config& cfg,
                                 const std::string& split) {
  int max_cat = -1;
  for (const IndexEntry& e : entries) max_cat = std::max(max_cat, e.category_index);
  stream_check(max_cat + 1 == cfg.categories,
               "dataset/config category count mismatch in split '" + split + "': index has " +
                   std::to_string(max_cat + 1) + ", config expects " +
                   std::to_string(cfg.categories));
}

inline std::vector<std::string> index_category_names(const std::vector<IndexEntry>& entries,
                                                     std::int64_t categories) {
  std::vector<std::string> names(static_cast<std::size_t>(categories));
  for (const IndexEntry& e : entries)
    if (e.category_index < categories) names[static_cast<std::size_t>(e.category_index)] =
        e.category_name;
  return names;
}

// Load and preprocess every listed sample; labels come from the index.
template <typename S>
std::vector<ModelInput<S>> prepare_samples(const std::vector<IndexEntry>& entries,
                                           const Config& cfg, std::int64_t threads) {
  std::vector<ModelInput<S>> samples(entries.size());
  detail::parallel_for(static_cast<std::int64_t>(entries.size()), threads, [&](std::int64_t i) {
    EventStream s = load_stream(entries[static_cast<std::size_t>(i)].sample_path);
    s.label = entries[static_cast<std::size_t>(i)].category_index;
    samples[static_cast<std::size_t>(i)] = prepare_input<S>(s, cfg);
  });
  return samples;
}

template <typename S>
std::vector<ModelInput<S>> load_split(const std::string& data_dir, const std::string& split,
                                      const Config& cfg, std::int64_t threads) {
  const std::vector<IndexEntry> entries = read_split_index(data_dir, split);
  stream_check(!entries.empty(), "dataset split '" + split + "' is empty");
  check_category_count(entries, cfg, split);
  return prepare_samples<S>(entries, cfg, threads);
}

// ---------------------------------------------------------------------------
// evaluation

// Scores every sample with gradients disabled; parallel over samples with the
// model shared read-only. Recording order is the sample order, so the report
// is identical for any thread count.
template <typename S>
MetricsReport evaluate_model(const Model<S>& model, const std::vector<ModelInput<S>>& samples,
                             std::int64_t threads) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport report(model.config().categories);
  std::vector<std::vector<double>> scores(samples.size());
  detail::parallel_for(static_cast<std::int64_t>(samples.size()), threads, [&](std::int64_t i) {
    NoGradGuard guard;
    Tensor<S> logits = model.forward(samples[static_cast<std::size_t>(i)]);
    scores[static_cast<std::size_t>(i)].assign(logits.data(), logits.data() + logits.numel());
  });
  for (std::size_t i = 0; i < samples.size(); ++i) report.record(samples[i].label, scores[i]);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// training

struct EpochRecord {
  std::int64_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double test_top1 = 0.0;
};

struct TrainOutcome {
  std::vector<EpochRecord> log;
  double best_top1 = -1.0;
  std::int64_t best_epoch = 0;  // 0 = only the initialized checkpoint exists
  double wall_seconds = 0.0;
};

// %.17g round-trips doubles exactly, so replayed runs can be compared as text.
inline std::string epoch_line(const EpochRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "epoch=%lld mean_loss=%.17g test_top1=%.6f",
                static_cast<long long>(r.epoch), r.mean_loss, r.test_top1);
  return buf;
}

namespace detail {

// One SGD step over a batch: gradient of the mean batch loss, then update.
// Returns the summed unscaled sample losses. With replicas, each worker owns
// a contiguous slice and a full model copy; gradients are reduced in replica
// order, so the result does not depend on scheduling.
template <typename S>
double train_batch(Model<S>& model, const std::vector<ModelInput<S>>& samples,
                   const std::int64_t* idx, std::int64_t count,
                   std::vector<std::unique_ptr<Model<S>>>& replicas) {
  const Config& cfg = model.config();
  model.params().zero_grad();
  const S inv = S(1) / static_cast<S>(count);
  double loss_sum = 0.0;

  const std::int64_t workers =
      std::min<std::int64_t>(static_cast<std::int64_t>(replicas.size()), count);
  if (workers <= 1) {
    for (std::int64_t k = 0; k < count; ++k) {
      const ModelInput<S>& in = samples[static_cast<std::size_t>(idx[k])];
      Tensor<S> l = model.loss(model.forward(in), in.label);
      loss_sum += static_cast<double>(l.item());
      backward(scale(l, inv));
    }
  } else {
    std::vector<double> sums(static_cast<std::size_t>(workers), 0.0);
    for (std::int64_t w = 0; w < workers; ++w) {
      replicas[static_cast<std::size_t>(w)]->params().zero_grad();
      replicas[static_cast<std::size_t>(w)]->params().copy_values_from(model.params());
    }
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::int64_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          Model<S>& rep = *replicas[static_cast<std::size_t>(w)];
          const std::int64_t lo = w * count / workers, hi = (w + 1) * count / workers;
          for (std::int64_t k = lo; k < hi; ++k) {
            const ModelInput<S>& in = samples[static_cast<std::size_t>(idx[k])];
            Tensor<S> l = rep.loss(rep.forward(in), in.label);
            sums[static_cast<std::size_t>(w)] += static_cast<double>(l.item());
            backward(scale(l, inv));
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    for (std::int64_t w = 0; w < workers; ++w) {
      ParamStore<S>& src = replicas[static_cast<std::size_t>(w)]->params();
      for (std::size_t p = 0; p < src.size(); ++p) {
        if (!src[p].tensor.has_grad()) continue;
        const std::vector<S>& g = src[p].tensor.grad_or_empty();
        std::vector<S>& dst = model.params()[p].tensor.grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
      }
      loss_sum += sums[static_cast<std::size_t>(w)];
    }
  }

  sgd_step<S>(model.params(), static_cast<S>(cfg.lr), static_cast<S>(cfg.weight_decay),
              static_cast<S>(cfg.momentum));
  return loss_sum;
}

}  // namespace detail

// Epochs of shuffled batch steps with one log record per epoch. The shuffle
// generator is seeded on its own lane, so data generation and training order
// can be varied independently. The best-test-top1 parameters are saved to
// ckpt_path (the initialized parameters first, covering epochs = 0), and
// training stops early once test top-1 reaches cfg.stop_top1.
template <typename S>
TrainOutcome train_model(Model<S>& model, const std::vector<ModelInput<S>>& train_set,
                         const std::vector<ModelInput<S>>& test_set,
                         const std::string& ckpt_path, std::ostream* progress = nullptr) {
  const Config& cfg = model.config();
  tensor_check(!train_set.empty() && !test_set.empty(), "training needs non-empty splits");
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t threads = resolve_threads(cfg.threads);

  TrainOutcome out;
  save_checkpoint(model.params(), ckpt_path);

  std::vector<std::unique_ptr<Model<S>>> replicas;
  if (threads > 1 && cfg.batch_size > 1)
    for (std::int64_t w = 0; w < std::min(threads, cfg.batch_size); ++w)
      replicas.emplace_back(new Model<S>(cfg));

  Rng shuffle_rng(mix_seed(cfg.seed, 0x51edu));
  const std::int64_t n = static_cast<std::int64_t>(train_set.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::int64_t lo = 0; lo < n; lo += cfg.batch_size)
      loss_sum += detail::train_batch(model, train_set, order.data() + lo,
                                      std::min(cfg.batch_size, n - lo), replicas);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(n);
    rec.test_top1 = evaluate_model(model, test_set, threads).top1();
    out.log.push_back(rec);
    if (progress) *progress << epoch_line(rec) << "\n" << std::flush;

    if (rec.test_top1 > out.best_top1) {
      out.best_top1 = rec.test_top1;
      out.best_epoch = epoch;
      save_checkpoint(model.params(), ckpt_path);
    }
    if (rec.test_top1 >= cfg.stop_top1) break;
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// commands

inline void cmd_gen(const Config& cfg, const std::string& out_dir) {
  cfg.validate();
  DatasetGenConfig g;
  g.out_dir = out_dir;
  g.categories = static_cast<int>(cfg.categories);
  g.train_per_category = static_cast<int>(cfg.train_per_category);
  g.test_per_category = static_cast<int>(cfg.test_per_category);
  g.width = static_cast<std::uint32_t>(cfg.width);
  g.height = static_cast<std::uint32_t>(cfg.height);
  g.duration_us = cfg.duration_us;
  g.rate_per_ms = cfg.rate_per_ms;
  g.seed = cfg.seed;
  write_dataset(g);
}

// Trains on <data_dir>/train, tracks test top-1, writes <out_dir>/best.ckpt
// and <out_dir>/train_log.txt.
template <typename S = float>
TrainOutcome cmd_train(const Config& cfg, const std::string& data_dir, const std::string& out_dir,
                       std::ostream* progress = nullptr) {
  cfg.validate();
  const std::int64_t threads = resolve_threads(cfg.threads);
  std::vector<ModelInput<S>> train_set = load_split<S>(data_dir, "train", cfg, threads);
  std::vector<ModelInput<S>> test_set = load_split<S>(data_dir, "test", cfg, threads);

  std::filesystem::create_directories(out_dir);
  const std::string ckpt_path = (std::filesystem::path(out_dir) / "best.ckpt").string();
  Model<S> model(cfg);
  TrainOutcome out = train_model(model, train_set, test_set, ckpt_path, progress);

  std::ofstream log_file(std::filesystem::path(out_dir) / "train_log.txt");
  stream_check(static_cast<bool>(log_file), "cannot write training log under: " + out_dir);
  for (const EpochRecord& r : out.log) log_file << epoch_line(r) << "\n";
  return out;
}

// Evaluates a checkpoint on <data_dir>/test, writes <out_dir>/metrics.txt and
// <out_dir>/confusion.csv, and prints the report.
template <typename S = float>
MetricsReport cmd_eval(const Config& cfg, const std::string& ckpt_path,
                       const std::string& data_dir, const std::string& out_dir,
                       std::ostream& report_out) {
  cfg.validate();
  const std::int64_t threads = resolve_threads(cfg.threads);
  Model<S> model(cfg);
  load_checkpoint(model.params(), ckpt_path);

  const std::vector<IndexEntry> entries = read_split_index(data_dir, "test");
  stream_check(!entries.empty(), "dataset split 'test' is empty");
  check_category_count(entries, cfg, "test");
  std::vector<ModelInput<S>> samples = prepare_samples<S>(entries, cfg, threads);

  MetricsReport report = evaluate_model(model, samples, threads);
  report.category_names = index_category_names(entries, cfg.categories);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream metrics_file(std::filesystem::path(out_dir) / "metrics.txt");
    stream_check(static_cast<bool>(metrics_file), "cannot write metrics under: " + out_dir);
    write_metrics_report(report, metrics_file);
    std::ofstream confusion_file(std::filesystem::path(out_dir) / "confusion.csv");
    stream_check(static_cast<bool>(confusion_file), "cannot write confusion CSV under: " + out_dir);
    write_confusion_csv(report, confusion_file);
  }
  write_metrics_report(report, report_out);
  return report;
}

// Diagnostics for one sample: stream stats, per-clip informative voxel
// counts, trajectories at the configured length threshold, and a threshold
// sweep. With out_dir set, also dumps voxel/trajectory CSVs and frame PGMs.
inline void cmd_inspect(const Config& cfg, const std::string& sample_path,
                        const std::string& out_dir, std::ostream& out) {
  cfg.validate();
  const EventStream s = load_stream(sample_path);
  out << "events=" << s.events.size() << "\n";
  out << "duration_us=" << s.duration_us() << "\n";
  if (s.events.empty()) {
    out << "trajectories=0\n";
    return;
  }

  std::uint32_t a, b;
  std::uint64_t c;
  voxel_cell_sizes(cfg, s, a, b, c);
  out << "cell_px=" << a << "\n";
  out << "cell_us=" << c << "\n";

  const std::vector<VoxelGrid> grids =
      clip_voxel_grids(s, cfg.clips, a, b, c, static_cast<int>(cfg.micro_s));
  const ScanParams sp = scan_params(cfg);
  const std::vector<InformativeVoxelSet> sets =
      filter_informative(grids, sp.min_count, sp.per_clip_budget);
  for (std::size_t k = 0; k < sets.size(); ++k)
    out << "clip." << k << ".informative=" << sets[k].voxels.size() << "\n";

  const std::vector<VoxelTrajectory> all = build_trajectories(sets, sp.min_similarity);
  const std::vector<VoxelTrajectory> kept = filter_by_length(all, sp.min_length);
  out << "delta=" << sp.min_length << "\n";
  out << "trajectories=" << kept.size() << "\n";
  out << "lengths=";
  for (std::size_t i = 0; i < kept.size(); ++i)
    out << (i ? "," : "") << kept[i].length();
  out << "\n";
  for (std::int64_t d = 1; d <= cfg.clips; ++d)
    out << "sweep.delta." << d << ".retained=" << filter_by_length(all, d).size() << "\n";

  if (!out_dir.empty()) {
    const std::filesystem::path root(out_dir);
    std::filesystem::create_directories(root);
    for (std::size_t k = 0; k < grids.size(); ++k) {
      std::ofstream vf(root / ("voxels_clip" + std::to_string(k) + ".csv"));
      stream_check(static_cast<bool>(vf), "cannot write voxel CSV under: " + out_dir);
      write_voxel_csv(grids[k], vf);
    }
    std::ofstream tf(root / "trajectories.csv");
    stream_check(static_cast<bool>(tf), "cannot write trajectory CSV under: " + out_dir);
    write_trajectory_csv(kept, grids, tf);
    const EventFrameStack stack = stack_frames(s, cfg.frames, cfg.height, cfg.width);
    for (std::int64_t f = 0; f < stack.frames; ++f)
      for (std::int64_t ch = 0; ch < 2; ++ch)
        write_frame_pgm(stack, f, ch,
                        (root / ("frame" + std::to_string(f) + "_p" + std::to_string(ch) + ".pgm"))
                            .string());
  }
}

}  // namespace evs
