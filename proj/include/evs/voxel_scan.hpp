#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "evs/event_stream.hpp"
#include "evs/voxels.hpp"

namespace evs {

// One retained cell of a clip grid: its flat cell index, event count, and
// descriptor.
struct InformativeVoxel {
  std::int64_t cell = 0;
  std::uint32_t count = 0;
  std::vector<double> descriptor;
};

// The informative cells of one clip, sorted by descending count then
// ascending cell index, truncated to the per-clip budget.
struct InformativeVoxelSet {
  std::int64_t clip = 0;
  std::vector<InformativeVoxel> voxels;
};

struct TrajectoryStep {
  std::int64_t clip = 0;
  std::int64_t cell = 0;
  double similarity = 1.0;  // to the previous step; 1 for the seed
};

struct VoxelTrajectory {
  std::int64_t start_clip = 0;
  std::vector<TrajectoryStep> steps;                // consecutive clips
  std::vector<std::vector<double>> descriptors;     // one per step
  std::uint64_t total_count = 0;

  std::int64_t length() const { return static_cast<std::int64_t>(steps.size()); }
};

// Fixed-budget token layout: K rows of L clip slots, each slot a d-vector.
// Slots outside a trajectory's span are zero with mask 0.
struct VoxelTokenSequence {
  std::int64_t budget = 0;  // K
  std::int64_t clips = 0;   // L
  std::int64_t dim = 0;     // descriptor length
  std::vector<double> values;      // [K][L][dim]
  std::vector<std::uint8_t> mask;  // [K][L]

  std::int64_t valid_count() const {
    std::int64_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

struct ScanParams {
  std::uint32_t min_count = 1;   // informative threshold on cell event count
  std::int64_t per_clip_budget = 64;
  std::int64_t min_length = 1;   // trajectory length filter
  double min_similarity = -1.0;  // matching floor; -1 disables
};

inline double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
  stream_check(u.size() == v.size(), "cosine similarity needs equal-length vectors");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  stream_check(nu > 0.0 && nv > 0.0, "cosine similarity of a zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

inline std::vector<InformativeVoxelSet> filter_informative(const std::vector<VoxelGrid>& clips,
                                                           std::uint32_t min_count,
                                                           std::int64_t per_clip_budget = 64) {
  stream_check(min_count >= 1, "informative threshold must be >= 1");
  stream_check(per_clip_budget >= 1, "per-clip budget must be >= 1");
  std::vector<InformativeVoxelSet> sets;
  sets.reserve(clips.size());
  for (std::size_t k = 0; k < clips.size(); ++k) {
    const VoxelGrid& g = clips[k];
    InformativeVoxelSet set;
    set.clip = static_cast<std::int64_t>(k);
    for (std::int64_t cell = 0; cell < g.cell_count(); ++cell) {
      const std::uint32_t c = g.counts[static_cast<std::size_t>(cell)];
      if (c >= min_count) set.voxels.push_back({cell, c, {}});
    }
    std::sort(set.voxels.begin(), set.voxels.end(),
              [](const InformativeVoxel& a, const InformativeVoxel& b) {
                return a.count != b.count ? a.count > b.count : a.cell < b.cell;
              });
    if (static_cast<std::int64_t>(set.voxels.size()) > per_clip_budget)
      set.voxels.resize(static_cast<std::size_t>(per_clip_budget));
    for (auto& v : set.voxels) v.descriptor = voxel_descriptor(g, v.cell);
    sets.push_back(std::move(set));
  }
  return sets;
}

// Position (within the ordered candidate list) of the candidate most similar
// to the query; earlier position wins ties. The `skip` predicate masks out
// candidates already claimed by another trajectory.
template <typename SkipFn>
std::optional<std::size_t> match_next_if(const std::vector<double>& query,
                                         const InformativeVoxelSet& candidates,
                                         double min_similarity, SkipFn skip) {
  std::optional<std::size_t> best;
  double best_sim = 0.0;
  for (std::size_t i = 0; i < candidates.voxels.size(); ++i) {
    if (skip(candidates.voxels[i])) continue;
    const double sim = cosine_similarity(query, candidates.voxels[i].descriptor);
    if (!best || sim > best_sim) {
      best = i;
      best_sim = sim;
    }
  }
  if (best && best_sim < min_similarity) return std::nullopt;
  return best;
}

inline std::optional<std::size_t> match_next(const std::vector<double>& query,
                                             const InformativeVoxelSet& candidates,
                                             double min_similarity = -1.0) {
  return match_next_if(query, candidates, min_similarity,
                       [](const InformativeVoxel&) { return false; });
}

// Greedy forward chaining. Seeds walk clips in order and each clip's voxels
// in their ranked order; a voxel placed into any trajectory (as seed or by
// matching) is absorbed and never reused, so trajectories are disjoint. A
// trajectory extends one clip at a time with the most similar unabsorbed
// candidate and stops at the first clip with none.
inline std::vector<VoxelTrajectory> build_trajectories(
    const std::vector<InformativeVoxelSet>& sets, double min_similarity = -1.0) {
  stream_check(!sets.empty(), "trajectory building needs at least one clip");
  const std::size_t n_clips = sets.size();
  std::vector<std::vector<std::uint8_t>> absorbed(n_clips);
  for (std::size_t k = 0; k < n_clips; ++k) absorbed[k].assign(sets[k].voxels.size(), 0);

  std::vector<VoxelTrajectory> trajectories;
  for (std::size_t k = 0; k < n_clips; ++k) {
    for (std::size_t seed = 0; seed < sets[k].voxels.size(); ++seed) {
      if (absorbed[k][seed]) continue;
      absorbed[k][seed] = 1;
      const InformativeVoxel* cur = &sets[k].voxels[seed];
      VoxelTrajectory traj;
      traj.start_clip = static_cast<std::int64_t>(k);
      traj.steps.push_back({static_cast<std::int64_t>(k), cur->cell, 1.0});
      traj.descriptors.push_back(cur->descriptor);
      traj.total_count = cur->count;
      for (std::size_t next = k + 1; next < n_clips; ++next) {
        const auto& cands = sets[next];
        const auto pos = match_next_if(
            cur->descriptor, cands, min_similarity,
            [&](const InformativeVoxel& v) {
              return absorbed[next][static_cast<std::size_t>(&v - cands.voxels.data())] != 0;
            });
        if (!pos) break;
        absorbed[next][*pos] = 1;
        const InformativeVoxel& nv = cands.voxels[*pos];
        traj.steps.push_back({static_cast<std::int64_t>(next), nv.cell,
                              cosine_similarity(cur->descriptor, nv.descriptor)});
        traj.descriptors.push_back(nv.descriptor);
        traj.total_count += nv.count;
        cur = &nv;
      }
      trajectories.push_back(std::move(traj));
    }
  }
  return trajectories;
}

inline std::vector<VoxelTrajectory> filter_by_length(const std::vector<VoxelTrajectory>& trajs,
                                                     std::int64_t min_length) {
  stream_check(min_length >= 1, "length threshold must be >= 1");
  std::vector<VoxelTrajectory> kept;
  for (const auto& t : trajs)
    if (t.length() >= min_length) kept.push_back(t);
  return kept;
}

// Keeps the top-K trajectories by total event count (stable under ties) and
// lays each along its clip axis.
inline VoxelTokenSequence to_token_sequence(const std::vector<VoxelTrajectory>& trajs,
                                            std::int64_t budget, std::int64_t clips,
                                            std::int64_t dim) {
  stream_check(budget >= 1 && clips >= 1 && dim >= 1, "token sequence dims must be >= 1");
  std::vector<std::size_t> order(trajs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trajs[a].total_count > trajs[b].total_count;
  });
  if (static_cast<std::int64_t>(order.size()) > budget)
    order.resize(static_cast<std::size_t>(budget));

  VoxelTokenSequence seq;
  seq.budget = budget;
  seq.clips = clips;
  seq.dim = dim;
  seq.values.assign(static_cast<std::size_t>(budget * clips * dim), 0.0);
  seq.mask.assign(static_cast<std::size_t>(budget * clips), 0);
  for (std::size_t row = 0; row < order.size(); ++row) {
    const VoxelTrajectory& t = trajs[order[row]];
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
      const std::int64_t clip = t.steps[s].clip;
      stream_check(clip >= 0 && clip < clips, "trajectory clip index out of range");
      stream_check(static_cast<std::int64_t>(t.descriptors[s].size()) == dim,
                   "descriptor length does not match token dim");
      seq.mask[row * static_cast<std::size_t>(clips) + static_cast<std::size_t>(clip)] = 1;
      std::copy(t.descriptors[s].begin(), t.descriptors[s].end(),
                seq.values.begin() +
                    (static_cast<std::int64_t>(row) * clips + clip) * dim);
    }
  }
  return seq;
}

// Full scan for one stream: clip grids -> informative sets -> trajectories ->
// length filter -> token sequence.
inline VoxelTokenSequence scan_tokens(const EventStream& s, std::int64_t clips,
                                      std::int64_t budget, std::uint32_t a, std::uint32_t b,
                                      std::uint64_t c, const ScanParams& params,
                                      int micro_s = 2) {
  const auto grids = clip_voxel_grids(s, clips, a, b, c, micro_s);
  const auto sets = filter_informative(grids, params.min_count, params.per_clip_budget);
  const auto trajs =
      filter_by_length(build_trajectories(sets, params.min_similarity), params.min_length);
  return to_token_sequence(trajs, budget, clips, voxel_descriptor_length(micro_s));
}

// Debug dump: `traj_id,clip,cx,cy,ct,similarity_to_prev` (seed rows print 1).
inline void write_trajectory_csv(const std::vector<VoxelTrajectory>& trajs,
                                 const std::vector<VoxelGrid>& grids, std::ostream& out) {
  out << "traj_id,clip,cx,cy,ct,similarity_to_prev\n";
  for (std::size_t id = 0; id < trajs.size(); ++id)
    for (const TrajectoryStep& st : trajs[id].steps) {
      const VoxelGrid& g = grids[static_cast<std::size_t>(st.clip)];
      std::int64_t cx, cy, ct;
      g.cell_coords(st.cell, cx, cy, ct);
      out << id << ',' << st.clip << ',' << cx << ',' << cy << ',' << ct << ','
          << st.similarity << "\n";
    }
}

}  // namespace evs
