#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "evs/config.hpp"
#include "evs/frames.hpp"
#include "evs/nn.hpp"
#include "evs/ops.hpp"
#include "evs/rng.hpp"
#include "evs/ssm.hpp"
#include "evs/tensor.hpp"
#include "evs/voxel_scan.hpp"

namespace evs {

inline constexpr double kLogClamp = 1e-7;

// Preprocessed representations of one sample, ready for the forward pass.
// Frames are already normalized (per-frame max, fallback 1 for empty frames);
// token values/mask come from the voxel scan. All tensors are constants.
template <typename S>
struct ModelInput {
  Tensor<S> frames;      // [T', 2, H', W']
  Tensor<S> tokens;      // [K, L, d_v]; undefined when the voxel branch is off
  Tensor<S> token_mask;  // [K*L] of 0/1
  std::int64_t valid_tokens = 0;
  std::int32_t label = -1;
};

// Voxel cell edges: explicit config values, or the documented defaults of
// width/16 pixels and span/frames microseconds.
inline void voxel_cell_sizes(const Config& cfg, const EventStream& s, std::uint32_t& a,
                             std::uint32_t& b, std::uint64_t& c) {
  a = b = cfg.cell_px > 0 ? static_cast<std::uint32_t>(cfg.cell_px)
                          : std::max<std::uint32_t>(1, s.width / 16);
  c = cfg.cell_us > 0
          ? static_cast<std::uint64_t>(cfg.cell_us)
          : std::max<std::uint64_t>(1, stream_tick_span(s) / static_cast<std::uint64_t>(cfg.frames));
}

inline ScanParams scan_params(const Config& cfg) {
  ScanParams sp;
  sp.min_count = static_cast<std::uint32_t>(cfg.min_count);
  sp.per_clip_budget = cfg.per_clip_budget;
  sp.min_length = cfg.min_traj_length;
  sp.min_similarity = cfg.min_similarity;
  return sp;
}

template <typename S>
ModelInput<S> prepare_input(const EventStream& stream, const Config& cfg) {
  ModelInput<S> in;
  in.label = stream.label;

  EventFrameStack stack = stack_frames(stream, cfg.frames, cfg.height, cfg.width);
  std::vector<S> fv(stack.counts.size());
  const std::int64_t slab = 2 * cfg.height * cfg.width;
  for (std::int64_t f = 0; f < cfg.frames; ++f) {
    std::uint32_t max_count = 0;
    for (std::int64_t i = 0; i < slab; ++i)
      max_count = std::max(max_count, stack.counts[static_cast<std::size_t>(f * slab + i)]);
    const S inv = max_count == 0 ? S(1) : S(1) / static_cast<S>(max_count);
    for (std::int64_t i = 0; i < slab; ++i)
      fv[static_cast<std::size_t>(f * slab + i)] =
          static_cast<S>(stack.counts[static_cast<std::size_t>(f * slab + i)]) * inv;
  }
  in.frames = Tensor<S>::from_data({cfg.frames, 2, cfg.height, cfg.width}, std::move(fv));

  if (cfg.voxel_branch) {
    std::uint32_t a, b;
    std::uint64_t c;
    voxel_cell_sizes(cfg, stream, a, b, c);
    VoxelTokenSequence seq =
        scan_tokens(stream, cfg.clips, cfg.voxel_budget, a, b, c, scan_params(cfg),
                    static_cast<int>(cfg.micro_s));
    std::vector<S> tv(seq.values.size());
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = static_cast<S>(seq.values[i]);
    std::vector<S> mv(seq.mask.size());
    for (std::size_t i = 0; i < mv.size(); ++i) mv[i] = static_cast<S>(seq.mask[i]);
    in.tokens =
        Tensor<S>::from_data({cfg.voxel_budget, cfg.clips, cfg.descriptor_dim()}, std::move(tv));
    in.token_mask = Tensor<S>::from_data({cfg.voxel_budget * cfg.clips}, std::move(mv));
    in.valid_tokens = seq.valid_count();
  }
  return in;
}

// Mean over the rows of x ([R, n]) selected by a 0/1 mask of length R; the
// all-masked case yields a constant zero vector.
template <typename S>
Tensor<S> masked_mean_rows(const Tensor<S>& x, const Tensor<S>& mask, std::int64_t n_valid) {
  const std::int64_t rows = mask.numel();
  const std::int64_t n = x.numel() / rows;
  if (n_valid == 0) return Tensor<S>::zeros({n});
  Tensor<S> summed = mean_pool(row_scale(x, mask), {0});
  return scale(summed, static_cast<S>(rows) / static_cast<S>(n_valid));
}

template <typename S>
class Model {
 public:
  explicit Model(const Config& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.seed, 0x9e77u));
    const std::int64_t d = cfg_.dim;
    const std::int64_t patch_in = 2 * cfg_.patch * cfg_.patch;

    patch_w_ = store_.add("patch.w", {d, patch_in}, init_linear_weight<S>(rng, d, patch_in));
    patch_b_ = store_.add("patch.b", {d}, init_zeros<S>(d), false);
    // Event frames are sparse, so many patches are identical (often all-zero).
    // A per-position embedding keeps rows distinct, which the block norms need:
    // constant rows have zero variance and make their backward pass blow up.
    patch_pos_ = store_.add(
        "patch.pos", {cfg_.patch_rows(), cfg_.patch_cols(), d},
        init_uniform<S>(rng, cfg_.patch_rows() * cfg_.patch_cols() * d, 0.1), false);
    for (std::int64_t i = 0; i < cfg_.depth; ++i)
      spatial_.push_back(make_vss_params<S>(store_, "spatial.block" + std::to_string(i), d,
                                            cfg_.n_state, cfg_.conv_k, rng));

    if (cfg_.voxel_branch) {
      const std::int64_t dv = cfg_.descriptor_dim();
      voxel_w_ = store_.add("voxel.w", {d, dv}, init_linear_weight<S>(rng, d, dv));
      voxel_b_ = store_.add("voxel.b", {d}, init_zeros<S>(d), false);
      // Masked token slots are all-zero rows; same duplicate-row concern as
      // the patch grid.
      voxel_pos_ = store_.add(
          "voxel.pos", {cfg_.voxel_budget, cfg_.clips, d},
          init_uniform<S>(rng, cfg_.voxel_budget * cfg_.clips * d, 0.1), false);
      for (std::int64_t i = 0; i < cfg_.depth; ++i)
        temporal_.push_back(make_vss_params<S>(store_, "temporal.block" + std::to_string(i), d,
                                               cfg_.n_state, cfg_.conv_k, rng));
      if (cfg_.fusion == "concat") {
        fuse_w_ = store_.add("fuse.w", {d, 2 * d}, init_linear_weight<S>(rng, d, 2 * d));
        fuse_b_ = store_.add("fuse.b", {d}, init_zeros<S>(d), false);
      }
      if (cfg_.fusion == "b-matrix" || cfg_.fusion == "a-matrix") {
        // Gate-controlled interaction: each spatial block receives a signal
        // projected from the pooled temporal features into state space.
        for (std::int64_t i = 0; i < cfg_.depth; ++i) {
          const std::string fp = "fusion.block" + std::to_string(i);
          gates_.push_back(
              store_.add(fp + ".gate", {cfg_.n_state}, init_zeros<S>(cfg_.n_state), false));
          inject_w_.push_back(store_.add(fp + ".w", {cfg_.n_state, d},
                                         init_linear_weight<S>(rng, cfg_.n_state, d)));
        }
      }
    }
    head_w_ = store_.add("head.w", {cfg_.categories, d},
                         init_linear_weight<S>(rng, cfg_.categories, d));
    head_b_ = store_.add("head.b", {cfg_.categories}, init_zeros<S>(cfg_.categories), false);
  }

  const Config& config() const { return cfg_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }

  // Logits [categories] for one sample.
  Tensor<S> forward(const ModelInput<S>& in) const {
    const bool matrix_mode =
        cfg_.voxel_branch && (cfg_.fusion == "b-matrix" || cfg_.fusion == "a-matrix");

    Tensor<S> temporal_vec;
    if (cfg_.voxel_branch) temporal_vec = run_temporal(in);

    Tensor<S> spatial = run_spatial(in, matrix_mode, temporal_vec);

    Tensor<S> fused;
    if (!cfg_.voxel_branch || matrix_mode) {
      fused = spatial;
    } else if (cfg_.fusion == "add") {
      fused = add_channels(spatial, temporal_vec);
    } else {  // concat
      Tensor<S> tiled =
          add_channels(Tensor<S>::zeros({cfg_.patch_rows(), cfg_.patch_cols(), cfg_.dim}),
                       temporal_vec);
      fused = linear(concat<S>({spatial, tiled}, 2), fuse_w_, fuse_b_);
    }

    Tensor<S> pooled = mean_pool(fused, {0, 1});  // [d]
    return linear(pooled, head_w_, head_b_);
  }

  Tensor<S> loss(const Tensor<S>& logits, std::int64_t label) const {
    tensor_check(label >= 0 && label < cfg_.categories,
                 "label out of range: " + std::to_string(label));
    const S eps = static_cast<S>(kLogClamp);
    if (cfg_.loss == "softmax-ce") {
      Tensor<S> p = softmax(logits, 0);
      Tensor<S> picked = narrow_last(p, label, 1);
      return neg(log_op(clamp_min(picked, eps)));
    }
    // eq5-bce: mean over categories of -[y log yh + (1-y) log(1-yh)]
    std::vector<S> y(static_cast<std::size_t>(cfg_.categories), S(0));
    y[static_cast<std::size_t>(label)] = S(1);
    std::vector<S> yc(static_cast<std::size_t>(cfg_.categories), S(1));
    yc[static_cast<std::size_t>(label)] = S(0);
    Tensor<S> one_hot = Tensor<S>::from_data({cfg_.categories}, std::move(y));
    Tensor<S> one_hot_c = Tensor<S>::from_data({cfg_.categories}, std::move(yc));
    Tensor<S> ones = Tensor<S>::filled({cfg_.categories}, S(1));
    Tensor<S> yh = sigmoid(logits);
    Tensor<S> pos = mul(one_hot, log_op(clamp_min(yh, eps)));
    Tensor<S> negt = mul(one_hot_c, log_op(clamp_min(sub(ones, yh), eps)));
    return neg(mean_all(add(pos, negt)));
  }

 private:
  // Temporal branch: voxel tokens through the VSS stack, masked mean pool.
  // An all-masked sample contributes exactly zero.
  Tensor<S> run_temporal(const ModelInput<S>& in) const {
    tensor_check(in.tokens.defined(), "voxel branch enabled but sample has no tokens");
    if (in.valid_tokens == 0) return Tensor<S>::zeros({cfg_.dim});
    Tensor<S> x =
        add(row_scale(linear(in.tokens, voxel_w_, voxel_b_), in.token_mask), voxel_pos_);
    for (std::size_t i = 0; i < temporal_.size(); ++i) x = vss_block(x, temporal_[i]);
    Tensor<S> flat = reshape(x, {cfg_.voxel_budget * cfg_.clips, cfg_.dim});
    return masked_mean_rows(flat, in.token_mask, in.valid_tokens);
  }

  // Spatial branch: each frame through the shared stack, mean over frames.
  // In matrix mode each block's scan receives a gate-controlled signal
  // projected from the pooled temporal features: added to B for b-matrix,
  // added (kept negative via softplus) to the state diagonal for a-matrix.
  Tensor<S> run_spatial(const ModelInput<S>& in, bool matrix_mode,
                        const Tensor<S>& temporal_vec) const {
    std::vector<Ss2dHooks<S>> hooks;
    if (matrix_mode) {
      hooks.resize(spatial_.size());
      for (std::size_t i = 0; i < spatial_.size(); ++i) {
        Tensor<S> proj = linear(temporal_vec, inject_w_[i]);
        if (cfg_.fusion == "b-matrix")
          hooks[i].b_inject = mul(sigmoid(gates_[i]), proj);
        else
          hooks[i].a_inject = mul(sigmoid(gates_[i]), neg(softplus(proj)));
      }
    }
    Tensor<S> acc;
    for (std::int64_t f = 0; f < cfg_.frames; ++f) {
      Tensor<S> x = embed_frame(in, f);
      for (std::size_t i = 0; i < spatial_.size(); ++i)
        x = vss_block(x, spatial_[i], matrix_mode ? &hooks[i] : nullptr);
      acc = f == 0 ? x : add(acc, x);
    }
    return scale(acc, S(1) / static_cast<S>(cfg_.frames));
  }

  // Non-overlapping patches of one frame, flattened and projected.
  Tensor<S> embed_frame(const ModelInput<S>& in, std::int64_t f) const {
    const std::int64_t p = cfg_.patch, hp = cfg_.patch_rows(), wp = cfg_.patch_cols();
    const std::int64_t patch_in = 2 * p * p;
    std::vector<S> pv(static_cast<std::size_t>(hp * wp * patch_in));
    const S* base = in.frames.data() + f * 2 * cfg_.height * cfg_.width;
    for (std::int64_t iy = 0; iy < hp; ++iy)
      for (std::int64_t ix = 0; ix < wp; ++ix) {
        S* dst = pv.data() + (iy * wp + ix) * patch_in;
        for (std::int64_t ch = 0; ch < 2; ++ch)
          for (std::int64_t dy = 0; dy < p; ++dy)
            for (std::int64_t dx = 0; dx < p; ++dx)
              dst[(ch * p + dy) * p + dx] =
                  base[(ch * cfg_.height + iy * p + dy) * cfg_.width + ix * p + dx];
      }
    Tensor<S> patches = Tensor<S>::from_data({hp * wp, patch_in}, std::move(pv));
    return add(reshape(linear(patches, patch_w_, patch_b_), {hp, wp, cfg_.dim}), patch_pos_);
  }

  Config cfg_;
  ParamStore<S> store_;
  Tensor<S> patch_w_, patch_b_, patch_pos_;
  std::vector<VssBlockParams<S>> spatial_;
  Tensor<S> voxel_w_, voxel_b_, voxel_pos_;
  std::vector<VssBlockParams<S>> temporal_;
  Tensor<S> fuse_w_, fuse_b_;
  std::vector<Tensor<S>> gates_;
  std::vector<Tensor<S>> inject_w_;
  Tensor<S> head_w_, head_b_;
};

}  // namespace evs
