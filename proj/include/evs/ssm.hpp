#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "evs/nn.hpp"
#include "evs/ops.hpp"
#include "evs/rng.hpp"
#include "evs/tensor.hpp"

namespace evs {

// ---------------------------------------------------------------------------
// discretization
//
// Zero-order hold on the state transition, simplified first-order hold on the
// input: Abar = exp(dt * A) elementwise, Bbar = dt * B.

template <typename S>
void discretize(const std::vector<S>& a_diag, const std::vector<S>& b, S dt,
                std::vector<S>& a_bar, std::vector<S>& b_bar) {
  tensor_check(dt > S(0), "discretize: step size must be positive");
  tensor_check(a_diag.size() == b.size(), "discretize: A and B length mismatch");
  a_bar.resize(a_diag.size());
  b_bar.resize(b.size());
  for (std::size_t n = 0; n < a_diag.size(); ++n) {
    a_bar[n] = std::exp(dt * a_diag[n]);
    b_bar[n] = dt * b[n];
  }
}

// ---------------------------------------------------------------------------
// selective scan
//
// u, delta: [L, d]; B, C: [L, N]; A: [N] (negative diagonal); D: [d].
//   h_t[n, j] = exp(delta[t, j] * A[n]) * h_{t-1}[n, j] + delta[t, j] * B[t, n] * u[t, j]
//   y[t, j]   = sum_n C[t, n] * h_t[n, j] + D[j] * u[t, j]
// One fused op: the backward rule re-walks the recurrence in reverse using
// cached states and cached transition factors.

template <typename S>
Tensor<S> selective_scan(const Tensor<S>& u, const Tensor<S>& delta, const Tensor<S>& B,
                         const Tensor<S>& C, const Tensor<S>& A, const Tensor<S>& D) {
  tensor_check(u.rank() == 2, "selective_scan: u must be [L, d]");
  const std::int64_t L = u.dim(0), d = u.dim(1);
  tensor_check(delta.shape() == u.shape(), "selective_scan: delta shape mismatch");
  tensor_check(B.rank() == 2 && B.dim(0) == L, "selective_scan: B must be [L, N]");
  const std::int64_t N = B.dim(1);
  tensor_check(C.shape() == B.shape(), "selective_scan: C shape mismatch");
  tensor_check(A.rank() == 1 && A.dim(0) == N, "selective_scan: A must be [N]");
  tensor_check(D.rank() == 1 && D.dim(0) == d, "selective_scan: D must be [d]");
  tensor_check(L >= 1, "selective_scan: empty sequence");

  const S* pu = u.data();
  const S* pdt = delta.data();
  const S* pB = B.data();
  const S* pC = C.data();
  const S* pA = A.data();
  const S* pD = D.data();

  const bool record = grad_mode_flag() &&
                      (u.requires_grad() || delta.requires_grad() || B.requires_grad() ||
                       C.requires_grad() || A.requires_grad() || D.requires_grad());

  std::vector<S> y(static_cast<std::size_t>(L * d));
  std::vector<S> h(static_cast<std::size_t>(N * d), S(0));
  // Caches for the backward pass: per-step states and transition factors.
  std::vector<S> hs, ab;
  if (record) {
    hs.resize(static_cast<std::size_t>(L * N * d));
    ab.resize(static_cast<std::size_t>(L * N * d));
  }

  for (std::int64_t t = 0; t < L; ++t) {
    const S* ut = pu + t * d;
    const S* dtt = pdt + t * d;
    const S* Bt = pB + t * N;
    const S* Ct = pC + t * N;
    S* yt = y.data() + t * d;
    for (std::int64_t j = 0; j < d; ++j) yt[j] = pD[j] * ut[j];
    for (std::int64_t n = 0; n < N; ++n) {
      const S an = pA[n];
      const S bn = Bt[n];
      const S cn = Ct[n];
      S* hn = h.data() + n * d;
      if (record) {
        S* abn = ab.data() + (t * N + n) * d;
        S* hsn = hs.data() + (t * N + n) * d;
        for (std::int64_t j = 0; j < d; ++j) {
          const S f = std::exp(dtt[j] * an);
          abn[j] = f;
          const S hv = f * hn[j] + dtt[j] * bn * ut[j];
          hn[j] = hv;
          hsn[j] = hv;
          yt[j] += cn * hv;
        }
      } else {
        for (std::int64_t j = 0; j < d; ++j) {
          const S hv = std::exp(dtt[j] * an) * hn[j] + dtt[j] * bn * ut[j];
          hn[j] = hv;
          yt[j] += cn * hv;
        }
      }
    }
  }

  auto un = u.node();
  auto dtn = delta.node();
  auto Bn = B.node();
  auto Cn = C.node();
  auto An = A.node();
  auto Dn = D.node();
  return make_op<S>(
      u.shape(), std::move(y), {u, delta, B, C, A, D},
      [un, dtn, Bn, Cn, An, Dn, L, d, N, hs = std::move(hs), ab = std::move(ab)](
          const std::vector<S>& gy, FlowMap<S>& flow) {
        const S* pu = un->value.data();
        const S* pdt = dtn->value.data();
        const S* pB = Bn->value.data();
        const S* pC = Cn->value.data();
        const S* pA = An->value.data();
        const S* pD = Dn->value.data();

        // Local accumulators keep the inner loops branch-free; flows that are
        // not required are dropped at the end.
        std::vector<S> gu(static_cast<std::size_t>(L * d), S(0));
        std::vector<S> gdt(static_cast<std::size_t>(L * d), S(0));
        std::vector<S> gB(static_cast<std::size_t>(L * N), S(0));
        std::vector<S> gC(static_cast<std::size_t>(L * N), S(0));
        std::vector<S> gA(static_cast<std::size_t>(N), S(0));
        std::vector<S> gD(static_cast<std::size_t>(d), S(0));
        std::vector<S> gh(static_cast<std::size_t>(N * d), S(0));

        for (std::int64_t t = L - 1; t >= 0; --t) {
          const S* gyt = gy.data() + t * d;
          const S* ut = pu + t * d;
          const S* dtt = pdt + t * d;
          const S* Bt = pB + t * N;
          const S* Ct = pC + t * N;
          for (std::int64_t j = 0; j < d; ++j) {
            gu[t * d + j] += pD[j] * gyt[j];
            gD[j] += ut[j] * gyt[j];
          }
          for (std::int64_t n = 0; n < N; ++n) {
            const S an = pA[n];
            const S bn = Bt[n];
            const S cn = Ct[n];
            const S* hsn = hs.data() + (t * N + n) * d;
            const S* hprev = t > 0 ? hs.data() + ((t - 1) * N + n) * d : nullptr;
            const S* abn = ab.data() + (t * N + n) * d;
            S* ghn = gh.data() + n * d;
            S acc_gC = S(0), acc_gB = S(0), acc_gA = S(0);
            for (std::int64_t j = 0; j < d; ++j) {
              acc_gC += hsn[j] * gyt[j];
              S g = ghn[j] + cn * gyt[j];  // dL/dh_t[n, j]
              const S hp = hprev ? hprev[j] : S(0);
              const S gab = g * hp;            // dL/dAbar
              acc_gA += gab * dtt[j] * abn[j];
              gdt[t * d + j] += gab * an * abn[j] + g * bn * ut[j];
              acc_gB += g * dtt[j] * ut[j];
              gu[t * d + j] += g * dtt[j] * bn;
              ghn[j] = g * abn[j];  // dL/dh_{t-1}
            }
            gC[t * N + n] += acc_gC;
            gB[t * N + n] += acc_gB;
            gA[n] += acc_gA;
          }
        }

        auto deliver = [&flow](NodePtr<S> node, std::vector<S>& g) {
          if (!node->requires_grad) return;
          auto& buf = flow_buf(flow, node);
          for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        };
        deliver(un, gu);
        deliver(dtn, gdt);
        deliver(Bn, gB);
        deliver(Cn, gC);
        deliver(An, gA);
        deliver(Dn, gD);
      });
}

// ---------------------------------------------------------------------------
// four-way 2D scan orders
//
// Sequence index -> patch index (row-major patches), for an H x W grid:
//   0 row-forward, 1 row-backward, 2 column-forward, 3 column-backward.

inline std::vector<std::int64_t> scan_order(int which, std::int64_t h, std::int64_t w) {
  const std::int64_t L = h * w;
  std::vector<std::int64_t> perm(static_cast<std::size_t>(L));
  switch (which) {
    case 0:
      for (std::int64_t i = 0; i < L; ++i) perm[static_cast<std::size_t>(i)] = i;
      break;
    case 1:
      for (std::int64_t i = 0; i < L; ++i) perm[static_cast<std::size_t>(i)] = L - 1 - i;
      break;
    case 2:
      for (std::int64_t i = 0; i < L; ++i)
        perm[static_cast<std::size_t>(i)] = (i % h) * w + i / h;
      break;
    default:
      for (std::int64_t i = 0; i < L; ++i) {
        const std::int64_t r = L - 1 - i;
        perm[static_cast<std::size_t>(i)] = (r % h) * w + r / h;
      }
      break;
  }
  return perm;
}

inline std::vector<std::int64_t> invert_order(const std::vector<std::int64_t>& perm) {
  std::vector<std::int64_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    inv[static_cast<std::size_t>(perm[i])] = static_cast<std::int64_t>(i);
  return inv;
}

// x: [H, W, d] -> four [L, d] sequences, one per scan order.
template <typename S>
std::array<Tensor<S>, 4> cross_scan(const Tensor<S>& x) {
  tensor_check(x.rank() == 3, "cross_scan: input must be [H, W, d]");
  const std::int64_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
  Tensor<S> flat = reshape(x, {h * w, d});
  std::array<Tensor<S>, 4> out;
  for (int k = 0; k < 4; ++k) out[static_cast<std::size_t>(k)] = gather_rows(flat, scan_order(k, h, w));
  return out;
}

// Inverse: un-permute each sequence to the spatial layout and sum.
template <typename S>
Tensor<S> cross_merge(const std::array<Tensor<S>, 4>& seqs, std::int64_t h, std::int64_t w) {
  const std::int64_t L = h * w;
  for (const auto& s : seqs)
    tensor_check(s.rank() == 2 && s.dim(0) == L, "cross_merge: sequence length mismatch");
  const std::int64_t d = seqs[0].dim(1);
  Tensor<S> acc;
  for (int k = 0; k < 4; ++k) {
    Tensor<S> back = gather_rows(seqs[static_cast<std::size_t>(k)], invert_order(scan_order(k, h, w)));
    acc = k == 0 ? back : add(acc, back);
  }
  return reshape(acc, {h, w, d});
}

// ---------------------------------------------------------------------------
// parameters

// Selection projections of one scan branch: per-token B, C, and step size.
template <typename S>
struct BranchProjections {
  Tensor<S> w_b;   // [N, d]
  Tensor<S> w_c;   // [N, d]
  Tensor<S> w_dt;  // [d, d]
  Tensor<S> b_dt;  // [d]
};

// Four branches share the state matrix and skip vector; selection is
// direction-specific.
template <typename S>
struct Ss2dParams {
  Tensor<S> a_log;   // [N]; A = -exp(a_log)
  Tensor<S> d_skip;  // [d]
  std::array<BranchProjections<S>, 4> branch;
};

inline constexpr double kDtMin = 1e-3;
inline constexpr double kDtMax = 1e-1;

template <typename S>
Ss2dParams<S> make_ss2d_params(ParamStore<S>& store, const std::string& prefix, std::int64_t d,
                               std::int64_t n_state, Rng& rng) {
  Ss2dParams<S> p;
  p.a_log = store.add(prefix + ".a_log", {n_state}, init_state_log<S>(n_state), false);
  p.d_skip = store.add(prefix + ".d_skip", {d}, init_ones<S>(d), false);
  for (int k = 0; k < 4; ++k) {
    auto& br = p.branch[static_cast<std::size_t>(k)];
    const std::string bp = prefix + ".branch" + std::to_string(k);
    br.w_b = store.add(bp + ".w_b", {n_state, d}, init_linear_weight<S>(rng, n_state, d));
    br.w_c = store.add(bp + ".w_c", {n_state, d}, init_linear_weight<S>(rng, n_state, d));
    br.w_dt = store.add(bp + ".w_dt", {d, d}, init_linear_weight<S>(rng, d, d));
    br.b_dt = store.add(bp + ".b_dt", {d}, init_dt_bias<S>(rng, d, kDtMin, kDtMax), false);
  }
  return p;
}

// Cross-branch interaction points used by the matrix fusion modes: vectors
// added into every token's B projection or into the state diagonal.
template <typename S>
struct Ss2dHooks {
  Tensor<S> b_inject;  // [N]; added to B at every step
  Tensor<S> a_inject;  // [N]; added to the (negative) state diagonal
};

// One scan branch: project selection inputs from the sequence, then scan.
template <typename S>
Tensor<S> branch_scan(const Tensor<S>& seq, const BranchProjections<S>& proj,
                      const Tensor<S>& a_diag, const Tensor<S>& d_skip,
                      const Ss2dHooks<S>* hooks = nullptr) {
  Tensor<S> b = linear(seq, proj.w_b);
  if (hooks && hooks->b_inject.defined()) b = add_channels(b, hooks->b_inject);
  Tensor<S> c = linear(seq, proj.w_c);
  Tensor<S> dt = softplus(add_channels(linear(seq, proj.w_dt), proj.b_dt));
  return selective_scan(seq, dt, b, c, a_diag, d_skip);
}

// x: [H, W, d] -> [H, W, d]: cross-scan, selective scan per branch, merge.
template <typename S>
Tensor<S> ss2d(const Tensor<S>& x, const Ss2dParams<S>& params,
               const Ss2dHooks<S>* hooks = nullptr) {
  tensor_check(x.rank() == 3, "ss2d: input must be [H, W, d]");
  const std::int64_t h = x.dim(0), w = x.dim(1);
  Tensor<S> a_diag = neg(exp_op(params.a_log));
  if (hooks && hooks->a_inject.defined()) a_diag = add(a_diag, hooks->a_inject);
  std::array<Tensor<S>, 4> seqs = cross_scan(x);
  std::array<Tensor<S>, 4> outs;
  for (int k = 0; k < 4; ++k)
    outs[static_cast<std::size_t>(k)] =
        branch_scan(seqs[static_cast<std::size_t>(k)], params.branch[static_cast<std::size_t>(k)],
                    a_diag, params.d_skip, hooks);
  return cross_merge(outs, h, w);
}

// ---------------------------------------------------------------------------
// VSS block
//
// X -> LN -> in-projection (C -> 2C) -> split (x, z)
//   main: depthwise conv (k odd) -> SiLU -> SS2D -> LN
//   gate: SiLU(Linear(z))
// out = Linear(main * gate) + X

template <typename S>
struct VssBlockParams {
  Tensor<S> norm_gain, norm_offset;          // [C]
  Tensor<S> w_in, b_in;                      // [2C, C], [2C]
  Tensor<S> conv_kernels;                    // [C, k, k]
  Ss2dParams<S> scan;
  Tensor<S> out_norm_gain, out_norm_offset;  // [C]
  Tensor<S> w_z, b_z;                        // [C, C], [C]
  Tensor<S> w_out, b_out;                    // [C, C], [C]
};

template <typename S>
VssBlockParams<S> make_vss_params(ParamStore<S>& store, const std::string& prefix,
                                  std::int64_t channels, std::int64_t n_state,
                                  std::int64_t conv_k, Rng& rng) {
  tensor_check(conv_k >= 1 && conv_k % 2 == 1, "vss block conv kernel must be odd");
  tensor_check((2 * channels) % 2 == 0, "vss block split needs an even projected width");
  VssBlockParams<S> p;
  p.norm_gain = store.add(prefix + ".norm.gain", {channels}, init_ones<S>(channels), false);
  p.norm_offset = store.add(prefix + ".norm.offset", {channels}, init_zeros<S>(channels), false);
  p.w_in = store.add(prefix + ".in.w", {2 * channels, channels},
                     init_linear_weight<S>(rng, 2 * channels, channels));
  p.b_in = store.add(prefix + ".in.b", {2 * channels}, init_zeros<S>(2 * channels), false);
  p.conv_kernels = store.add(prefix + ".conv.k", {channels, conv_k, conv_k},
                             init_uniform<S>(rng, channels * conv_k * conv_k,
                                             1.0 / std::sqrt(static_cast<double>(conv_k * conv_k))));
  p.scan = make_ss2d_params<S>(store, prefix + ".scan", channels, n_state, rng);
  p.out_norm_gain =
      store.add(prefix + ".out_norm.gain", {channels}, init_ones<S>(channels), false);
  p.out_norm_offset =
      store.add(prefix + ".out_norm.offset", {channels}, init_zeros<S>(channels), false);
  p.w_z = store.add(prefix + ".z.w", {channels, channels},
                    init_linear_weight<S>(rng, channels, channels));
  // Positive gate bias opens the multiplicative path at initialization;
  // with a zero bias the whole block starts as a near-identity and training
  // from scratch stalls on a long plateau.
  p.b_z = store.add(prefix + ".z.b", {channels}, init_ones<S>(channels), false);
  p.w_out = store.add(prefix + ".out.w", {channels, channels},
                      init_linear_weight<S>(rng, channels, channels));
  p.b_out = store.add(prefix + ".out.b", {channels}, init_zeros<S>(channels), false);
  return p;
}

template <typename S>
Tensor<S> vss_block(const Tensor<S>& x, const VssBlockParams<S>& p,
                    const Ss2dHooks<S>* hooks = nullptr) {
  tensor_check(x.rank() == 3, "vss_block: input must be [H, W, C]");
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  tensor_check(p.norm_gain.dim(0) == c, "vss_block: channel count does not match parameters");

  Tensor<S> normed = layer_norm(x, p.norm_gain, p.norm_offset);
  Tensor<S> proj = linear(normed, p.w_in, p.b_in);  // [H, W, 2C]
  tensor_check(proj.shape().back() % 2 == 0, "vss_block: odd channel count for the split");
  Tensor<S> xm = narrow_last(proj, 0, c);
  Tensor<S> z = narrow_last(proj, c, c);

  // depthwise conv wants [B, C, H, W]
  Tensor<S> nchw = reshape(permute(xm, {2, 0, 1}), {1, c, h, w});
  Tensor<S> conv = depthwise_conv2d(nchw, p.conv_kernels);
  Tensor<S> back = permute(reshape(conv, {c, h, w}), {1, 2, 0});  // [H, W, C]

  Tensor<S> scanned = ss2d(silu(back), p.scan, hooks);
  Tensor<S> main = layer_norm(scanned, p.out_norm_gain, p.out_norm_offset);
  Tensor<S> gate = silu(linear(z, p.w_z, p.b_z));
  return add(linear(mul(main, gate), p.w_out, p.b_out), x);
}

}  // namespace evs
