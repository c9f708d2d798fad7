#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

namespace detail {

template <typename S>
inline S sigmoid_val(S x) {
  if (x >= S(0)) {
    S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
inline S softplus_val(S x) {
  if (x > S(30)) return x;
  if (x < S(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  tensor_check(a == b, std::string(op) + ": shape mismatch " + shape_str(a) +
                           " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  std::vector<S> out(a.values());
  const S* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<S>(a.shape(), std::move(out), {a, b},
                    [an, bn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      if (an->requires_grad) {
                        auto& ga = flow_buf(flow, an);
                        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                      }
                      if (bn->requires_grad) {
                        auto& gb = flow_buf(flow, bn);
                        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
                      }
                    });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  std::vector<S> out(a.values());
  const S* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<S>(a.shape(), std::move(out), {a, b},
                    [an, bn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      if (an->requires_grad) {
                        auto& ga = flow_buf(flow, an);
                        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                      }
                      if (bn->requires_grad) {
                        auto& gb = flow_buf(flow, bn);
                        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
                      }
                    });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  std::vector<S> out(a.values());
  const S* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op<S>(a.shape(), std::move(out), {a, b},
                    [an, bn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      if (an->requires_grad) {
                        auto& ga = flow_buf(flow, an);
                        const S* vb = bn->value.data();
                        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vb[i];
                      }
                      if (bn->requires_grad) {
                        auto& gb = flow_buf(flow, bn);
                        const S* va = an->value.data();
                        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * va[i];
                      }
                    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.values());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(out), {a},
                    [an, c](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& ga = flow_buf(flow, an);
                      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * c;
                    });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

// x […, d] + v[d], v broadcast over leading axes.
template <typename S>
Tensor<S> add_channels(const Tensor<S>& x, const Tensor<S>& v) {
  tensor_check(!x.shape().empty() && v.rank() == 1 && x.shape().back() == v.dim(0),
               "add_channels: trailing dim of x must equal v length");
  const std::int64_t d = v.dim(0);
  const std::int64_t rows = x.numel() / d;
  std::vector<S> out(x.values());
  const S* pv = v.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < d; ++c) out[r * d + c] += pv[c];
  auto xn = x.node();
  auto vn = v.node();
  return make_op<S>(x.shape(), std::move(out), {x, v},
                    [xn, vn, rows, d](const std::vector<S>& gy, FlowMap<S>& flow) {
                      if (xn->requires_grad) {
                        auto& gx = flow_buf(flow, xn);
                        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                      }
                      if (vn->requires_grad) {
                        auto& gv = flow_buf(flow, vn);
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t c = 0; c < d; ++c) gv[c] += gy[r * d + c];
                      }
                    });
}

// x viewed as [R, d] with R == s.numel(); row r scaled by s[r].
template <typename S>
Tensor<S> row_scale(const Tensor<S>& x, const Tensor<S>& s) {
  const std::int64_t rows = s.numel();
  tensor_check(rows > 0 && x.numel() % rows == 0,
               "row_scale: x length not divisible by scale length");
  const std::int64_t d = x.numel() / rows;
  std::vector<S> out(x.values());
  const S* ps = s.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < d; ++c) out[r * d + c] *= ps[r];
  auto xn = x.node();
  auto sn = s.node();
  return make_op<S>(x.shape(), std::move(out), {x, s},
                    [xn, sn, rows, d](const std::vector<S>& gy, FlowMap<S>& flow) {
                      if (xn->requires_grad) {
                        auto& gx = flow_buf(flow, xn);
                        const S* vs = sn->value.data();
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t c = 0; c < d; ++c)
                            gx[r * d + c] += gy[r * d + c] * vs[r];
                      }
                      if (sn->requires_grad) {
                        auto& gs = flow_buf(flow, sn);
                        const S* vx = xn->value.data();
                        for (std::int64_t r = 0; r < rows; ++r) {
                          S acc = S(0);
                          for (std::int64_t c = 0; c < d; ++c)
                            acc += gy[r * d + c] * vx[r * d + c];
                          gs[r] += acc;
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <typename S>
Tensor<S> exp_op(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) v = std::exp(v);
  auto xn = x.node();
  auto keep = out;  // y cached for the backward rule
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn, keep = std::move(keep)](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * keep[i];
                    });
}

template <typename S>
Tensor<S> log_op(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) {
    tensor_check(v > S(0), "log of a non-positive value");
    v = std::log(v);
  }
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      const S* vx = xn->value.data();
                      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / vx[i];
                    });
}

// max(x, floor) elementwise; gradient flows only where x exceeds the floor.
template <typename S>
Tensor<S> clamp_min(const Tensor<S>& x, S floor) {
  std::vector<S> out(x.values());
  for (auto& v : out) v = std::max(v, floor);
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn, floor](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      const S* vx = xn->value.data();
                      for (std::size_t i = 0; i < gy.size(); ++i)
                        if (vx[i] > floor) gx[i] += gy[i];
                    });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) v = detail::sigmoid_val(v);
  auto xn = x.node();
  auto keep = out;
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn, keep = std::move(keep)](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::size_t i = 0; i < gy.size(); ++i)
                        gx[i] += gy[i] * keep[i] * (S(1) - keep[i]);
                    });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  std::vector<S> out(x.numel());
  const S* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * detail::sigmoid_val(px[i]);
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      const S* vx = xn->value.data();
                      for (std::size_t i = 0; i < gy.size(); ++i) {
                        S s = detail::sigmoid_val(vx[i]);
                        gx[i] += gy[i] * s * (S(1) + vx[i] * (S(1) - s));
                      }
                    });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) v = detail::softplus_val(v);
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      const S* vx = xn->value.data();
                      for (std::size_t i = 0; i < gy.size(); ++i)
                        gx[i] += gy[i] * detail::sigmoid_val(vx[i]);
                    });
}

// ---------------------------------------------------------------------------
// reductions and layout

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.values()) acc += v;
  auto xn = x.node();
  return make_op<S>({1}, {acc}, {x},
                    [xn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (auto& g : gx) g += gy[0];
                    });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scale(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

// Mean over the given axes (unique, ascending); pooled axes are removed from
// the shape. mean_pool(x, {a}) over a singleton axis is the identity layout.
template <typename S>
Tensor<S> mean_pool(const Tensor<S>& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  tensor_check(std::adjacent_find(axes.begin(), axes.end()) == axes.end(),
               "mean_pool: duplicate axis");
  const Shape& xs = x.shape();
  tensor_check(!axes.empty() && axes.back() < xs.size(), "mean_pool: axis out of range");

  Shape out_shape;
  std::vector<bool> pooled(xs.size(), false);
  for (auto a : axes) pooled[a] = true;
  std::int64_t count = 1;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (pooled[i]) count *= xs[i];
    else out_shape.push_back(xs[i]);
  }
  if (out_shape.empty()) out_shape = {1};

  // Per-axis contribution of each input index to the output linear index.
  std::vector<std::int64_t> in_strides(xs.size()), out_stride_of_axis(xs.size(), 0);
  std::int64_t s = 1;
  for (std::size_t i = xs.size(); i-- > 0;) {
    in_strides[i] = s;
    s *= xs[i];
  }
  std::int64_t os = 1;
  for (std::size_t i = xs.size(); i-- > 0;) {
    if (!pooled[i]) {
      out_stride_of_axis[i] = os;
      os *= xs[i];
    }
  }

  const std::int64_t n_out = shape_numel(out_shape);
  std::vector<S> out(static_cast<std::size_t>(n_out), S(0));
  const S* px = x.data();
  // Map each input element to its output slot.
  std::vector<std::int64_t> omap(static_cast<std::size_t>(x.numel()));
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    std::int64_t rem = i, o = 0;
    for (std::size_t ax = 0; ax < xs.size(); ++ax) {
      std::int64_t idx = rem / in_strides[ax];
      rem %= in_strides[ax];
      o += idx * out_stride_of_axis[ax];
    }
    omap[static_cast<std::size_t>(i)] = o;
    out[static_cast<std::size_t>(o)] += px[i];
  }
  const S inv = S(1) / static_cast<S>(count);
  for (auto& v : out) v *= inv;

  auto xn = x.node();
  return make_op<S>(out_shape, std::move(out), {x},
                    [xn, omap = std::move(omap), inv](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[static_cast<std::size_t>(omap[i])] * inv;
                    });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  tensor_check(shape_numel(shape) == x.numel(),
               "reshape: element count mismatch for " + shape_str(shape));
  std::vector<S> out(x.values());
  auto xn = x.node();
  return make_op<S>(std::move(shape), std::move(out), {x},
                    [xn](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                    });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<std::size_t>& dims) {
  const Shape& xs = x.shape();
  tensor_check(dims.size() == xs.size(), "permute: rank mismatch");
  Shape out_shape(xs.size());
  for (std::size_t i = 0; i < dims.size(); ++i) out_shape[i] = xs[dims[i]];

  std::vector<std::int64_t> in_strides(xs.size());
  std::int64_t s = 1;
  for (std::size_t i = xs.size(); i-- > 0;) {
    in_strides[i] = s;
    s *= xs[i];
  }
  // Walk output positions in order, mapping back to input offsets.
  std::vector<std::int64_t> imap(static_cast<std::size_t>(x.numel()));
  std::vector<std::int64_t> idx(xs.size(), 0);
  for (std::int64_t o = 0; o < x.numel(); ++o) {
    std::int64_t in_off = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) in_off += idx[k] * in_strides[dims[k]];
    imap[static_cast<std::size_t>(o)] = in_off;
    for (std::size_t k = dims.size(); k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  std::vector<S> out(static_cast<std::size_t>(x.numel()));
  const S* px = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = px[imap[o]];

  auto xn = x.node();
  return make_op<S>(std::move(out_shape), std::move(out), {x},
                    [xn, imap = std::move(imap)](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::size_t o = 0; o < gy.size(); ++o)
                        gx[static_cast<std::size_t>(imap[o])] += gy[o];
                    });
}

// Contiguous slice along the last axis: channels [start, start+len).
template <typename S>
Tensor<S> narrow_last(const Tensor<S>& x, std::int64_t start, std::int64_t len) {
  const std::int64_t d = x.shape().back();
  tensor_check(start >= 0 && len >= 1 && start + len <= d, "narrow_last: range out of bounds");
  const std::int64_t rows = x.numel() / d;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::vector<S> out(static_cast<std::size_t>(rows * len));
  const S* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < len; ++c) out[r * len + c] = px[r * d + start + c];
  auto xn = x.node();
  return make_op<S>(std::move(out_shape), std::move(out), {x},
                    [xn, rows, len, d, start](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t c = 0; c < len; ++c)
                          gx[r * d + start + c] += gy[r * len + c];
                    });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, std::size_t axis) {
  tensor_check(!xs.empty(), "concat: empty input list");
  const Shape& s0 = xs[0].shape();
  tensor_check(axis < s0.size(), "concat: axis out of range");
  std::int64_t axis_total = 0;
  for (const auto& t : xs) {
    const Shape& si = t.shape();
    tensor_check(si.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t k = 0; k < si.size(); ++k)
      tensor_check(k == axis || si[k] == s0[k], "concat: non-axis extent mismatch");
    axis_total += si[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s0[k];
  for (std::size_t k = axis + 1; k < s0.size(); ++k) inner *= s0[k];

  std::vector<S> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t off = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::int64_t na = t.shape()[axis];
    const S* p = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(p + o * na * inner, p + (o + 1) * na * inner,
                out.begin() + (o * axis_total + off) * inner);
    off += na;
  }

  std::vector<NodePtr<S>> nodes;
  std::vector<std::int64_t> sizes;
  for (const auto& t : xs) {
    nodes.push_back(t.node());
    sizes.push_back(t.shape()[axis]);
  }
  return make_op<S>(std::move(out_shape), std::move(out), xs,
                    [nodes, sizes, offsets, outer, inner, axis_total](
                        const std::vector<S>& gy, FlowMap<S>& flow) {
                      for (std::size_t k = 0; k < nodes.size(); ++k) {
                        if (!nodes[k]->requires_grad) continue;
                        auto& g = flow_buf(flow, nodes[k]);
                        for (std::int64_t o = 0; o < outer; ++o)
                          for (std::int64_t c = 0; c < sizes[k] * inner; ++c)
                            g[o * sizes[k] * inner + c] +=
                                gy[(o * axis_total + offsets[k]) * inner + c];
                      }
                    });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
  const Shape& xs = x.shape();
  tensor_check(axis < xs.size(), "softmax: axis out of range");
  std::int64_t outer = 1, n = xs[axis], inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= xs[k];
  for (std::size_t k = axis + 1; k < xs.size(); ++k) inner *= xs[k];

  std::vector<S> out(x.values());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      S* base = out.data() + o * n * inner + i;
      S m = base[0];
      for (std::int64_t k = 1; k < n; ++k) m = std::max(m, base[k * inner]);
      S z = S(0);
      for (std::int64_t k = 0; k < n; ++k) {
        S e = std::exp(base[k * inner] - m);
        base[k * inner] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < n; ++k) base[k * inner] /= z;
    }
  }
  auto xn = x.node();
  auto keep = out;
  return make_op<S>(xs, std::move(out), {x},
                    [xn, keep = std::move(keep), outer, n, inner](const std::vector<S>& gy,
                                                                  FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t i = 0; i < inner; ++i) {
                          const std::int64_t b = o * n * inner + i;
                          S dot = S(0);
                          for (std::int64_t k = 0; k < n; ++k)
                            dot += gy[b + k * inner] * keep[b + k * inner];
                          for (std::int64_t k = 0; k < n; ++k)
                            gx[b + k * inner] +=
                                keep[b + k * inner] * (gy[b + k * inner] - dot);
                        }
                    });
}

// ---------------------------------------------------------------------------
// learnable layers

// Affine map over the last axis: x[..., d_in] -> [..., d_out].
// W is [d_out, d_in]; bias may be an undefined tensor.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = Tensor<S>()) {
  tensor_check(w.rank() == 2, "linear: weight must be rank 2");
  const std::int64_t d_in = w.dim(1), d_out = w.dim(0);
  tensor_check(!x.shape().empty() && x.shape().back() == d_in,
               "linear: trailing dim " + shape_str(x.shape()) + " does not match weight " +
                   shape_str(w.shape()));
  const bool has_bias = bias.defined();
  if (has_bias)
    tensor_check(bias.rank() == 1 && bias.dim(0) == d_out, "linear: bias length mismatch");

  const std::int64_t rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  std::vector<S> out(static_cast<std::size_t>(rows * d_out));
  const S* px = x.data();
  const S* pw = w.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = px + r * d_in;
    S* yr = out.data() + r * d_out;
    for (std::int64_t j = 0; j < d_out; ++j) {
      const S* wj = pw + j * d_in;
      S acc = has_bias ? bias.data()[j] : S(0);
      for (std::int64_t i = 0; i < d_in; ++i) acc += xr[i] * wj[i];
      yr[j] = acc;
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  std::vector<Tensor<S>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  NodePtr<S> bn = has_bias ? bias.node() : nullptr;
  return make_op<S>(std::move(out_shape), std::move(out), std::move(parents),
                    [xn, wn, bn, rows, d_in, d_out](const std::vector<S>& gy, FlowMap<S>& flow) {
                      const S* pw = wn->value.data();
                      const S* px = xn->value.data();
                      if (xn->requires_grad) {
                        auto& gx = flow_buf(flow, xn);
                        for (std::int64_t r = 0; r < rows; ++r) {
                          S* gxr = gx.data() + r * d_in;
                          const S* gyr = gy.data() + r * d_out;
                          for (std::int64_t j = 0; j < d_out; ++j) {
                            const S g = gyr[j];
                            if (g == S(0)) continue;
                            const S* wj = pw + j * d_in;
                            for (std::int64_t i = 0; i < d_in; ++i) gxr[i] += g * wj[i];
                          }
                        }
                      }
                      if (wn->requires_grad) {
                        auto& gw = flow_buf(flow, wn);
                        for (std::int64_t r = 0; r < rows; ++r) {
                          const S* xr = px + r * d_in;
                          const S* gyr = gy.data() + r * d_out;
                          for (std::int64_t j = 0; j < d_out; ++j) {
                            const S g = gyr[j];
                            if (g == S(0)) continue;
                            S* gwj = gw.data() + j * d_in;
                            for (std::int64_t i = 0; i < d_in; ++i) gwj[i] += g * xr[i];
                          }
                        }
                      }
                      if (bn && bn->requires_grad) {
                        auto& gb = flow_buf(flow, bn);
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t j = 0; j < d_out; ++j) gb[j] += gy[r * d_out + j];
                      }
                    });
}

// Normalization over the last axis followed by elementwise affine.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& offset,
                     S eps = S(1e-5)) {
  const std::int64_t d = x.shape().back();
  tensor_check(gain.rank() == 1 && gain.dim(0) == d && offset.rank() == 1 && offset.dim(0) == d,
               "layer_norm: gain/offset length must equal trailing dim");
  tensor_check(eps > S(0), "layer_norm: eps must be positive");
  const std::int64_t rows = x.numel() / d;
  std::vector<S> out(static_cast<std::size_t>(x.numel()));
  std::vector<S> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<S> inv_std(static_cast<std::size_t>(rows));
  const S* px = x.data();
  const S* pg = gain.data();
  const S* pb = offset.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = px + r * d;
    S mean = S(0);
    for (std::int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (std::int64_t i = 0; i < d; ++i) {
      S c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::int64_t i = 0; i < d; ++i) {
      S h = (xr[i] - mean) * inv;
      xhat[r * d + i] = h;
      out[r * d + i] = h * pg[i] + pb[i];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto on = offset.node();
  return make_op<S>(x.shape(), std::move(out), {x, gain, offset},
                    [xn, gn, on, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        const std::vector<S>& gy, FlowMap<S>& flow) {
                      const S* pg = gn->value.data();
                      if (xn->requires_grad) {
                        auto& gx = flow_buf(flow, xn);
                        for (std::int64_t r = 0; r < rows; ++r) {
                          const S* gyr = gy.data() + r * d;
                          const S* hr = xhat.data() + r * d;
                          S m1 = S(0), m2 = S(0);
                          for (std::int64_t i = 0; i < d; ++i) {
                            const S dh = gyr[i] * pg[i];
                            m1 += dh;
                            m2 += dh * hr[i];
                          }
                          m1 /= static_cast<S>(d);
                          m2 /= static_cast<S>(d);
                          const S inv = inv_std[r];
                          for (std::int64_t i = 0; i < d; ++i) {
                            const S dh = gyr[i] * pg[i];
                            gx[r * d + i] += inv * (dh - m1 - hr[i] * m2);
                          }
                        }
                      }
                      if (gn->requires_grad) {
                        auto& gg = flow_buf(flow, gn);
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t i = 0; i < d; ++i)
                            gg[i] += gy[r * d + i] * xhat[r * d + i];
                      }
                      if (on->requires_grad) {
                        auto& go = flow_buf(flow, on);
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t i = 0; i < d; ++i) go[i] += gy[r * d + i];
                      }
                    });
}

// Per-channel spatial convolution, stride 1, zero same-padding, odd kernel.
// x: [B, C, H, W], kernels: [C, k, k].
template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& x, const Tensor<S>& kernels) {
  tensor_check(x.rank() == 4, "depthwise_conv2d: input must be [B,C,H,W]");
  tensor_check(kernels.rank() == 3 && kernels.dim(1) == kernels.dim(2),
               "depthwise_conv2d: kernels must be [C,k,k]");
  tensor_check(kernels.dim(1) % 2 == 1, "depthwise_conv2d: kernel size must be odd");
  tensor_check(kernels.dim(0) == x.dim(1),
               "depthwise_conv2d: channel count mismatch");
  const std::int64_t nb = x.dim(0), nc = x.dim(1), nh = x.dim(2), nw = x.dim(3);
  const std::int64_t k = kernels.dim(1), pad = k / 2;

  std::vector<S> out(static_cast<std::size_t>(x.numel()), S(0));
  const S* px = x.data();
  const S* pk = kernels.data();
  for (std::int64_t b = 0; b < nb; ++b)
    for (std::int64_t c = 0; c < nc; ++c) {
      const S* xc = px + (b * nc + c) * nh * nw;
      const S* kc = pk + c * k * k;
      S* yc = out.data() + (b * nc + c) * nh * nw;
      for (std::int64_t h = 0; h < nh; ++h)
        for (std::int64_t w = 0; w < nw; ++w) {
          S acc = S(0);
          for (std::int64_t i = 0; i < k; ++i) {
            const std::int64_t hy = h + i - pad;
            if (hy < 0 || hy >= nh) continue;
            for (std::int64_t j = 0; j < k; ++j) {
              const std::int64_t wx = w + j - pad;
              if (wx < 0 || wx >= nw) continue;
              acc += xc[hy * nw + wx] * kc[i * k + j];
            }
          }
          yc[h * nw + w] = acc;
        }
    }

  auto xn = x.node();
  auto kn = kernels.node();
  return make_op<S>(x.shape(), std::move(out), {x, kernels},
                    [xn, kn, nb, nc, nh, nw, k, pad](const std::vector<S>& gy, FlowMap<S>& flow) {
                      const S* px = xn->value.data();
                      const S* pk = kn->value.data();
                      if (xn->requires_grad) {
                        auto& gx = flow_buf(flow, xn);
                        for (std::int64_t b = 0; b < nb; ++b)
                          for (std::int64_t c = 0; c < nc; ++c) {
                            const S* kc = pk + c * k * k;
                            const S* gyc = gy.data() + (b * nc + c) * nh * nw;
                            S* gxc = gx.data() + (b * nc + c) * nh * nw;
                            for (std::int64_t h = 0; h < nh; ++h)
                              for (std::int64_t w = 0; w < nw; ++w) {
                                const S g = gyc[h * nw + w];
                                if (g == S(0)) continue;
                                for (std::int64_t i = 0; i < k; ++i) {
                                  const std::int64_t hy = h + i - pad;
                                  if (hy < 0 || hy >= nh) continue;
                                  for (std::int64_t j = 0; j < k; ++j) {
                                    const std::int64_t wx = w + j - pad;
                                    if (wx < 0 || wx >= nw) continue;
                                    gxc[hy * nw + wx] += g * kc[i * k + j];
                                  }
                                }
                              }
                          }
                      }
                      if (kn->requires_grad) {
                        auto& gk = flow_buf(flow, kn);
                        for (std::int64_t b = 0; b < nb; ++b)
                          for (std::int64_t c = 0; c < nc; ++c) {
                            const S* xc = px + (b * nc + c) * nh * nw;
                            const S* gyc = gy.data() + (b * nc + c) * nh * nw;
                            S* gkc = gk.data() + c * k * k;
                            for (std::int64_t h = 0; h < nh; ++h)
                              for (std::int64_t w = 0; w < nw; ++w) {
                                const S g = gyc[h * nw + w];
                                if (g == S(0)) continue;
                                for (std::int64_t i = 0; i < k; ++i) {
                                  const std::int64_t hy = h + i - pad;
                                  if (hy < 0 || hy >= nh) continue;
                                  for (std::int64_t j = 0; j < k; ++j) {
                                    const std::int64_t wx = w + j - pad;
                                    if (wx < 0 || wx >= nw) continue;
                                    gkc[i * k + j] += g * xc[hy * nw + wx];
                                  }
                                }
                              }
                          }
                      }
                    });
}

// out[i, :] = x[perm[i], :] for x viewed as [L, inner]. perm must be a
// permutation of 0..L-1 (callers construct them; not re-validated here).
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::int64_t>& perm) {
  const std::int64_t L = static_cast<std::int64_t>(perm.size());
  tensor_check(x.numel() % L == 0, "gather_rows: length not divisible by permutation size");
  const std::int64_t inner = x.numel() / L;
  std::vector<S> out(static_cast<std::size_t>(x.numel()));
  const S* px = x.data();
  for (std::int64_t i = 0; i < L; ++i)
    std::copy(px + perm[i] * inner, px + (perm[i] + 1) * inner, out.begin() + i * inner);
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(out), {x},
                    [xn, perm, L, inner](const std::vector<S>& gy, FlowMap<S>& flow) {
                      auto& gx = flow_buf(flow, xn);
                      for (std::int64_t i = 0; i < L; ++i)
                        for (std::int64_t c = 0; c < inner; ++c)
                          gx[perm[i] * inner + c] += gy[i * inner + c];
                    });
}

}  // namespace evs
