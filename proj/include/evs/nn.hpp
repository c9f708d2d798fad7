#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "evs/rng.hpp"
#include "evs/tensor.hpp"

namespace evs {

// A named leaf tensor. `decay` marks it eligible for weight decay; norm
// gains/offsets and biases opt out.
template <typename S>
struct Param {
  std::string name;
  Tensor<S> tensor;
  bool decay = true;
  std::vector<S> velocity;  // allocated on first momentum step
};

// Owns the parameters of one model instance in registration order, which is
// deterministic and doubles as the checkpoint order.
template <typename S>
class ParamStore {
 public:
  Tensor<S> add(std::string name, Shape shape, std::vector<S> init, bool decay = true) {
    tensor_check(find(name) == nullptr, "parameter registered twice: " + name);
    Tensor<S> t = Tensor<S>::from_data(std::move(shape), std::move(init), true);
    params_.push_back(Param<S>{std::move(name), t, decay, {}});
    return t;
  }

  std::size_t size() const { return params_.size(); }
  Param<S>& operator[](std::size_t i) { return params_[i]; }
  const Param<S>& operator[](std::size_t i) const { return params_[i]; }

  Param<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Copy values (not gradients) from another store with identical structure.
  void copy_values_from(const ParamStore<S>& src) {
    tensor_check(src.size() == size(), "parameter store size mismatch in copy");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      tensor_check(src[i].name == params_[i].name && src[i].tensor.shape() == params_[i].tensor.shape(),
                   "parameter structure mismatch in copy: " + params_[i].name);
      std::copy(src[i].tensor.data(), src[i].tensor.data() + src[i].tensor.numel(),
                params_[i].tensor.node()->value.data());
    }
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param<S>> params_;
};

// p <- p - lr * (grad + weight_decay * p), with optional heavy-ball momentum.
// Every parameter must carry a gradient; a missing one means the graph never
// reached it and the step would silently train a partial model.
template <typename S>
void sgd_step(ParamStore<S>& store, S lr, S weight_decay, S momentum = S(0)) {
  for (auto& p : store) {
    tensor_check(p.tensor.has_grad(), "sgd_step: parameter has no gradient: " + p.name);
    const std::vector<S>& g = p.tensor.grad();
    S* v = p.tensor.node()->value.data();
    const std::size_t n = g.size();
    if (momentum != S(0) && p.velocity.empty()) p.velocity.assign(n, S(0));
    for (std::size_t i = 0; i < n; ++i) {
      S gi = g[i];
      if (p.decay) gi += weight_decay * v[i];
      if (momentum != S(0)) {
        p.velocity[i] = momentum * p.velocity[i] + gi;
        gi = p.velocity[i];
      }
      v[i] -= lr * gi;
    }
  }
}

// ---------------------------------------------------------------------------
// initializers

template <typename S>
std::vector<S> init_uniform(Rng& rng, std::int64_t n, double bound) {
  std::vector<S> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  return v;
}

// Fan-in scaled uniform for an affine weight [d_out, d_in].
template <typename S>
std::vector<S> init_linear_weight(Rng& rng, std::int64_t d_out, std::int64_t d_in) {
  return init_uniform<S>(rng, d_out * d_in, 1.0 / std::sqrt(static_cast<double>(d_in)));
}

template <typename S>
std::vector<S> init_zeros(std::int64_t n) {
  return std::vector<S>(static_cast<std::size_t>(n), S(0));
}

template <typename S>
std::vector<S> init_ones(std::int64_t n) {
  return std::vector<S>(static_cast<std::size_t>(n), S(1));
}

// State matrix parameterization: A = -exp(A_log), A_log[n] = log(n + 1) so the
// initial spectrum is -1, -2, ..., -N (always stable).
template <typename S>
std::vector<S> init_state_log(std::int64_t n_state) {
  std::vector<S> v(static_cast<std::size_t>(n_state));
  for (std::int64_t i = 0; i < n_state; ++i)
    v[static_cast<std::size_t>(i)] = static_cast<S>(std::log(static_cast<double>(i + 1)));
  return v;
}

// Bias for the step-size head: softplus(bias) lands in [dt_min, dt_max],
// sampled log-uniformly. inverse_softplus(y) = log(expm1(y)).
template <typename S>
std::vector<S> init_dt_bias(Rng& rng, std::int64_t n, double dt_min, double dt_max) {
  std::vector<S> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    double dt = std::exp(rng.uniform(std::log(dt_min), std::log(dt_max)));
    x = static_cast<S>(std::log(std::expm1(dt)));
  }
  return v;
}

}  // namespace evs
