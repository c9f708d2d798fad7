#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "evs/rng.hpp"
#include "evs/tensor.hpp"

namespace evtest {

// Central finite-difference verification of reverse-mode gradients at 64-bit,
// step 1e-5. The error is |analytic - numeric| / max(|analytic|, |numeric|,
// 0.01); the floor keeps tiny-gradient noise from inflating the ratio while
// still catching sign and factor bugs on small gradients.
struct GradCheckResult {
  bool ok = true;
  double max_err = 0.0;
  std::string worst;
};

using LossFn = std::function<evs::Tensor<double>(const std::vector<evs::Tensor<double>>&)>;

inline GradCheckResult grad_check(const LossFn& f, std::vector<evs::Tensor<double>> inputs,
                                  double step = 1e-5, double tol = 1e-4) {
  GradCheckResult res;
  evs::Tensor<double> loss = f(inputs);
  evs::backward(loss);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic =
        inputs[i].has_grad() ? inputs[i].grad_or_empty()
                             : std::vector<double>(static_cast<std::size_t>(inputs[i].numel()), 0.0);
    double* v = inputs[i].node()->value.data();
    for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double keep = v[j];
      double fp, fm;
      {
        evs::NoGradGuard guard;
        v[j] = keep + step;
        fp = f(inputs).item();
        v[j] = keep - step;
        fm = f(inputs).item();
      }
      v[j] = keep;
      const double numeric = (fp - fm) / (2.0 * step);
      const double ana = analytic[static_cast<std::size_t>(j)];
      const double err =
          std::fabs(numeric - ana) / std::max({std::fabs(numeric), std::fabs(ana), 0.01});
      if (err > res.max_err) {
        res.max_err = err;
        res.worst = "input " + std::to_string(i) + " element " + std::to_string(j) +
                    ": analytic " + std::to_string(ana) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  res.ok = res.max_err < tol;
  return res;
}

inline evs::Tensor<double> random_leaf(evs::Rng& rng, evs::Shape shape, double lo = -1.0,
                                       double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(evs::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return evs::Tensor<double>::from_data(std::move(shape), std::move(v), true);
}

}  // namespace evtest
