#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "boxlm/tensor.hpp"

namespace boxlm {

// Central-difference gradient check against the reverse-mode sweep.
//
// For each checked input element x: numeric = (f(x+eps) - f(x-eps)) / (2 eps),
// relative error = |analytic - numeric| / max(|analytic|, |numeric|, floor).
// The floor keeps near-zero gradients from blowing up the ratio; checks run in
// double so eps = 1e-5 sits well above roundoff and well below curvature error.

struct GradCheckResult {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  int64_t n_checked = 0;
  std::string worst;  // "input 2 elem 17: analytic=..., numeric=..."
};

struct GradCheckOpts {
  double eps = 1e-5;
  double floor = 1e-3;
};

// `inputs` are the leaves to perturb; `fn` rebuilds the graph from scratch and
// returns the scalar loss. fn must only read the inputs' current values.
inline GradCheckResult grad_check(std::vector<Tensor<double>> inputs,
                                  const std::function<Tensor<double>()>& fn,
                                  GradCheckOpts opts = {}) {
  for (auto& in : inputs) in.zero_grad();
  Tensor<double> loss = fn();
  backward(loss);

  GradCheckResult res;
  double err_sum = 0.0;
  for (size_t s = 0; s < inputs.size(); ++s) {
    auto& in = inputs[s];
    const auto analytic = in.grad();  // copy; perturbed reruns rebuild graphs
    for (size_t e = 0; e < in.value().size(); ++e) {
      double orig = in.value()[e];
      in.value()[e] = orig + opts.eps;
      double up;
      {
        NoGradGuard ng;
        up = fn().scalar();
      }
      in.value()[e] = orig - opts.eps;
      double down;
      {
        NoGradGuard ng;
        down = fn().scalar();
      }
      in.value()[e] = orig;
      double numeric = (up - down) / (2.0 * opts.eps);
      double a = analytic[e];
      double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      double rel = std::abs(a - numeric) / denom;
      err_sum += rel;
      ++res.n_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(s) + " elem " + std::to_string(e) +
                    ": analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  if (res.n_checked > 0) res.mean_rel_err = err_sum / static_cast<double>(res.n_checked);
  return res;
}

}  // namespace boxlm
