#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cenlab/nn/tensor.hpp"
#include "cenlab/rng.hpp"

namespace cenlab::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;   // worst per-entry relative error
  double norm_rel_err = 0.0;  // ||fd - an|| / max(||fd||, ||an||) over all probes
  size_t checked = 0;
};

// Freshly built models hold zero-initialized biases, which can leave whole
// pre-activation patches sitting exactly on the relu kink (dead input patch
// plus zero bias). The analytic subgradient there is valid but central
// differences straddle the kink and disagree. Jittering every parameter off
// zero before checking removes those measure-zero points.
template <typename T>
void jitter_params(const std::vector<ParamTensorT<T>*>& params, double scale,
                   uint64_t seed) {
  CounterRng rng(seed);
  for (ParamTensorT<T>* p : params)
    for (T& v : p->value.v) v += static_cast<T>((rng.unit() - 0.5) * scale);
}

// Central finite differences against analytic gradients already stored in
// the parameters' grad buffers. `loss_only` must rebuild the forward pass
// from current parameter values without touching gradients or any running
// state. Checks a sampled subset of entries per parameter.
//
// Two error views: max_rel_err is per-entry (floored at `denom_floor` so noise
// on near-zero gradients does not dominate), norm_rel_err compares the sampled
// gradient vectors as a whole, which is the robust view for deep f32 graphs
// where finite-difference noise exceeds the smallest true gradients.
template <typename T, typename LossFn>
GradCheckResult finite_diff_check(const std::vector<ParamTensorT<T>*>& params,
                                  LossFn loss_only, double eps = 1e-3,
                                  size_t samples_per_param = 8, uint64_t seed = 17,
                                  double denom_floor = 1e-4) {
  CounterRng rng(seed);
  GradCheckResult res;
  double diff2 = 0, fd2 = 0, an2 = 0;
  for (ParamTensorT<T>* p : params) {
    size_t n = p->value.size();
    size_t take = std::min(samples_per_param, n);
    for (size_t s = 0; s < take; ++s) {
      size_t j = n <= samples_per_param ? s : rng.below(static_cast<uint32_t>(n));
      T saved = p->value.v[j];
      p->value.v[j] = saved + static_cast<T>(eps);
      double lp = static_cast<double>(loss_only());
      p->value.v[j] = saved - static_cast<T>(eps);
      double lm = static_cast<double>(loss_only());
      p->value.v[j] = saved;
      double fd = (lp - lm) / (2 * eps);
      double an = static_cast<double>(p->grad.v[j]);
      double denom = std::max({std::abs(fd), std::abs(an), denom_floor});
      double rel = std::abs(fd - an) / denom;
      if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) rel = 0.0;  // frozen path
      res.max_rel_err = std::max(res.max_rel_err, rel);
      diff2 += (fd - an) * (fd - an);
      fd2 += fd * fd;
      an2 += an * an;
      ++res.checked;
    }
  }
  double scale = std::max(std::sqrt(std::max(fd2, an2)), 1e-12);
  res.norm_rel_err = std::sqrt(diff2) / scale;
  return res;
}

}  // namespace cenlab::nn
