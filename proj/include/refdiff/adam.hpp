#pragma once

#include "refdiff/denoiser.hpp"

namespace refdiff::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  denoiser::DenoiserParams m;
  denoiser::DenoiserParams v;
  long step = 0;
};

AdamState adam_init(const denoiser::DenoiserParams& params);

// One bias-corrected Adam update, in place. Throws std::invalid_argument when
// the gradient or state layout differs from the parameters.
void adam_step(denoiser::DenoiserParams& params, const denoiser::DenoiserParams& grads,
               AdamState& state, const AdamConfig& cfg = {});

// Scalar form of the same recursion, used for single-value checks.
struct ScalarAdam {
  double m = 0.0;
  double v = 0.0;
  long step = 0;
};
double adam_scalar_step(double param, double grad, ScalarAdam& state, const AdamConfig& cfg = {});

}  // namespace refdiff::optim
