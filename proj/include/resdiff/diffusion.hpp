// Copyright 2026 The resdiff Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Closed-form diffusion-process math over residual fields. All functions are
// pure.

#include <algorithm>
#include <cmath>

#include "resdiff/common.hpp"
#include "resdiff/schedule.hpp"

namespace resdiff {

/// r_t = sqrt(abar_t) r0 + sqrt(1 - abar_t) eps.
inline Array3 forward_sample(const NoiseSchedule& s, const Array3& r0, int t, const Array3& eps) {
  require_same_shape(r0, eps, "forward_sample");
  s.check_step(t);
  const double ab = s.alpha_bar(t);
  return axpby(std::sqrt(ab), r0, std::sqrt(1.0 - ab), eps);
}

/// Mean of q(r_{t-1} | r_t, r0).
inline Array3 posterior_mean(const NoiseSchedule& s, const Array3& r_t, const Array3& r0, int t) {
  require_same_shape(r_t, r0, "posterior_mean");
  const auto [eta, xi] = posterior_coefficients(s, t);
  return axpby(eta, r0, xi, r_t);
}

/// Noise that maps the predicted r0 onto r_t under the forward marginal.
inline Array3 implied_noise(const NoiseSchedule& s, const Array3& r_t, const Array3& r0_pred, int t) {
  require_same_shape(r_t, r0_pred, "implied_noise");
  if (t == 0) throw ParameterError("implied_noise: undefined at t = 0");
  const double ab = s.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  return axpby(inv, r_t, -std::sqrt(ab) * inv, r0_pred);
}

/// Standard deviation of the injected noise in a DDIM step from t to t_prev.
inline double ddim_sigma(const NoiseSchedule& s, int t, int t_prev, double eta_ddim) {
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  return eta_ddim * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

/// One DDIM update from step t to t_prev (< t) given the r0 prediction.
/// `z` is only read when eta_ddim > 0. With t_prev = 0 the result is r0_pred.
inline Array3 ddim_step(const NoiseSchedule& s, const Array3& r_t, const Array3& r0_pred, int t,
                        int t_prev, double eta_ddim, const Array3* z = nullptr) {
  if (!(t > t_prev && t_prev >= 0)) throw ParameterError("ddim_step: need t > t_prev >= 0");
  if (!(eta_ddim >= 0.0 && eta_ddim <= 1.0)) throw ParameterError("ddim_step: eta must lie in [0, 1]");
  s.check_step(t);
  if (t_prev == 0) return r0_pred;
  const Array3 eps = implied_noise(s, r_t, r0_pred, t);
  const double ab_prev = s.alpha_bar(t_prev);
  const double sigma = ddim_sigma(s, t, t_prev, eta_ddim);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  Array3 out = axpby(std::sqrt(ab_prev), r0_pred, dir, eps);
  if (sigma > 0.0) {
    if (z == nullptr) throw ParameterError("ddim_step: stochastic step needs noise z");
    require_same_shape(out, *z, "ddim_step");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * (*z)[i];
  }
  return out;
}

}  // namespace resdiff
