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

// Receiver-side enhancement: respaced DDIM sampling over residuals with late
// start, early stopping and per-rate clipping of every r0 prediction.

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "resdiff/codec.hpp"
#include "resdiff/common.hpp"
#include "resdiff/denoiser.hpp"
#include "resdiff/diffusion.hpp"
#include "resdiff/residual.hpp"
#include "resdiff/rng.hpp"
#include "resdiff/schedule.hpp"

namespace resdiff {

enum class Thresholding { kFixed, kTable, kNone };

inline std::string to_string(Thresholding m) {
  switch (m) {
    case Thresholding::kFixed: return "fixed";
    case Thresholding::kTable: return "table";
    case Thresholding::kNone: return "none";
  }
  return "?";
}

inline Thresholding thresholding_from_string(const std::string& s) {
  if (s == "fixed") return Thresholding::kFixed;
  if (s == "table") return Thresholding::kTable;
  if (s == "none") return Thresholding::kNone;
  throw ParameterError("unknown thresholding mode '" + s + "'");
}

inline constexpr int kDefaultSamplingSteps = 100;
inline constexpr int kDefaultLateStartSteps = 20;

struct SamplerConfig {
  TimestepPlan plan = respace(1000, kDefaultSamplingSteps);
  /// First plan position to execute. Defaults to the late start that leaves
  /// kDefaultLateStartSteps steps.
  std::size_t start_index = kDefaultSamplingSteps - kDefaultLateStartSteps;
  /// One past the last plan position to execute.
  std::size_t stop_index = kDefaultSamplingSteps;
  double eta = 0.0;
  Thresholding thresholding = Thresholding::kFixed;
  std::optional<ThresholdTable> table;
  bool record_trajectory = false;
  std::uint64_t seed = 0;

  /// Plan of n_steps over T with the late start that leaves `remaining` steps.
  static SamplerConfig late_start(int T, int n_steps, int remaining) {
    SamplerConfig c;
    c.plan = respace(T, n_steps);
    c.stop_index = c.plan.size();
    c.start_index = c.plan.size() - static_cast<std::size_t>(std::clamp(remaining, 1, n_steps));
    return c;
  }
  static SamplerConfig full(int T, int n_steps) {
    SamplerConfig c;
    c.plan = respace(T, n_steps);
    c.start_index = 0;
    c.stop_index = c.plan.size();
    return c;
  }
  std::size_t executed_steps() const noexcept { return stop_index - start_index; }
};

inline void validate(const SamplerConfig& c) {
  if (!(c.start_index <= c.stop_index && c.stop_index <= c.plan.size())) {
    throw ConfigError("sampler: need 0 <= start_index <= stop_index <= plan length");
  }
  if (!(c.eta >= 0.0 && c.eta <= 1.0)) throw ConfigError("sampler: eta must lie in [0, 1]");
  if (c.thresholding == Thresholding::kTable && !c.table) {
    throw ConfigError("sampler: table thresholding without a threshold table");
  }
}

struct TrajectoryRecord {
  std::size_t plan_index = 0;
  int t = 0;
  Array3 r_t;
  Array3 r0_pred;
};

/// Ordered sampling states; timesteps strictly decrease.
struct Trajectory {
  std::vector<TrajectoryRecord> records;

  /// u = r0'(t) - r_t for every record.
  std::vector<Array3> update_vectors() const {
    std::vector<Array3> u;
    for (const auto& r : records) u.push_back(axpby(1.0, r.r0_pred, -1.0, r.r_t));
    return u;
  }
};

struct EnhanceResult {
  Array3 x_hat;
  /// Final (clipped) residual prediction.
  Array3 r0_pred;
  std::optional<Trajectory> trajectory;
};

/// Zero-mean Gaussian latent with the forward-process standard deviation
/// sqrt(1 - abar_t).
inline Array3 late_start_latent(const NoiseSchedule& s, int t, Rng& rng, int c, int h, int w) {
  const double sd = std::sqrt(1.0 - s.alpha_bar(t));
  Array3 r = rng.normal_array(c, h, w);
  for (double& v : r.values()) v *= sd;
  return r;
}

/// Enhances x_tilde. `lambda` is the receiver-side rate, required for table
/// thresholding. `initial_latent`, when given, replaces the synthetic latent at
/// the start position (same padded shape as the network input).
inline EnhanceResult enhance(const DenoiserModel& model, const NoiseSchedule& s, const Array3& x_tilde,
                             const SamplerConfig& cfg, std::optional<double> lambda = std::nullopt,
                             const Array3* initial_latent = nullptr) {
  validate(cfg);
  if (cfg.plan.max_step() > s.T()) throw ConfigError("sampler: plan exceeds the schedule's T");
  if (cfg.thresholding == Thresholding::kTable && !lambda) {
    throw ConfigError("sampler: table thresholding needs the rate parameter lambda");
  }
  const double tau = cfg.thresholding == Thresholding::kTable ? cfg.table->lookup(*lambda)
                     : cfg.thresholding == Thresholding::kFixed ? 1.0
                                                                 : 0.0;
  auto clip = [&](Array3 r) { return cfg.thresholding == Thresholding::kNone ? r : clip_symmetric(r, tau); };

  const int H = x_tilde.height(), W = x_tilde.width();
  const Array3 xt_pad = replicate_pad(x_tilde, kSizeMultiple);
  const int C = xt_pad.channels(), Hp = xt_pad.height(), Wp = xt_pad.width();

  EnhanceResult res;
  if (cfg.record_trajectory) res.trajectory.emplace();
  if (cfg.executed_steps() == 0) {
    res.r0_pred = Array3(C, H, W);
    res.x_hat = clamp(x_tilde, -1.0, 1.0);
    return res;
  }

  Rng rng(cfg.seed);
  const int t0 = cfg.plan[cfg.start_index];
  Array3 r_t;
  if (initial_latent) {
    if (initial_latent->channels() != C || initial_latent->height() != Hp || initial_latent->width() != Wp) {
      throw ParameterError("enhance: initial latent has the wrong shape");
    }
    r_t = *initial_latent;
  } else {
    r_t = late_start_latent(s, t0, rng, C, Hp, Wp);
  }
  Array3 r0_pred;
  for (std::size_t i = cfg.start_index; i < cfg.stop_index; ++i) {
    const int t = cfg.plan[i];
    r0_pred = clip(predict(model, r_t, xt_pad, t));
    if (res.trajectory) res.trajectory->records.push_back({i, t, r_t, r0_pred});
    if (i + 1 == cfg.stop_index) break;
    const int t_prev = cfg.plan.predecessor(i);
    if (cfg.eta > 0.0) {
      const Array3 z = rng.normal_array(C, Hp, Wp);
      r_t = ddim_step(s, r_t, r0_pred, t, t_prev, cfg.eta, &z);
    } else {
      r_t = ddim_step(s, r_t, r0_pred, t, t_prev, 0.0);
    }
  }
  res.r0_pred = crop(r0_pred, H, W);
  res.x_hat = clamp(axpby(1.0, x_tilde, 1.0, res.r0_pred), -1.0, 1.0);
  return res;
}

/// Output obtained by stopping after trajectory record k: x_tilde + r0'(k),
/// cropped and clamped.
/// Binary trajectory dump, little-endian:
///   "RDTR", u32 version (1), u32 record count, u32 channels, height, width,
///   then per record: u32 plan index, i32 t, r_t values, r0' values (f64,
///   channel-major).
inline std::vector<std::uint8_t> serialize_trajectory(const Trajectory& traj) {
  std::vector<std::uint8_t> out{'R', 'D', 'T', 'R'};
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  const Array3 empty;
  const Array3& first = traj.records.empty() ? empty : traj.records.front().r_t;
  put(1, 4);
  put(traj.records.size(), 4);
  put(static_cast<std::uint32_t>(first.channels()), 4);
  put(static_cast<std::uint32_t>(first.height()), 4);
  put(static_cast<std::uint32_t>(first.width()), 4);
  for (const auto& r : traj.records) {
    put(r.plan_index, 4);
    put(static_cast<std::uint32_t>(r.t), 4);
    for (const Array3* a : {&r.r_t, &r.r0_pred}) {
      require_same_shape(first, *a, "serialize_trajectory");
      for (double v : a->values()) put(std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  return out;
}

inline Array3 intermediate_output(const Array3& x_tilde, const TrajectoryRecord& rec) {
  return clamp(axpby(1.0, x_tilde, 1.0, crop(rec.r0_pred, x_tilde.height(), x_tilde.width())), -1.0, 1.0);
}

}  // namespace resdiff
