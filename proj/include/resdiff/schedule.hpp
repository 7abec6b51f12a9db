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

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "resdiff/common.hpp"

namespace resdiff {

enum class ScheduleKind { kLinear, kCosine, kSigmoidFamily };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kLinear: return "linear";
    case ScheduleKind::kCosine: return "cosine";
    case ScheduleKind::kSigmoidFamily: return "sigmoid";
  }
  return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "sigmoid" || s == "sigmoid_family") return ScheduleKind::kSigmoidFamily;
  throw ParameterError("unknown schedule kind '" + s + "'");
}

/// Serializable description of a noise schedule. Only the fields relevant to
/// `kind` are used.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kLinear;
  int T = 1000;
  double beta1 = 1e-4;
  double betaT = 0.02;
  double L = 5.0;
  double p = 0.3;

  bool operator==(const ScheduleSpec&) const = default;
};

/// Named sigmoid-family variants.
inline constexpr std::pair<double, double> kEarlyDecay{5.0, 0.3};
inline constexpr std::pair<double, double> kLateDecay{1.0, 3.0};
inline constexpr std::pair<double, double> kSmoothLateDecay{6.0, 3.0};

/// Discrete noise schedule over steps t = 1..T. Index 0 is the data step with
/// alpha_bar(0) = 1. Immutable after construction.
class NoiseSchedule {
 public:
  /// Builds a schedule from per-step betas (betas[0] is beta_1).
  explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.size() < 2) throw ParameterError("schedule needs T >= 2");
    alpha_.resize(beta_.size());
    alpha_bar_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) {
        throw ParameterError("beta_" + std::to_string(i + 1) + " outside (0, 1)");
      }
      alpha_[i] = 1.0 - beta_[i];
      prod *= alpha_[i];
      alpha_bar_[i] = prod;
    }
  }

  int T() const noexcept { return static_cast<int>(beta_.size()); }

  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  /// alpha_bar(0) == 1.
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bar_[index(t)];
  }

  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

  void check_step(int t) const {
    if (t < 1 || t > T()) {
      throw ParameterError("timestep " + std::to_string(t) + " outside [1, " +
                           std::to_string(T()) + "]");
    }
  }

 private:
  std::size_t index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

inline NoiseSchedule make_linear(int T, double beta1, double betaT) {
  if (T < 2) throw ParameterError("make_linear: T must be >= 2");
  if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0)) {
    throw ParameterError("make_linear: need 0 < beta1 <= betaT < 1");
  }
  std::vector<double> b(static_cast<std::size_t>(T));
  const double denom = static_cast<double>(T - 1);
  for (int t = 1; t <= T; ++t) {
    b[t - 1] = (T - t) / denom * beta1 + (t - 1) / denom * betaT;
  }
  return NoiseSchedule(std::move(b));
}

namespace detail {
inline constexpr double kBetaFloor = 1e-8;
inline constexpr double kBetaCeil = 0.999;

inline std::vector<double> betas_from_alpha_bar(const std::vector<double>& abar) {
  // abar has T+1 entries, abar[0] is the data step.
  std::vector<double> b(abar.size() - 1);
  for (std::size_t i = 1; i < abar.size(); ++i) {
    if (abar[i] > abar[i - 1]) {
      throw ParameterError("schedule: alpha_bar increases at step " + std::to_string(i));
    }
    const double raw = abar[i - 1] > 0.0 ? 1.0 - abar[i] / abar[i - 1] : 1.0;
    b[i - 1] = std::clamp(raw, kBetaFloor, kBetaCeil);
  }
  return b;
}
}  // namespace detail

/// Continuous alpha_bar of the sigmoid family at generalized time u in [0, 1].
inline double sigmoid_family_alpha_bar(double u, double L, double p) {
  auto sig = [&](double x) { return 1.0 / (1.0 + std::exp(2.0 * L * std::pow(x, p) - L)); };
  const double s0 = 1.0 / (1.0 + std::exp(-L));
  const double s1 = 1.0 / (1.0 + std::exp(L));
  return (sig(u) - s1) / (s0 - s1);
}

inline NoiseSchedule make_sigmoid_family(int T, double L, double p) {
  if (T < 2) throw ParameterError("make_sigmoid_family: T must be >= 2");
  if (!(L > 0.0) || !(p > 0.0)) throw ParameterError("make_sigmoid_family: need L > 0, p > 0");
  std::vector<double> abar(static_cast<std::size_t>(T) + 1);
  for (int i = 0; i <= T; ++i) {
    abar[i] = sigmoid_family_alpha_bar(static_cast<double>(i) / T, L, p);
  }
  return NoiseSchedule(detail::betas_from_alpha_bar(abar));
}

/// Squared-cosine schedule with offset 0.008.
inline NoiseSchedule make_cosine(int T) {
  if (T < 2) throw ParameterError("make_cosine: T must be >= 2");
  constexpr double s = 0.008;
  auto f = [&](double u) {
    const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> abar(static_cast<std::size_t>(T) + 1);
  const double f0 = f(0.0);
  for (int i = 0; i <= T; ++i) abar[i] = f(static_cast<double>(i) / T) / f0;
  return NoiseSchedule(detail::betas_from_alpha_bar(abar));
}

inline void validate(const ScheduleSpec& spec) {
  if (spec.T < 2) throw ParameterError("schedule: T must be >= 2");
  if (spec.kind == ScheduleKind::kLinear &&
      !(spec.beta1 > 0.0 && spec.beta1 <= spec.betaT && spec.betaT < 1.0)) {
    throw ParameterError("schedule: need 0 < beta1 <= betaT < 1");
  }
  if (spec.kind == ScheduleKind::kSigmoidFamily && !(spec.L > 0.0 && spec.p > 0.0)) {
    throw ParameterError("schedule: need L > 0 and p > 0");
  }
}

inline NoiseSchedule make_schedule(const ScheduleSpec& spec) {
  validate(spec);
  switch (spec.kind) {
    case ScheduleKind::kLinear: return make_linear(spec.T, spec.beta1, spec.betaT);
    case ScheduleKind::kCosine: return make_cosine(spec.T);
    case ScheduleKind::kSigmoidFamily: return make_sigmoid_family(spec.T, spec.L, spec.p);
  }
  throw ParameterError("unknown schedule kind");
}

/// Coefficients of the forward-process posterior mean,
/// mean = eta * r0 + xi * r_t.
struct PosteriorCoefficients {
  double eta;
  double xi;
};

inline PosteriorCoefficients posterior_coefficients(const NoiseSchedule& s, int t) {
  s.check_step(t);
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t - 1);
  return {std::sqrt(ab_prev) * s.beta(t) / (1.0 - ab),
          std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab)};
}

/// Variance of q(r_{t-1} | r_t, r_0). Zero at t = 1.
inline double posterior_variance(const NoiseSchedule& s, int t) {
  s.check_step(t);
  return (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
}

/// Posterior variance with the t = 1 value replaced by the t = 2 value, so
/// that the loss weight stays finite.
inline double clipped_posterior_variance(const NoiseSchedule& s, int t) {
  s.check_step(t);
  return posterior_variance(s, t == 1 ? 2 : t);
}

enum class WeightMode { kUnit, kTheoretical };

inline std::string to_string(WeightMode m) {
  return m == WeightMode::kUnit ? "unit" : "theoretical";
}

inline WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "unit") return WeightMode::kUnit;
  if (s == "theoretical") return WeightMode::kTheoretical;
  throw ParameterError("unknown weight mode '" + s + "'");
}

/// Per-step weight of the r0-prediction objective: 1, or eta^2 / (2 sigma^2).
inline double loss_weight(const NoiseSchedule& s, int t, WeightMode mode) {
  s.check_step(t);
  if (mode == WeightMode::kUnit) return 1.0;
  const double eta = posterior_coefficients(s, t).eta;
  return eta * eta / (2.0 * clipped_posterior_variance(s, t));
}

/// Respaced sampling plan: strictly decreasing timesteps, each paired with the
/// timestep that follows it (0 for the data step).
class TimestepPlan {
 public:
  explicit TimestepPlan(std::vector<int> steps) : steps_(std::move(steps)) {
    if (steps_.empty()) throw ParameterError("TimestepPlan: empty");
    for (std::size_t i = 1; i < steps_.size(); ++i) {
      if (steps_[i] >= steps_[i - 1]) throw ParameterError("TimestepPlan: not strictly decreasing");
    }
    if (steps_.back() < 1) throw ParameterError("TimestepPlan: entries must be >= 1");
  }

  std::size_t size() const noexcept { return steps_.size(); }
  int operator[](std::size_t i) const { return steps_.at(i); }
  /// Timestep reached after executing position i; 0 after the last entry.
  int predecessor(std::size_t i) const { return i + 1 < steps_.size() ? steps_[i + 1] : 0; }
  const std::vector<int>& steps() const noexcept { return steps_; }
  int max_step() const noexcept { return steps_.front(); }

 private:
  std::vector<int> steps_;
};

/// Evenly spaced subset of n_steps timesteps out of [1, T]:
/// index_k = round((k + 1) * T / n_steps).
inline TimestepPlan respace(int T, int n_steps) {
  if (T < 1) throw ParameterError("respace: T must be >= 1");
  if (n_steps < 1 || n_steps > T) {
    throw ParameterError("respace: n_steps must lie in [1, T]");
  }
  const double stride = static_cast<double>(T) / n_steps;
  std::set<int> picked;
  for (int k = 0; k < n_steps; ++k) {
    picked.insert(std::clamp(static_cast<int>(std::lround((k + 1) * stride)), 1, T));
  }
  return TimestepPlan(std::vector<int>(picked.rbegin(), picked.rend()));
}

}  // namespace resdiff
