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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resdiff/codec.hpp"
#include "resdiff/common.hpp"
#include "resdiff/denoiser.hpp"
#include "resdiff/residual.hpp"
#include "resdiff/rng.hpp"
#include "resdiff/schedule.hpp"

namespace resdiff {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 4;
  int steps = 2000;
  double lambda_perceptual = 0.001;
  WeightMode weight_mode = WeightMode::kUnit;
  std::uint64_t seed = 0;
  /// Side of the random square training crops (multiple of 4).
  int crop = 32;
  bool flips = true;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw ParameterError("train: learning rate must be positive");
  if (c.batch_size < 1) throw ParameterError("train: batch size must be >= 1");
  if (c.steps < 0) throw ParameterError("train: steps must be >= 0");
  if (c.crop < kSizeMultiple || c.crop % kSizeMultiple) throw ParameterError("train: crop must be a positive multiple of 4");
  if (c.lambda_perceptual < 0.0) throw ParameterError("train: lambda_perceptual must be >= 0");
}

struct TrainState {
  DenoiserModel model;
  AdamState adam;
  std::vector<double> loss_history;
};

/// Draws one training example: a random image, a random crop (with optional
/// horizontal flip) of it and of its base reconstruction at `lambda`, a
/// uniformly drawn timestep and Gaussian noise.
inline TrainExample draw_example(const std::vector<Array3>& corpus, double lambda, const NoiseSchedule& s,
                                 const TrainConfig& cfg, const CodecConstants& constants, Rng& rng) {
  const Array3& x = corpus[rng.below(corpus.size())];
  const int side_h = std::min(cfg.crop, x.height() / kSizeMultiple * kSizeMultiple);
  const int side_w = std::min(cfg.crop, x.width() / kSizeMultiple * kSizeMultiple);
  if (side_h < kSizeMultiple || side_w < kSizeMultiple) throw ParameterError("train: corpus image smaller than 4x4");
  const Array3 xt = base_reconstruction(x, lambda, constants);
  const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(x.height() - side_h + 1)));
  const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(x.width() - side_w + 1)));
  const bool flip = cfg.flips && rng.below(2) == 1;
  TrainExample ex;
  ex.x_tilde = Array3(x.channels(), side_h, side_w);
  ex.r0 = Array3(x.channels(), side_h, side_w);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < side_h; ++y)
      for (int xx = 0; xx < side_w; ++xx) {
        const int sx = ox + (flip ? side_w - 1 - xx : xx);
        ex.x_tilde(c, y, xx) = xt(c, oy + y, sx);
        ex.r0(c, y, xx) = x(c, oy + y, sx) - xt(c, oy + y, sx);
      }
  ex.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T())));
  ex.eps = rng.normal_array(x.channels(), side_h, side_w);
  return ex;
}

using TrainCallback = std::function<void(int step, double loss)>;

/// Continues training `state` for cfg.steps steps. The rate of the base
/// reconstructions is drawn once per batch; the model never sees it.
inline void train(TrainState& state, const std::vector<Array3>& corpus, const NoiseSchedule& s,
                  const TrainConfig& cfg, const CodecConstants& constants = {}, const TrainCallback& cb = {}) {
  validate(cfg);
  if (corpus.empty()) throw ParameterError("train: empty corpus");
  Rng rng(cfg.seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(state.adam.step));
  const LossConfig lc{cfg.weight_mode, cfg.lambda_perceptual};
  const AdamConfig ac{cfg.lr};
  double initial = state.loss_history.empty() ? -1.0 : state.loss_history.front();
  int above = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    const double lambda = sample_lambda(rng.uniform(), constants.lambda_min, constants.lambda_max);
    std::vector<TrainExample> batch;
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(draw_example(corpus, lambda, s, cfg, constants, rng));
    Gradients g;
    try {
      g = backward(state.model, s, batch, lc);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at step " + std::to_string(state.adam.step + 1));
    }
    adam_step(state.model, g, state.adam, ac);
    state.loss_history.push_back(g.loss);
    if (initial < 0.0) initial = g.loss;
    above = g.loss > 10.0 * initial ? above + 1 : 0;
    if (above >= 1000) {
      throw TrainingError("training diverged: loss above 10x initial for 1000 steps at step " +
                          std::to_string(state.adam.step));
    }
    if (cb) cb(static_cast<int>(state.adam.step), g.loss);
  }
}

inline TrainState train(const std::vector<Array3>& corpus, const NoiseSchedule& s, const TrainConfig& cfg,
                        const ModelConfig& mc = {}, const CodecConstants& constants = {},
                        const TrainCallback& cb = {}) {
  TrainState state{DenoiserModel(mc), {}, {}};
  train(state, corpus, s, cfg, constants, cb);
  return state;
}

/// Mean of the first and last `window` entries of a loss trace.
inline std::pair<double, double> loss_endpoints(const std::vector<double>& h, std::size_t window) {
  if (h.empty()) return {0.0, 0.0};
  window = std::min(window, h.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    a += h[i];
    b += h[h.size() - 1 - i];
  }
  return {a / window, b / window};
}

}  // namespace resdiff
