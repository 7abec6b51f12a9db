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

// Conditional residual predictor g(r_t, x_tilde, t) -> r0'.
//
// A two-level convolutional encoder-decoder: the noisy residual and the base
// reconstruction are concatenated at the input, each residual block receives a
// projection of a sinusoidal timestep embedding as a per-channel bias, and the
// decoder mirrors the encoder through skip connections. The output convolution
// starts at zero so the initial prediction is the zero residual.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "resdiff/autodiff.hpp"
#include "resdiff/common.hpp"
#include "resdiff/diffusion.hpp"
#include "resdiff/rng.hpp"
#include "resdiff/schedule.hpp"

namespace resdiff {

struct ModelConfig {
  int width = 32;
  int image_channels = 3;
  std::uint64_t init_seed = 1;

  bool operator==(const ModelConfig&) const = default;
};

/// Spatial sizes must be multiples of this (two 2x downsamplings).
inline constexpr int kSizeMultiple = 4;

inline int norm_groups(int channels) {
  int g = 8;
  while (channels % g != 0) g /= 2;
  return g;
}

/// Sinusoidal features [sin(t f_i), cos(t f_i)] with geometric frequencies.
inline ad::Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  ad::Tensor e({static_cast<int>(t.size()), dim});
  for (std::size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / half);
      e.data[n * dim + i] = std::sin(t[n] * f);
      e.data[n * dim + half + i] = std::cos(t[n] * f);
    }
  return e;
}

class DenoiserModel {
 public:
  DenoiserModel() : DenoiserModel(ModelConfig{}) {}

  explicit DenoiserModel(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.width < 2 || cfg.width % 2) throw ParameterError("DenoiserModel: width must be even and >= 2");
    Rng rng(cfg.init_seed);
    const int C = cfg.width, C2 = 2 * C, E = 4 * C, IC = cfg.image_channels;
    add_linear("temb.0", C, E, rng);
    add_linear("temb.1", E, E, rng);
    add_conv("in", 2 * IC, C, 3, rng);
    add_resblock("down0", C, C, rng);
    add_resblock("down1", C, C2, rng);
    add_resblock("mid", C2, C2, rng);
    add_resblock("up1", C2 + C2, C2, rng);
    add_resblock("up0", C2 + C, C, rng);
    add_norm("out.norm", C);
    add_conv("out", C, IC, 3, rng, /*zero=*/true);
  }

  const ModelConfig& config() const noexcept { return cfg_; }

  const std::vector<std::pair<std::string, ad::Var>>& parameters() const noexcept { return params_; }

  const ad::Var& param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
    return params_[it->second].second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v->grad = ad::Tensor();
  }

  /// Deep copy of every parameter value.
  DenoiserModel clone() const {
    DenoiserModel m(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) m.params_[i].second->value = params_[i].second->value;
    return m;
  }

  bool all_finite() const {
    for (const auto& [_, v] : params_)
      if (!resdiff::all_finite(v->value.data)) return false;
    return true;
  }

  /// r_t, x_tilde: [N, C, H, W]; t: N timesteps. Returns r0' of the same shape.
  ad::Var forward(ad::Graph& g, const ad::Var& r_t, const ad::Var& x_tilde, const std::vector<int>& t) const {
    const auto& s = r_t->value.shape;
    if (s.size() != 4 || x_tilde->value.shape != s || s[1] != cfg_.image_channels ||
        t.size() != static_cast<std::size_t>(s[0])) {
      throw ParameterError("DenoiserModel: input shape mismatch " + ad::shape_string(s) + " vs " +
                           ad::shape_string(x_tilde->value.shape));
    }
    if (s[2] % kSizeMultiple || s[3] % kSizeMultiple) {
      throw ParameterError("DenoiserModel: spatial size must be a multiple of 4, got " + ad::shape_string(s));
    }
    ad::Var emb = ad::constant(timestep_embedding(t, cfg_.width));
    emb = g.silu(g.linear(emb, param("temb.0.w"), param("temb.0.b")));
    emb = g.silu(g.linear(emb, param("temb.1.w"), param("temb.1.b")));

    ad::Var h = conv(g, "in", g.concat_channels(r_t, x_tilde));
    const ad::Var skip0 = resblock(g, "down0", h, emb);
    const ad::Var skip1 = resblock(g, "down1", g.avg_pool2(skip0), emb);
    h = resblock(g, "mid", g.avg_pool2(skip1), emb);
    h = resblock(g, "up1", g.concat_channels(g.upsample2(h), skip1), emb);
    h = resblock(g, "up0", g.concat_channels(g.upsample2(h), skip0), emb);
    h = g.silu(norm(g, "out.norm", h));
    return conv(g, "out", h);
  }

 private:
  ad::Var conv(ad::Graph& g, const std::string& n, const ad::Var& x) const {
    return g.conv2d(x, param(n + ".w"), param(n + ".b"));
  }
  ad::Var norm(ad::Graph& g, const std::string& n, const ad::Var& x) const {
    return g.group_norm(x, param(n + ".gamma"), param(n + ".beta"), norm_groups(x->value.shape[1]));
  }

  ad::Var resblock(ad::Graph& g, const std::string& n, const ad::Var& x, const ad::Var& emb) const {
    ad::Var h = conv(g, n + ".conv1", g.silu(norm(g, n + ".norm1", x)));
    h = g.add_channel_bias(h, g.linear(emb, param(n + ".temb.w"), param(n + ".temb.b")));
    h = conv(g, n + ".conv2", g.silu(norm(g, n + ".norm2", h)));
    const ad::Var skip = index_.count(n + ".skip.w") ? conv(g, n + ".skip", x) : x;
    return g.add(h, skip);
  }

  void add(const std::string& name, ad::Tensor t) {
    index_[name] = params_.size();
    params_.emplace_back(name, ad::parameter(std::move(t)));
  }

  void add_conv(const std::string& n, int ci, int co, int k, Rng& rng, bool zero = false) {
    ad::Tensor w({co, ci, k, k});
    if (!zero) {
      const double sd = std::sqrt(2.0 / (ci * k * k));
      for (double& v : w.data) v = sd * rng.normal();
    }
    add(n + ".w", std::move(w));
    add(n + ".b", ad::Tensor({co}));
  }

  void add_linear(const std::string& n, int in, int out, Rng& rng) {
    ad::Tensor w({out, in});
    const double sd = std::sqrt(1.0 / in);
    for (double& v : w.data) v = sd * rng.normal();
    add(n + ".w", std::move(w));
    add(n + ".b", ad::Tensor({out}));
  }

  void add_norm(const std::string& n, int c) {
    add(n + ".gamma", ad::Tensor({c}, 1.0));
    add(n + ".beta", ad::Tensor({c}));
  }

  void add_resblock(const std::string& n, int ci, int co, Rng& rng) {
    add_norm(n + ".norm1", ci);
    add_conv(n + ".conv1", ci, co, 3, rng);
    add_linear(n + ".temb", 4 * cfg_.width, co, rng);
    add_norm(n + ".norm2", co);
    add_conv(n + ".conv2", co, co, 3, rng);
    if (ci != co) add_conv(n + ".skip", ci, co, 1, rng);
  }

  ModelConfig cfg_;
  std::vector<std::pair<std::string, ad::Var>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Stacks equally shaped fields into an [N, C, H, W] tensor.
inline ad::Tensor stack(const std::vector<Array3>& xs) {
  if (xs.empty()) throw ParameterError("stack: empty batch");
  const Array3& f = xs.front();
  ad::Tensor t({static_cast<int>(xs.size()), f.channels(), f.height(), f.width()});
  for (std::size_t n = 0; n < xs.size(); ++n) {
    require_same_shape(f, xs[n], "stack");
    std::copy(xs[n].storage().begin(), xs[n].storage().end(), t.data.begin() + static_cast<std::ptrdiff_t>(n * f.size()));
  }
  return t;
}

inline Array3 unstack(const ad::Tensor& t, int n) {
  Array3 a(t.shape[1], t.shape[2], t.shape[3]);
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(n * a.size()), a.size(), a.storage().begin());
  return a;
}

/// Single-image prediction r0' = g(r_t, x_tilde, t). Pure.
inline Array3 predict(const DenoiserModel& model, const Array3& r_t, const Array3& x_tilde, int t) {
  require_same_shape(r_t, x_tilde, "predict");
  ad::Graph g(false);
  const ad::Var out = model.forward(g, ad::constant(stack({r_t})), ad::constant(stack({x_tilde})), {t});
  return unstack(out->value, 0);
}

/// One training example. r_t is derived from (r0, t, eps) by the forward
/// process.
struct TrainExample {
  Array3 x_tilde;
  Array3 r0;
  Array3 eps;
  int t = 1;
};

struct LossConfig {
  WeightMode weight_mode = WeightMode::kUnit;
  /// Weight of the gradient-field perceptual proxy.
  double lambda_perceptual = 0.001;
};

namespace detail {
struct BatchTensors {
  ad::Var r_t, x_tilde;
  ad::Tensor r0;
  std::vector<int> t;
  std::vector<double> weights;
};

inline BatchTensors prepare_batch(const NoiseSchedule& s, const std::vector<TrainExample>& batch, const LossConfig& lc) {
  if (batch.empty()) throw ParameterError("loss: empty batch");
  std::vector<Array3> rt, xt, r0;
  BatchTensors b;
  for (const auto& ex : batch) {
    rt.push_back(forward_sample(s, ex.r0, ex.t, ex.eps));
    xt.push_back(ex.x_tilde);
    r0.push_back(ex.r0);
    b.t.push_back(ex.t);
    b.weights.push_back(loss_weight(s, ex.t, lc.weight_mode));
  }
  b.r_t = ad::constant(stack(rt));
  b.x_tilde = ad::constant(stack(xt));
  b.r0 = stack(r0);
  return b;
}
}  // namespace detail

/// w_t * MSE(r0, r0') + lambda_perceptual * d_grad(x, x_tilde + r0'), averaged
/// over the batch.
inline double loss(const DenoiserModel& model, const NoiseSchedule& s, const std::vector<TrainExample>& batch,
                   const LossConfig& lc = {}) {
  auto b = detail::prepare_batch(s, batch, lc);
  ad::Graph g(false);
  const ad::Var pred = model.forward(g, b.r_t, b.x_tilde, b.t);
  return g.residual_loss(pred, b.r0, b.weights, lc.lambda_perceptual)->value.data[0];
}

/// Gradient of the loss with respect to every trainable parameter.
struct Gradients {
  double loss = 0.0;
  std::map<std::string, std::vector<double>> by_name;
};

inline Gradients backward(DenoiserModel& model, const NoiseSchedule& s, const std::vector<TrainExample>& batch,
                          const LossConfig& lc = {}) {
  auto b = detail::prepare_batch(s, batch, lc);
  model.zero_grad();
  ad::Graph g(true);
  const ad::Var pred = model.forward(g, b.r_t, b.x_tilde, b.t);
  const ad::Var l = g.residual_loss(pred, b.r0, b.weights, lc.lambda_perceptual);
  Gradients out;
  out.loss = l->value.data[0];
  if (!std::isfinite(out.loss)) throw TrainingError("non-finite loss");
  g.backward(l);
  for (const auto& [name, v] : model.parameters()) {
    out.by_name[name] = v->has_grad() ? v->grad.data : std::vector<double>(v->value.size(), 0.0);
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// Bias-corrected Adam update of every parameter that has a gradient.
inline void adam_step(DenoiserModel& model, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ParameterError("adam: learning rate must be positive");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, var] : model.parameters()) {
    auto it = grads.by_name.find(name);
    if (it == grads.by_name.end()) continue;
    const auto& g = it->second;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    auto& p = var->value.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double upd = cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      if (!std::isfinite(upd)) {
        throw TrainingError("adam: non-finite update for '" + name + "' at step " + std::to_string(state.step));
      }
      p[i] -= upd;
    }
  }
}

}  // namespace resdiff
