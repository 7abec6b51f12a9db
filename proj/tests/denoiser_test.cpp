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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "resdiff/corpus.hpp"
#include "resdiff/denoiser.hpp"
#include "resdiff/diffusion.hpp"
#include "resdiff/rng.hpp"
#include "resdiff/train.hpp"

namespace resdiff {
namespace {

const NoiseSchedule& Linear() {
  static const NoiseSchedule s = make_linear(1000, 1e-4, 0.02);
  return s;
}

std::vector<TrainExample> RandomBatch(int n, int side, Rng& rng) {
  std::vector<TrainExample> b;
  for (int i = 0; i < n; ++i) {
    TrainExample ex;
    ex.x_tilde = rng.normal_array(3, side, side);
    ex.r0 = rng.normal_array(3, side, side);
    for (double& v : ex.r0.storage()) v *= 0.1;
    ex.eps = rng.normal_array(3, side, side);
    ex.t = 1 + static_cast<int>(rng.below(1000));
    b.push_back(std::move(ex));
  }
  return b;
}

void Randomize(const DenoiserModel& m, const std::string& name, double scale, Rng& rng) {
  for (double& v : m.param(name)->value.data) v = scale * rng.normal();
}

TEST(Denoiser, ParameterCounts) {
  EXPECT_EQ(DenoiserModel(ModelConfig{32, 3, 1}).parameter_count(), 366563u);
  EXPECT_EQ(DenoiserModel(ModelConfig{16, 3, 1}).parameter_count(), 92915u);
}

TEST(Denoiser, RejectsBadWidth) {
  EXPECT_THROW(DenoiserModel(ModelConfig{3, 3, 1}), ParameterError);
  EXPECT_THROW(DenoiserModel(ModelConfig{0, 3, 1}), ParameterError);
}

TEST(Denoiser, ZeroHeadPredictsZero) {
  Rng rng(2);
  const DenoiserModel m(ModelConfig{8, 3, 1});
  const Array3 out = predict(m, rng.normal_array(3, 12, 16), rng.normal_array(3, 12, 16), 500);
  EXPECT_EQ(out.channels(), 3);
  EXPECT_EQ(out.height(), 12);
  EXPECT_EQ(out.width(), 16);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, PredictIsPureAndShapePreserving) {
  Rng rng(3);
  const DenoiserModel m(ModelConfig{8, 3, 5});
  Randomize(m, "out.w", 0.05, rng);
  const Array3 rt = rng.normal_array(3, 8, 20), xt = rng.normal_array(3, 8, 20);
  const Array3 a = predict(m, rt, xt, 17);
  const Array3 b = predict(m, rt, xt, 17);
  ASSERT_EQ(a.height(), 8);
  ASSERT_EQ(a.width(), 20);
  EXPECT_EQ(a.storage(), b.storage());
  const Array3 c = predict(m, rt, xt, 900);
  EXPECT_NE(a.storage(), c.storage());
}

TEST(Denoiser, SameSeedSameWeights) {
  const DenoiserModel a(ModelConfig{8, 3, 9}), b(ModelConfig{8, 3, 9}), c(ModelConfig{8, 3, 10});
  EXPECT_EQ(a.param("down1.conv1.w")->value.data, b.param("down1.conv1.w")->value.data);
  EXPECT_NE(a.param("down1.conv1.w")->value.data, c.param("down1.conv1.w")->value.data);
}

TEST(Denoiser, ShapeErrors) {
  Rng rng(4);
  const DenoiserModel m(ModelConfig{4, 3, 1});
  EXPECT_THROW(predict(m, rng.normal_array(3, 10, 8), rng.normal_array(3, 10, 8), 1), ParameterError);
  EXPECT_THROW(predict(m, rng.normal_array(3, 8, 8), rng.normal_array(3, 8, 12), 1), ParameterError);
  EXPECT_THROW(predict(m, rng.normal_array(1, 8, 8), rng.normal_array(1, 8, 8), 1), ParameterError);
}

TEST(Denoiser, CloneIsDeep) {
  const DenoiserModel a(ModelConfig{4, 3, 1});
  const DenoiserModel b = a.clone();
  b.param("in.w")->value.data[0] += 1.0;
  EXPECT_NE(a.param("in.w")->value.data[0], b.param("in.w")->value.data[0]);
}

// Scalar-loop oracle of the training objective for a model whose output is 0.
double ZeroPredictionLoss(const NoiseSchedule& s, const std::vector<TrainExample>& batch, const LossConfig& lc) {
  double total = 0.0;
  for (const auto& ex : batch) {
    const int C = ex.r0.channels(), H = ex.r0.height(), W = ex.r0.width();
    double mse = 0.0, gh = 0.0, gv = 0.0;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double d = -ex.r0(c, y, x);
          mse += d * d;
          if (x + 1 < W) gh += std::pow(-ex.r0(c, y, x + 1) - d, 2);
          if (y + 1 < H) gv += std::pow(-ex.r0(c, y + 1, x) - d, 2);
        }
    total += loss_weight(s, ex.t, lc.weight_mode) * mse / (C * H * W);
    total += lc.lambda_perceptual * (gh / (C * H * (W - 1.0)) + gv / (C * (H - 1.0) * W));
  }
  return total / static_cast<double>(batch.size());
}

TEST(Loss, MatchesScalarOracle) {
  Rng rng(5);
  const auto batch = RandomBatch(3, 8, rng);
  const DenoiserModel m(ModelConfig{4, 3, 1});
  for (WeightMode mode : {WeightMode::kUnit, WeightMode::kTheoretical}) {
    const LossConfig lc{mode, 0.01};
    const double want = ZeroPredictionLoss(Linear(), batch, lc);
    EXPECT_NEAR(loss(m, Linear(), batch, lc), want, 1e-12 * std::max(1.0, want));
  }
}

TEST(Loss, PlainMseWithoutPerceptualTerm) {
  Rng rng(6);
  const auto batch = RandomBatch(2, 8, rng);
  const DenoiserModel m(ModelConfig{4, 3, 1});
  double want = 0.0;
  for (const auto& ex : batch) {
    double s = 0.0;
    for (double v : ex.r0.values()) s += v * v;
    want += s / static_cast<double>(ex.r0.size());
  }
  want /= 2.0;
  EXPECT_NEAR(loss(m, Linear(), batch, LossConfig{WeightMode::kUnit, 0.0}), want, 1e-15);
}

TEST(Loss, ZeroWhenPredictionIsExact) {
  // With a zero head, r0 = 0 is predicted exactly.
  Rng rng(7);
  auto batch = RandomBatch(2, 8, rng);
  for (auto& ex : batch) std::fill(ex.r0.storage().begin(), ex.r0.storage().end(), 0.0);
  const DenoiserModel m(ModelConfig{4, 3, 1});
  EXPECT_EQ(loss(m, Linear(), batch, LossConfig{WeightMode::kTheoretical, 0.5}), 0.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const DenoiserModel m(ModelConfig{4, 3, 2});
  Randomize(m, "out.w", 0.1, rng);
  Randomize(m, "out.b", 0.1, rng);
  const auto batch = RandomBatch(2, 8, rng);
  const LossConfig lc{WeightMode::kUnit, 0.05};
  DenoiserModel& mm = const_cast<DenoiserModel&>(m);
  const Gradients g = backward(mm, Linear(), batch, lc);
  EXPECT_NEAR(g.loss, loss(m, Linear(), batch, lc), 1e-14);

  std::vector<std::pair<std::string, std::size_t>> picks;
  const auto& params = m.parameters();
  for (int k = 0; k < 50; ++k) {
    const auto& [name, var] = params[rng.below(params.size())];
    picks.emplace_back(name, rng.below(var->value.size()));
  }
  const double h = 1e-4;
  for (const auto& [name, i] : picks) {
    double& p = m.param(name)->value.data[i];
    const double saved = p;
    p = saved + h;
    const double up = loss(m, Linear(), batch, lc);
    p = saved - h;
    const double down = loss(m, Linear(), batch, lc);
    p = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = g.by_name.at(name)[i];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    EXPECT_LT(std::abs(numeric - analytic) / scale, 1e-3) << name << "[" << i << "] " << analytic << " vs " << numeric;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  DenoiserModel m(ModelConfig{4, 3, 1});
  Gradients g;
  for (const auto& [name, v] : m.parameters()) g.by_name[name].assign(v->value.size(), 1.0);
  auto& w = m.param("in.w")->value.data;
  std::fill(w.begin(), w.end(), 0.0);
  AdamState st;
  adam_step(m, g, st, AdamConfig{});
  EXPECT_EQ(st.step, 1);
  for (double v : w) EXPECT_NEAR(v, -9.999999900000001e-5, 1e-19);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  DenoiserModel m(ModelConfig{4, 3, 1});
  Gradients g;
  for (const auto& [name, v] : m.parameters()) g.by_name[name].assign(v->value.size(), 0.0);
  const std::vector<double> before = m.param("mid.conv2.w")->value.data;
  AdamState st;
  adam_step(m, g, st, AdamConfig{});
  adam_step(m, g, st, AdamConfig{});
  EXPECT_EQ(m.param("mid.conv2.w")->value.data, before);
}

TEST(Adam, RejectsBadLearningRate) {
  DenoiserModel m(ModelConfig{4, 3, 1});
  AdamState st;
  EXPECT_THROW(adam_step(m, Gradients{}, st, AdamConfig{0.0}), ParameterError);
}

TrainConfig SmallTrain(int steps) {
  TrainConfig tc;
  tc.steps = steps;
  tc.crop = 16;
  tc.batch_size = 2;
  tc.seed = 11;
  return tc;
}

TEST(Train, DeterministicForSeed) {
  const auto corpus = make_corpus(kCorpusSeed, 2);
  const auto a = train(corpus, Linear(), SmallTrain(100), ModelConfig{4, 3, 1});
  const auto b = train(corpus, Linear(), SmallTrain(100), ModelConfig{4, 3, 1});
  EXPECT_EQ(a.loss_history, b.loss_history);
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i) {
    EXPECT_EQ(a.model.parameters()[i].second->value.data, b.model.parameters()[i].second->value.data);
  }
  EXPECT_EQ(a.loss_history.size(), 100u);
  EXPECT_EQ(a.adam.step, 100);
}

TEST(Train, ResumeContinuesStepCount) {
  const auto corpus = make_corpus(kCorpusSeed, 1);
  auto st = train(corpus, Linear(), SmallTrain(3), ModelConfig{4, 3, 1});
  train(st, corpus, Linear(), SmallTrain(2));
  EXPECT_EQ(st.adam.step, 5);
  EXPECT_EQ(st.loss_history.size(), 5u);
}

TEST(Train, NonFiniteParameterNamesStep) {
  const auto corpus = make_corpus(kCorpusSeed, 1);
  auto st = train(corpus, Linear(), SmallTrain(2), ModelConfig{4, 3, 1});
  st.model.param("out.b")->value.data[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(st, corpus, Linear(), SmallTrain(1));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsBadConfig) {
  const auto corpus = make_corpus(kCorpusSeed, 1);
  TrainConfig tc = SmallTrain(1);
  tc.crop = 10;
  EXPECT_THROW(train(corpus, Linear(), tc), ParameterError);
  EXPECT_THROW(train({}, Linear(), SmallTrain(1)), ParameterError);
}

double Median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

// Single-image overfit. Theoretical weights make per-batch losses heavy-tailed,
// so windows are summarized by their median.
double OverfitRatio(WeightMode mode) {
  const std::vector<Array3> one{make_corpus(kCorpusSeed, 1).front()};
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 4;
  tc.steps = 2000;
  tc.crop = 16;
  tc.seed = 3;
  tc.weight_mode = mode;
  const auto st = train(one, Linear(), tc, ModelConfig{8, 3, 1});
  const auto& h = st.loss_history;
  const std::size_t w = 200;
  return Median({h.end() - w, h.end()}) / Median({h.begin(), h.begin() + w});
}

TEST(Train, OverfitsOneImageUnitWeights) { EXPECT_LT(OverfitRatio(WeightMode::kUnit), 0.25); }

TEST(Train, OverfitsOneImageTheoreticalWeights) { EXPECT_LT(OverfitRatio(WeightMode::kTheoretical), 0.25); }

}  // namespace
}  // namespace resdiff
