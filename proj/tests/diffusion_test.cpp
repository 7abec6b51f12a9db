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

#include <cmath>

#include "resdiff/diffusion.hpp"
#include "resdiff/rng.hpp"

namespace resdiff {
namespace {

Array3 Random(std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Array3 a = rng.normal_array(3, 5, 4);
  for (double& v : a.values()) v *= scale;
  return a;
}

double MaxAbsDiff(const Array3& a, const Array3& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

class DiffusionTest : public ::testing::Test {
 protected:
  NoiseSchedule s = make_linear(1000, 1e-4, 0.02);
};

TEST_F(DiffusionTest, ForwardZeroNoiseScalesData) {
  const Array3 r0 = Random(1, 0.2);
  const Array3 rt = forward_sample(s, r0, 300, Array3(3, 5, 4));
  for (std::size_t i = 0; i < r0.size(); ++i) EXPECT_DOUBLE_EQ(rt[i], std::sqrt(s.alpha_bar(300)) * r0[i]);
}

TEST_F(DiffusionTest, ForwardZeroDataScalesNoise) {
  Array3 e(3, 5, 4);
  for (double& v : e.values()) v = 1.0;
  const Array3 rt = forward_sample(s, Array3(3, 5, 4), 700, e);
  for (double v : rt.values()) EXPECT_DOUBLE_EQ(v, std::sqrt(1.0 - s.alpha_bar(700)));
}

TEST_F(DiffusionTest, ForwardRejectsShapeMismatch) {
  EXPECT_THROW(forward_sample(s, Array3(3, 5, 4), 10, Array3(3, 4, 5)), ParameterError);
  EXPECT_THROW(forward_sample(s, Array3(3, 5, 4), 0, Array3(3, 5, 4)), ParameterError);
}

TEST_F(DiffusionTest, ForwardMonteCarloMoments) {
  const int t = 400;
  const double r0 = 0.3;
  Rng rng(7);
  const int n = 10000;
  double sum = 0.0, sq = 0.0;
  Array3 x(1, 1, 1);
  x[0] = r0;
  for (int i = 0; i < n; ++i) {
    Array3 e(1, 1, 1);
    e[0] = rng.normal();
    const double v = forward_sample(s, x, t, e)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  const double want_var = 1.0 - s.alpha_bar(t);
  EXPECT_NEAR(mean, std::sqrt(s.alpha_bar(t)) * r0, 3.0 * std::sqrt(want_var / n));
  EXPECT_NEAR(var, want_var, 3.0 * want_var * std::sqrt(2.0 / (n - 1)));
}

TEST_F(DiffusionTest, ImpliedNoiseRoundTrip) {
  const Array3 r0 = Random(2, 0.1), eps = Random(3);
  for (int t : {1, 2, 10, 500, 999, 1000}) {
    const Array3 rt = forward_sample(s, r0, t, eps);
    EXPECT_LE(MaxAbsDiff(implied_noise(s, rt, r0, t), eps), 1e-10) << "t=" << t;
  }
  EXPECT_THROW(implied_noise(s, r0, r0, 0), ParameterError);
}

TEST_F(DiffusionTest, PosteriorAtFirstStepIsData) {
  const Array3 r0 = Random(4, 0.1), r1 = Random(5);
  EXPECT_LE(MaxAbsDiff(posterior_mean(s, r1, r0, 1), r0), 1e-10);
}

TEST_F(DiffusionTest, PosteriorMeanMatchesCoefficients) {
  const Array3 r0 = Random(6, 0.1), rt = Random(7);
  for (int t : {2, 50, 1000}) {
    const auto [eta, xi] = posterior_coefficients(s, t);
    const Array3 m = posterior_mean(s, rt, r0, t);
    for (std::size_t i = 0; i < m.size(); ++i) ASSERT_NEAR(m[i], eta * r0[i] + xi * rt[i], 1e-12);
  }
}

TEST_F(DiffusionTest, DdimEndpointReturnsPrediction) {
  const Array3 r0 = Random(8, 0.1), rt = Random(9);
  EXPECT_EQ(ddim_step(s, rt, r0, 10, 0, 0.0), r0);
  EXPECT_EQ(ddim_step(s, rt, r0, 1000, 0, 1.0), r0);
}

TEST_F(DiffusionTest, DdimTwoStepComposition) {
  const Array3 r0 = Random(10, 0.1), eps = Random(11);
  const Array3 rt = forward_sample(s, r0, 900, eps);
  const Array3 direct = ddim_step(s, rt, r0, 900, 200, 0.0);
  const Array3 mid = ddim_step(s, rt, r0, 900, 600, 0.0);
  const Array3 composed = ddim_step(s, mid, r0, 600, 200, 0.0);
  EXPECT_LE(MaxAbsDiff(direct, composed), 1e-10);
  EXPECT_LE(MaxAbsDiff(direct, forward_sample(s, r0, 200, eps)), 1e-10);
}

TEST_F(DiffusionTest, DdimFullNoiseMatchesPosteriorVariance) {
  for (int t : {2, 10, 500, 1000}) {
    EXPECT_NEAR(ddim_sigma(s, t, t - 1, 1.0), std::sqrt(posterior_variance(s, t)), 1e-12);
  }
  EXPECT_EQ(ddim_sigma(s, 500, 400, 0.0), 0.0);
}

TEST_F(DiffusionTest, DdimStochasticNeedsNoise) {
  const Array3 r = Random(12);
  EXPECT_THROW(ddim_step(s, r, r, 500, 400, 0.5), ParameterError);
  EXPECT_THROW(ddim_step(s, r, r, 400, 500, 0.0), ParameterError);
  EXPECT_THROW(ddim_step(s, r, r, 500, 400, 1.5), ParameterError);
  const Array3 z = Random(13);
  const Array3 a = ddim_step(s, r, r, 500, 400, 0.5, &z);
  const Array3 b = ddim_step(s, r, r, 500, 400, 0.0);
  const double sigma = ddim_sigma(s, 500, 400, 0.5);
  ASSERT_GT(sigma, 0.0);
  EXPECT_GT(MaxAbsDiff(a, b), 0.0);
}

}  // namespace
}  // namespace resdiff
