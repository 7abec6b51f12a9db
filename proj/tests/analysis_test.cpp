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
#include <numbers>

#include "resdiff/analysis.hpp"
#include "resdiff/corpus.hpp"
#include "resdiff/rng.hpp"

namespace resdiff {
namespace {

TEST(Metrics, PsnrGolden) {
  const Array3 a(3, 4, 4);
  Array3 b(3, 4, 4);
  for (double& v : b.storage()) v = 0.2;
  EXPECT_NEAR(mse(a, b), 0.04, 1e-15);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
}

TEST(Metrics, PsnrCapAndShapes) {
  Rng rng(1);
  const Array3 a = rng.normal_array(3, 4, 4);
  EXPECT_EQ(psnr(a, a), 100.0);
  Array3 b = a;
  b[0] += 1e-9;
  EXPECT_EQ(psnr(a, b), 100.0);
  EXPECT_THROW(psnr(a, Array3(3, 4, 5)), ParameterError);
}

Array3 Vec(std::vector<double> v) {
  Array3 a(1, 1, static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) a[i] = v[i];
  return a;
}

TEST(Curvature, HandComputedAngles) {
  const auto c = curvature({Vec({1, 0}), Vec({1, 1}), Vec({-2, -2}), Vec({0, 3})});
  ASSERT_EQ(c.angles.size(), 3u);
  EXPECT_NEAR(c.angles[0], std::numbers::pi / 4, 1e-15);
  EXPECT_NEAR(c.angles[1], std::numbers::pi, 1e-7);
  EXPECT_NEAR(c.angles[2], 3 * std::numbers::pi / 4, 1e-15);
  for (bool d : c.degenerate) EXPECT_FALSE(d);
}

TEST(Curvature, ZeroVectorIsFlagged) {
  const auto c = curvature({Vec({1, 2}), Vec({0, 0}), Vec({3, 1})});
  ASSERT_EQ(c.angles.size(), 2u);
  EXPECT_EQ(c.angles[0], 0.0);
  EXPECT_EQ(c.angles[1], 0.0);
  EXPECT_TRUE(c.degenerate[0]);
  EXPECT_TRUE(c.degenerate[1]);
}

TEST(Curvature, NeedsTwoVectors) { EXPECT_THROW(curvature(std::vector<Array3>{Vec({1})}), ParameterError); }

TEST(Curvature, CsvHasOneRowPerPair) {
  Trajectory traj;
  for (int k = 0; k < 4; ++k) traj.records.push_back({static_cast<std::size_t>(k), 40 - 10 * k, Vec({1, 0}), Vec({1.0 + k, 1})});
  const std::string csv = curvature_csv(curvature(traj), traj);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.rfind("pair,t_from,t_to,angle_rad,degenerate\n1,40,30,", 0), 0u);
}

TEST(Patches, CropCount) {
  EXPECT_EQ(half_overlapping_crops(Array3(3, 64, 64)).size(), 9u);
  EXPECT_EQ(half_overlapping_crops(Array3(3, 32, 64)).size(), 3u);
  EXPECT_TRUE(half_overlapping_crops(Array3(3, 16, 64)).empty());
}

TEST(Patches, FeaturesOfRampAndConstant) {
  const int S = 8;
  Array3 p(3, S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      p(0, y, x) = 0.5;
      p(1, y, x) = 0.1 * x;
      p(2, y, x) = (x + y) % 2 ? 1.0 : -1.0;
    }
  const auto f = patch_features(p);
  ASSERT_EQ(f.size(), 12u);
  EXPECT_DOUBLE_EQ(f[0], 0.5);
  EXPECT_EQ(f[1], 0.0);
  EXPECT_EQ(f[2], 0.0);
  EXPECT_EQ(f[3], 0.0);
  const double pairs = 2.0 * S * (S - 1);
  EXPECT_NEAR(f[4], 0.35, 1e-15);
  EXPECT_NEAR(f[5], 0.01 * 5.25, 1e-15);
  EXPECT_NEAR(f[6], 0.01 * S * (S - 1) / pairs, 1e-15);
  EXPECT_NEAR(f[7], 0.0, 1e-28);
  EXPECT_NEAR(f[8], 0.0, 1e-15);
  EXPECT_NEAR(f[9], 1.0, 1e-15);
  EXPECT_NEAR(f[10], 4.0, 1e-15);
  EXPECT_NEAR(f[11], 64.0, 1e-13);
}

std::vector<std::vector<double>> Set(bool first) {
  std::vector<std::vector<double>> s;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> row;
    for (int j = 0; j < 3; ++j) {
      row.push_back(first ? std::sin(0.7 * i + j) + 0.1 * j * i / 40.0
                          : std::cos(0.3 * i + 2 * j) * (1 + 0.5 * j) + 0.05 * ((i * (j + 1)) % 7));
    }
    s.push_back(row);
  }
  return s;
}

TEST(Frechet, GoldenFixedSets) {
  const auto r = frechet_distance(Set(true), Set(false));
  EXPECT_NEAR(r.distance, 1.95230250582168, 1e-9);
  EXPECT_FALSE(r.regularized);
  EXPECT_NEAR(frechet_distance(Set(false), Set(true)).distance, r.distance, 1e-9);
}

TEST(Frechet, IdenticalSetsGiveZero) {
  EXPECT_NEAR(frechet_distance(Set(true), Set(true)).distance, 0.0, 1e-9);
}

TEST(Frechet, MeanShiftOnly) {
  auto a = Set(true), b = a;
  for (auto& row : b) row[1] += 0.5;
  EXPECT_NEAR(frechet_distance(a, b).distance, 0.25, 1e-9);
}

TEST(Frechet, TooFewSamples) {
  auto a = Set(true);
  a.resize(29);
  EXPECT_THROW(frechet_distance(a, Set(false)), ParameterError);
}

TEST(Frechet, SingularCovarianceIsRegularized) {
  auto a = Set(true);
  for (auto& row : a) row[2] = 2.0 * row[0];
  const auto r = frechet_distance(a, Set(false));
  EXPECT_TRUE(r.regularized);
  EXPECT_TRUE(std::isfinite(r.distance));
}

TEST(Frechet, ProxyOnCorpus) {
  const auto corpus = make_corpus(kCorpusSeed, 4);
  std::vector<Array3> noisy;
  Rng rng(3);
  for (const auto& img : corpus) {
    Array3 n = img;
    for (double& v : n.storage()) v += 0.2 * rng.normal();
    noisy.push_back(n);
  }
  const auto same = patch_frechet(corpus, corpus);
  EXPECT_NEAR(same.distance, 0.0, 1e-9);
  EXPECT_GT(patch_frechet(corpus, noisy).distance, 0.01);
  EXPECT_THROW(patch_frechet(make_corpus(kCorpusSeed, 3), corpus), ParameterError);
}

TEST(Traversal, EvalItemsUseRecoveredLambda) {
  const auto items = make_eval_items(make_corpus(kCorpusSeed, 2));
  ASSERT_EQ(items.size(), 2u);
  EXPECT_LT(items[0].lambda, items[1].lambda);
  EXPECT_NEAR(items[0].lambda, sample_lambda(0.25, 0.0004, 0.016), 1e-3 * items[0].lambda);
  EXPECT_LT(psnr(items[0].x, items[0].x_tilde), psnr(items[1].x, items[1].x_tilde));
}

TEST(Traversal, ZeroHeadReportIsFlat) {
  const auto items = make_eval_items(make_corpus(kCorpusSeed, 4));
  const DenoiserModel m(ModelConfig{4, 3, 1});
  const auto s = make_linear(1000, 1e-4, 0.02);
  const auto rep = traversal_report(m, s, items, SamplerConfig::late_start(1000, 10, 3),
                                    ThresholdTable({{0.001, 0.5}}, 0.95));
  ASSERT_EQ(rep.records.size(), 3u);
  ASSERT_EQ(rep.thresholded.size(), 3u);
  for (const auto& r : rep.records) {
    EXPECT_NEAR(r.psnr, rep.base_psnr, 1e-12);
    EXPECT_NEAR(r.proxy, rep.base_proxy, 1e-9);
    EXPECT_EQ(r.mean_abs_r0, 0.0);
  }
  EXPECT_EQ(rep.records[0].step, 1u);
  EXPECT_EQ(rep.records[2].t, respace(1000, 10)[9]);
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.rfind("step,t,psnr,proxy,mean_abs_r0,psnr_thr,proxy_thr,mean_abs_r0_thr\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Traversal, ThreadCountDoesNotChangeResult) {
  const auto items = make_eval_items(make_corpus(kCorpusSeed, 4));
  const DenoiserModel m(ModelConfig{4, 3, 1});
  Rng rng(12);
  for (double& v : m.param("out.w")->value.data) v = 0.05 * rng.normal();
  const auto s = make_linear(1000, 1e-4, 0.02);
  SamplerConfig c = SamplerConfig::late_start(1000, 10, 3);
  c.eta = 1.0;
  const auto one = traversal_report(m, s, items, c, std::nullopt, 1);
  const auto three = traversal_report(m, s, items, c, std::nullopt, 3);
  EXPECT_EQ(one.to_csv(), three.to_csv());
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
  std::vector<int> hits(50, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw ParameterError("boom");
               }),
               ParameterError);
}

}  // namespace
}  // namespace resdiff
