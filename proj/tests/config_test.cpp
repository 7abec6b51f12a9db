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

#include <filesystem>

#include "resdiff/checkpoint.hpp"
#include "resdiff/config.hpp"
#include "resdiff/corpus.hpp"

namespace resdiff {
namespace {

TEST(Config, DefaultsRoundTrip) {
  const ToolkitConfig c;
  EXPECT_EQ(parse_config(to_text(c)), c);
  EXPECT_EQ(parse_config(""), c);
}

TEST(Config, NonDefaultRoundTrip) {
  ToolkitConfig c;
  c.schedule.kind = ScheduleKind::kSigmoidFamily;
  c.schedule.L = 1.0 / 3.0;
  c.schedule.p = 0.3;
  c.codec.alpha_s = 12.345678901234567;
  c.model.width = 16;
  c.train.weight_mode = WeightMode::kTheoretical;
  c.train.flips = false;
  c.train.seed = 18446744073709551615ull;
  c.sampler.steps = 50;
  c.sampler.start_index = 10;
  c.sampler.stop_index = 40;
  c.sampler.eta = 0.1;
  c.sampler.thresholding = Thresholding::kTable;
  c.paths.corpus = "some dir/with spaces";
  EXPECT_EQ(parse_config(to_text(c)), c);
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto c = parse_config("# comment\n\n  model.width =  8  \r\nsampler.steps=20\nsampler.start_index = 15\n"
                              "sampler.stop_index = 20\n");
  EXPECT_EQ(c.model.width, 8);
  EXPECT_EQ(c.sampler.steps, 20);
  EXPECT_EQ(c.sampler_config().plan.size(), 20u);
  EXPECT_EQ(c.sampler_config().executed_steps(), 5u);
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config("model.depth = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("model.width = 8\nmodel.width = 8\n"), ConfigError);
  EXPECT_THROW(parse_config("model.width 8\n"), ConfigError);
  EXPECT_THROW(parse_config("model.width = 8x\n"), ConfigError);
  EXPECT_THROW(parse_config("model.width = 7\n"), ConfigError);
  EXPECT_THROW(parse_config("train.lr = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("train.flips = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("schedule.kind = quadratic\n"), ConfigError);
  EXPECT_THROW(parse_config("codec.lambda_min = 0.1\n"), ConfigError);
  EXPECT_THROW(parse_config("sampler.steps = 2000\n"), ConfigError);
  EXPECT_THROW(parse_config("sampler.start_index = 101\n"), ConfigError);
  EXPECT_THROW(parse_config("sampler.eta = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("schedule.T = 1\n"), ConfigError);
}

TEST(Config, MissingFile) {
  EXPECT_THROW(load_config("/nonexistent/resdiff.cfg"), std::runtime_error);
}

TrainState SmallState() {
  TrainConfig tc;
  tc.steps = 3;
  tc.crop = 8;
  tc.batch_size = 1;
  return train(make_corpus(kCorpusSeed, 1), make_linear(1000, 1e-4, 0.02), tc, ModelConfig{4, 3, 1});
}

ToolkitConfig SmallConfig() {
  ToolkitConfig c;
  c.model.width = 4;
  return c;
}

TEST(Checkpoint, RoundTrip) {
  const TrainState st = SmallState();
  const auto bytes = serialize_checkpoint(SmallConfig(), st);
  const Checkpoint ck = parse_checkpoint(bytes);
  EXPECT_EQ(ck.config, SmallConfig());
  EXPECT_EQ(ck.state.adam.step, 3);
  EXPECT_EQ(ck.state.loss_history, st.loss_history);
  EXPECT_EQ(ck.state.adam.m, st.adam.m);
  EXPECT_EQ(ck.state.adam.v, st.adam.v);
  for (const auto& [name, v] : st.model.parameters()) {
    EXPECT_EQ(ck.state.model.param(name)->value.data, v->value.data) << name;
  }
  EXPECT_EQ(serialize_checkpoint(ck.config, ck.state), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "resdiff_config_test.rdck";
  const TrainState st = SmallState();
  save_checkpoint(path, SmallConfig(), st);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.state.loss_history, st.loss_history);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ModelMustMatchConfig) {
  EXPECT_THROW(serialize_checkpoint(ToolkitConfig{}, SmallState()), ParameterError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto good = serialize_checkpoint(SmallConfig(), SmallState());
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad), DecodeError);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(parse_checkpoint(bad), DecodeError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(parse_checkpoint(bad), DecodeError);
  bad = good;
  bad.resize(good.size() - 5);
  EXPECT_THROW(parse_checkpoint(bad), DecodeError);
  bad = std::vector<std::uint8_t>(good.begin(), good.begin() + 3);
  EXPECT_THROW(parse_checkpoint(bad), DecodeError);
}

}  // namespace
}  // namespace resdiff
