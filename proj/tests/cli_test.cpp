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
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "resdiff.hpp"

namespace resdiff {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string Slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("resdiff_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path P(const std::string& name) const { return dir_ / name; }

  RunResult Run(const std::string& args) const {
    const std::string cmd = std::string("\"") + RESDIFF_CLI + "\" " + args + " > \"" + P("stdout").string() +
                            "\" 2> \"" + P("stderr").string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = Slurp(P("stdout"));
    r.err = Slurp(P("stderr"));
    return r;
  }

  static std::string Corpus() { return std::string(RESDIFF_SOURCE_DIR) + "/data/corpus"; }
  static std::string Image(int i) { return Corpus() + "/" + corpus_file_name(i); }

  /// Untrained width-4 model; its output head is zero.
  std::string ZeroHeadCheckpoint() const {
    ToolkitConfig c;
    c.model.width = 4;
    const auto path = P("zero.rdck");
    save_checkpoint(path, c, TrainState{DenoiserModel(c.model), {}, {}});
    return path.string();
  }

  std::string WriteConfig(const std::string& name, const std::string& text) const {
    std::ofstream(P(name)) << text;
    return P(name).string();
  }

  fs::path dir_;
};

TEST_F(Cli, HelpAndUsage) {
  EXPECT_EQ(Run("--help").code, 0);
  EXPECT_EQ(Run("").code, 2);
  EXPECT_EQ(Run("frobnicate").code, 2);
  EXPECT_EQ(Run("encode --in x.ppm").code, 2);
  EXPECT_EQ(Run("encode --in x.ppm --out y --lambda-prime 2").code, 2);
}

TEST_F(Cli, MissingCorpusNamesPath) {
  const std::string missing = P("no_such_corpus").string();
  const auto r = Run("train --corpus \"" + missing + "\" --out \"" + P("m.rdck").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(Cli, BadConfigIsUsageError) {
  const auto cfg = WriteConfig("bad.cfg", "model.depth = 3\n");
  const auto r = Run("--config \"" + cfg + "\" encode --in \"" + Image(0) + "\" --out \"" + P("a.rdb").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.depth"), std::string::npos);
}

TEST_F(Cli, BundledCorpusMatchesGenerator) {
  const auto files = read_corpus(Corpus());
  const auto gen = make_corpus();
  ASSERT_EQ(files.size(), gen.size());
  for (std::size_t i = 0; i < gen.size(); ++i) EXPECT_EQ(files[i].storage(), quantize_to_8bit(gen[i]).storage()) << i;
}

TEST_F(Cli, EncodeDecodeRoundTrip) {
  const auto bs = P("a.rdb").string(), out = P("a.ppm").string();
  const auto e = Run("encode --in \"" + Image(0) + "\" --out \"" + bs + "\" --lambda-prime 0.5");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out, "bpp 0.3652\n");
  const Bitstream parsed = Bitstream::parse(read_file(bs));
  char want[32];
  std::snprintf(want, sizeof want, "bpp %.4f\n", parsed.payload.size() * 8.0 / (64 * 64));
  EXPECT_EQ(e.out, want);

  const auto d = Run("decode --in \"" + bs + "\" --out \"" + out + "\"");
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(d.out, e.out);
  const Array3 img = read_ppm(out);
  EXPECT_EQ(img.height(), 64);
  EXPECT_EQ(img.width(), 64);
  EXPECT_EQ(img.storage(), quantize_to_8bit(decode(parsed).image).storage());
}

TEST_F(Cli, CorruptBitstreamIsRuntimeError) {
  std::ofstream(P("junk.rdb"), std::ios::binary) << "RDBCjunk";
  const auto r = Run("decode --in \"" + P("junk.rdb").string() + "\" --out \"" + P("x.ppm").string() + "\"");
  EXPECT_EQ(r.code, 3);
}

TEST_F(Cli, ZeroHeadOneStepReproducesDecode) {
  const auto ck = ZeroHeadCheckpoint();
  const auto bs = P("a.rdb").string();
  ASSERT_EQ(Run("encode --in \"" + Image(3) + "\" --out \"" + bs + "\" --lambda-prime 0.2").code, 0);
  ASSERT_EQ(Run("decode --in \"" + bs + "\" --out \"" + P("dec.ppm").string() + "\"").code, 0);
  for (const std::string steps : {"1", "0", "5"}) {
    const auto r = Run("enhance --in \"" + bs + "\" --checkpoint \"" + ck + "\" --out \"" + P("enh.ppm").string() +
                       "\" --steps " + steps);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(Slurp(P("enh.ppm")), Slurp(P("dec.ppm"))) << "steps " << steps;
  }
}

TEST_F(Cli, ThresholdsNeedRateMappedBitstream) {
  const auto ck = ZeroHeadCheckpoint();
  const auto bs = P("s.rdb").string();
  ASSERT_EQ(Run("encode --in \"" + Image(1) + "\" --out \"" + bs + "\" --scale 1.5").code, 0);
  ThresholdTable({{0.001, 0.5}}, 0.95).save(P("t.txt"));
  const auto r = Run("enhance --in \"" + bs + "\" --checkpoint \"" + ck + "\" --out \"" + P("e.ppm").string() +
                     "\" --thresholds \"" + P("t.txt").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lambda"), std::string::npos) << r.err;
}

TEST_F(Cli, ScheduleMismatchIsRejected) {
  const auto ck = ZeroHeadCheckpoint();
  const auto bs = P("a.rdb").string();
  ASSERT_EQ(Run("encode --in \"" + Image(1) + "\" --out \"" + bs + "\"").code, 0);
  const auto cfg = WriteConfig("cos.cfg", "schedule.kind = cosine\n");
  const auto r = Run("--config \"" + cfg + "\" enhance --in \"" + bs + "\" --checkpoint \"" + ck + "\" --out \"" +
                     P("e.ppm").string() + "\"");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("schedule"), std::string::npos) << r.err;
}

TEST_F(Cli, EnhanceReportsPsnrAndTrajectory) {
  const auto ck = ZeroHeadCheckpoint();
  const auto bs = P("a.rdb").string();
  ASSERT_EQ(Run("encode --in \"" + Image(2) + "\" --out \"" + bs + "\"").code, 0);
  const auto r = Run("enhance --in \"" + bs + "\" --checkpoint \"" + ck + "\" --out \"" + P("e.ppm").string() +
                     "\" --steps 4 --start 10 --plan 20 --reference \"" + Image(2) + "\" --dump-trajectory \"" +
                     P("traj.csv").string() + "\" --dump-arrays \"" + P("traj.bin").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("psnr_base "), std::string::npos);
  EXPECT_NE(r.out.find("\npsnr "), std::string::npos);
  const std::string csv = Slurp(P("traj.csv"));
  EXPECT_EQ(csv.rfind("plan_index,t,mean_abs_r0,rms_r_t,psnr\n10,", 0), 0u) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(Slurp(P("traj.bin")).size(), 24u + 4u * (8u + 2u * 3u * 64u * 64u * 8u));
  EXPECT_EQ(Run("enhance --in \"" + bs + "\" --checkpoint \"" + ck + "\" --out \"" + P("e.ppm").string() +
                "\" --steps 4 --start 18 --plan 20").code, 2);
}

TEST_F(Cli, CurvatureCsvRows) {
  const auto ck = ZeroHeadCheckpoint();
  const auto bs = P("a.rdb").string();
  ASSERT_EQ(Run("encode --in \"" + Image(4) + "\" --out \"" + bs + "\"").code, 0);
  const auto r = Run("analyze curvature --in \"" + bs + "\" --checkpoint \"" + ck + "\" --out \"" +
                     P("curv.csv").string() + "\" --plan 12");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = Slurp(P("curv.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 11);
  EXPECT_NE(r.out.find("mean_angle_first80"), std::string::npos);
}

TEST_F(Cli, FitThresholdsRoundTrip) {
  const auto r = Run("fit-thresholds --corpus \"" + Corpus() + "\" --out \"" + P("t.txt").string() + "\" --grid 5");
  ASSERT_EQ(r.code, 0) << r.err;
  const ThresholdTable t = ThresholdTable::load(P("t.txt"));
  ASSERT_EQ(t.entries().size(), 5u);
  for (std::size_t i = 1; i < t.entries().size(); ++i) EXPECT_LE(t.entries()[i].tau, t.entries()[i - 1].tau);
  t.save(P("t2.txt"));
  EXPECT_EQ(Slurp(P("t.txt")), Slurp(P("t2.txt")));
}

TEST_F(Cli, HistogramAndTraversal) {
  const auto h = Run("analyze histogram --corpus \"" + Corpus() + "\" --out \"" + P("h.csv").string() + "\" --bins 11");
  ASSERT_EQ(h.code, 0) << h.err;
  const std::string hcsv = Slurp(P("h.csv"));
  EXPECT_EQ(hcsv.rfind("bin_lo,bin_hi,count_c0,count_c1,count_c2\n", 0), 0u);
  EXPECT_EQ(std::count(hcsv.begin(), hcsv.end(), '\n'), 12);

  const auto ck = ZeroHeadCheckpoint();
  const auto t = Run("analyze traversal --corpus \"" + Corpus() + "\" --checkpoint \"" + ck + "\" --out \"" +
                     P("tv.csv").string() + "\" --plan 3");
  ASSERT_EQ(t.code, 0) << t.err;
  const std::string tcsv = Slurp(P("tv.csv"));
  EXPECT_EQ(tcsv.rfind("step,t,psnr,proxy,mean_abs_r0\n", 0), 0u);
  EXPECT_EQ(std::count(tcsv.begin(), tcsv.end(), '\n'), 4);
}

TEST_F(Cli, CommandsAreDeterministic) {
  const auto cfg = WriteConfig("tiny.cfg", "model.width = 4\ntrain.crop = 8\ntrain.batch_size = 1\n");
  fs::create_directories(P("corpus"));
  for (int i = 0; i < 2; ++i) fs::copy_file(Image(i), P("corpus") / corpus_file_name(i));
  for (const char* name : {"m1.rdck", "m2.rdck"}) {
    const auto r = Run("--config \"" + cfg + "\" train --corpus \"" + P("corpus").string() + "\" --out \"" +
                       P(name).string() + "\" --steps 4 --loss-csv \"" + P(std::string(name) + ".csv").string() + "\"");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(Slurp(P("m1.rdck")), Slurp(P("m2.rdck")));
  EXPECT_EQ(Slurp(P("m1.rdck.csv")), Slurp(P("m2.rdck.csv")));

  ASSERT_EQ(Run("encode --in \"" + Image(5) + "\" --out \"" + P("b1").string() + "\"").code, 0);
  ASSERT_EQ(Run("encode --in \"" + Image(5) + "\" --out \"" + P("b2").string() + "\"").code, 0);
  EXPECT_EQ(Slurp(P("b1")), Slurp(P("b2")));
  for (const char* out : {"e1.ppm", "e2.ppm"}) {
    ASSERT_EQ(Run("--config \"" + cfg + "\" enhance --in \"" + P("b1").string() + "\" --checkpoint \"" +
                  P("m1.rdck").string() + "\" --out \"" + P(out).string() + "\" --steps 3 --seed 7")
                  .code,
              0);
  }
  EXPECT_EQ(Slurp(P("e1.ppm")), Slurp(P("e2.ppm")));
}

}  // namespace
}  // namespace resdiff
