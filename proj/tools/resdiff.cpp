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

// Command-line front end. Exit codes: 0 success, 2 usage or configuration
// error, 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "resdiff.hpp"

namespace fs = std::filesystem;
using namespace resdiff;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<Array3> load_corpus_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("corpus directory '" + dir + "' does not exist");
  try {
    return read_corpus(dir);
  } catch (const DecodeError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Globals {
  std::string config_path;
  ToolkitConfig config;
};

ToolkitConfig load_globals(const Globals& g) {
  if (g.config_path.empty()) return ToolkitConfig{};
  require_file(g.config_path, "config file");
  return load_config(g.config_path);
}

/// Checkpoint plus the checks shared by every command that samples.
Checkpoint load_model(const std::string& path, const Globals& g) {
  require_file(path, "checkpoint");
  Checkpoint ck = load_checkpoint(path);
  if (!g.config_path.empty() && !(g.config.schedule == ck.config.schedule)) {
    throw ConfigError("schedule in config does not match the checkpoint's schedule");
  }
  return ck;
}

/// Resolves --steps/--start into plan positions over the plan of `plan_steps`.
/// "late" runs the last `steps` positions, "full" the first `steps`, and an
/// integer k runs positions [k, k + steps).
void apply_steps(SamplerConfig& sc, int plan_steps, int T, std::optional<int> steps, const std::string& start) {
  sc.plan = respace(T, plan_steps);
  const std::size_t n = sc.plan.size();
  if (!steps) {
    sc.start_index = std::min(sc.start_index, n);
    sc.stop_index = std::min(sc.stop_index, n);
    return;
  }
  if (*steps < 0 || static_cast<std::size_t>(*steps) > n) {
    throw ConfigError("--steps must lie in [0, " + std::to_string(n) + "]");
  }
  const auto k = static_cast<std::size_t>(*steps);
  if (start == "late") {
    sc.start_index = n - k;
    sc.stop_index = n;
  } else if (start == "full") {
    sc.start_index = 0;
    sc.stop_index = k;
  } else {
    int idx = 0;
    try {
      std::size_t pos = 0;
      idx = std::stoi(start, &pos);
      if (pos != start.size()) throw std::invalid_argument(start);
    } catch (const std::exception&) {
      throw ConfigError("--start must be 'late', 'full' or a plan index");
    }
    if (idx < 0 || static_cast<std::size_t>(idx) + k > n) throw ConfigError("--start index out of range");
    sc.start_index = static_cast<std::size_t>(idx);
    sc.stop_index = sc.start_index + k;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resdiff: block-DCT image codec with diffusion-based residual enhancement"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Toolkit config file (key = value)");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Write the procedural image corpus as PPM files");
  std::string gen_out = "data/corpus";
  std::uint64_t gen_seed = kCorpusSeed;
  int gen_count = kCorpusSize, gen_side = kCorpusSide;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--count", gen_count, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--side", gen_side, "Image side in pixels")->check(CLI::PositiveNumber);

  // train
  auto* tr = app.add_subcommand("train", "Train the residual denoiser");
  std::string tr_corpus, tr_out, tr_loss_csv, tr_resume;
  std::optional<int> tr_steps;
  std::optional<std::uint64_t> tr_seed;
  int tr_holdout = kEvalImages;
  tr->add_option("--corpus", tr_corpus, "Corpus directory (default paths.corpus)");
  tr->add_option("--out", tr_out, "Output checkpoint (default paths.checkpoint)");
  tr->add_option("--loss-csv", tr_loss_csv, "Write the loss trace as CSV");
  tr->add_option("--steps", tr_steps, "Override train.steps")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", tr_seed, "Override train.seed");
  tr->add_option("--holdout", tr_holdout, "Images held out at the end of the corpus")->check(CLI::NonNegativeNumber);
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint");

  // encode
  auto* enc = app.add_subcommand("encode", "Encode a PPM image");
  std::string enc_in, enc_out;
  double enc_lp = 0.5;
  std::optional<double> enc_scale;
  enc->add_option("--in", enc_in, "Input PPM")->required();
  enc->add_option("--out", enc_out, "Output bitstream")->required();
  enc->add_option("--lambda-prime", enc_lp, "Normalized rate in [0, 1]")->check(CLI::Range(0.0, 1.0));
  enc->add_option("--scale", enc_scale, "Explicit quantization scale (no rate map)")->check(CLI::PositiveNumber);

  // decode
  auto* dec = app.add_subcommand("decode", "Decode a bitstream to PPM");
  std::string dec_in, dec_out;
  dec->add_option("--in", dec_in, "Input bitstream")->required();
  dec->add_option("--out", dec_out, "Output PPM")->required();

  // enhance
  auto* en = app.add_subcommand("enhance", "Decode and enhance a bitstream");
  std::string en_in, en_ck, en_out, en_thr, en_traj, en_arrays, en_ref, en_start = "late";
  std::optional<int> en_steps, en_plan;
  std::optional<std::uint64_t> en_seed;
  bool en_no_clip = false;
  en->add_option("--in", en_in, "Input bitstream")->required();
  en->add_option("--checkpoint", en_ck, "Model checkpoint")->required();
  en->add_option("--out", en_out, "Output PPM")->required();
  en->add_option("--steps", en_steps, "Number of sampling steps to execute");
  en->add_option("--start", en_start, "late | full | plan index");
  en->add_option("--plan", en_plan, "Respaced plan length (default sampler.steps)")->check(CLI::PositiveNumber);
  en->add_option("--thresholds", en_thr, "Threshold table; enables rate-dependent clipping");
  en->add_flag("--no-clip", en_no_clip, "Disable clipping of residual predictions");
  en->add_option("--dump-trajectory", en_traj, "Write per-step CSV");
  en->add_option("--dump-arrays", en_arrays, "Write per-step r_t and r0' arrays (binary)");
  en->add_option("--reference", en_ref, "Ground-truth PPM; prints PSNR");
  en->add_option("--seed", en_seed, "Override sampler.seed");

  // fit-thresholds
  auto* ft = app.add_subcommand("fit-thresholds", "Fit per-rate residual clipping thresholds");
  std::string ft_corpus, ft_out;
  int ft_grid = 10, ft_holdout = kEvalImages;
  double ft_cov = kDefaultCoverage;
  ft->add_option("--corpus", ft_corpus, "Corpus directory (default paths.corpus)");
  ft->add_option("--out", ft_out, "Output table (default paths.thresholds)");
  ft->add_option("--grid", ft_grid, "Number of rates")->check(CLI::PositiveNumber);
  ft->add_option("--coverage", ft_cov, "Target coverage")->check(CLI::Range(0.0, 1.0));
  ft->add_option("--holdout", ft_holdout, "Images held out at the end of the corpus")->check(CLI::NonNegativeNumber);

  // analyze
  auto* an = app.add_subcommand("analyze", "Reports: curvature, traversal, histogram");
  an->require_subcommand(1);
  auto* cu = an->add_subcommand("curvature", "Update-vector angles along a full trajectory");
  std::string cu_in, cu_ck, cu_out;
  std::optional<int> cu_plan;
  cu->add_option("--in", cu_in, "Input bitstream")->required();
  cu->add_option("--checkpoint", cu_ck, "Model checkpoint")->required();
  cu->add_option("--out", cu_out, "Output CSV")->required();
  cu->add_option("--plan", cu_plan, "Respaced plan length (default sampler.steps)")->check(CLI::PositiveNumber);
  auto* tv = an->add_subcommand("traversal", "Per-step PSNR and patch proxy over the eval split");
  std::string tv_corpus, tv_ck, tv_out, tv_thr;
  std::optional<int> tv_plan;
  int tv_holdout = kEvalImages, tv_jobs = 1;
  tv->add_option("--corpus", tv_corpus, "Corpus directory (default paths.corpus)");
  tv->add_option("--checkpoint", tv_ck, "Model checkpoint")->required();
  tv->add_option("--out", tv_out, "Output CSV")->required();
  tv->add_option("--thresholds", tv_thr, "Threshold table; adds thresholded columns");
  tv->add_option("--plan", tv_plan, "Respaced plan length (default sampler.steps)")->check(CLI::PositiveNumber);
  tv->add_option("--holdout", tv_holdout, "Eval images at the end of the corpus")->check(CLI::PositiveNumber);
  tv->add_option("--jobs", tv_jobs, "Threads for per-image sampling")->check(CLI::PositiveNumber);
  auto* hi = an->add_subcommand("histogram", "Residual histogram at one rate");
  std::string hi_corpus, hi_out;
  double hi_lp = 0.5;
  int hi_bins = 101;
  hi->add_option("--corpus", hi_corpus, "Corpus directory (default paths.corpus)");
  hi->add_option("--out", hi_out, "Output CSV")->required();
  hi->add_option("--lambda-prime", hi_lp, "Normalized rate in [0, 1]")->check(CLI::Range(0.0, 1.0));
  hi->add_option("--bins", hi_bins, "Bins over [-1, 1]")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    g.config = load_globals(g);
    const ToolkitConfig& cfg = g.config;

    if (*gen) {
      write_corpus(gen_out, make_corpus(gen_seed, gen_count, gen_side));
      std::printf("wrote %d images to %s\n", gen_count, gen_out.c_str());
    } else if (*tr) {
      const std::string corpus_dir = tr_corpus.empty() ? cfg.paths.corpus : tr_corpus;
      const std::string out = tr_out.empty() ? cfg.paths.checkpoint : tr_out;
      const auto corpus = split_corpus(load_corpus_dir(corpus_dir), tr_holdout).train;
      ToolkitConfig run = cfg;
      if (tr_steps) run.train.steps = *tr_steps;
      if (tr_seed) run.train.seed = *tr_seed;
      validate(run);
      const NoiseSchedule s = make_schedule(run.schedule);
      TrainState state{DenoiserModel(run.model), {}, {}};
      if (!tr_resume.empty()) {
        Checkpoint ck = load_model(tr_resume, g);
        if (!(ck.config.model == run.model) || !(ck.config.schedule == run.schedule)) {
          throw ConfigError("resume checkpoint has a different model or schedule");
        }
        state = std::move(ck.state);
      }
      std::fprintf(stderr, "training %zu parameters on %zu images for %d steps\n", state.model.parameter_count(),
                   corpus.size(), run.train.steps);
      train(state, corpus, s, run.train, run.codec, [&](int step, double loss) {
        if (step % 100 == 0) std::fprintf(stderr, "step %d loss %.6g\n", step, loss);
      });
      save_checkpoint(out, run, state);
      if (!tr_loss_csv.empty()) {
        std::ostringstream os;
        os << "step,loss\n";
        for (std::size_t i = 0; i < state.loss_history.size(); ++i) {
          os << (i + 1) << "," << fmt("%.17g", state.loss_history[i]) << "\n";
        }
        write_text(tr_loss_csv, os.str());
      }
      const auto [first, last] = loss_endpoints(state.loss_history, 100);
      std::printf("loss %.6g -> %.6g\n", first, last);
    } else if (*enc) {
      require_file(enc_in, "input image");
      const Array3 img = read_ppm(enc_in);
      const Bitstream bs =
          enc_scale ? encode_with_scale(img, *enc_scale) : encode(img, RateControl::from_prime(enc_lp, cfg.codec));
      write_file(enc_out, bs.serialize());
      std::printf("bpp %.4f\n", bs.bits_per_pixel());
    } else if (*dec) {
      require_file(dec_in, "bitstream");
      const Bitstream bs = Bitstream::parse(read_file(dec_in));
      write_ppm(dec_out, decode(bs, cfg.codec).image);
      std::printf("bpp %.4f\n", bs.bits_per_pixel());
    } else if (*en) {
      require_file(en_in, "bitstream");
      const Checkpoint ck = load_model(en_ck, g);
      const NoiseSchedule s = make_schedule(ck.config.schedule);
      const Decoded d = decode(read_file(en_in), cfg.codec);
      SamplerConfig sc = cfg.sampler_config();
      if (en_seed) sc.seed = *en_seed;
      apply_steps(sc, en_plan.value_or(cfg.sampler.steps), s.T(), en_steps, en_start);
      if (!en_thr.empty() && en_no_clip) throw ConfigError("--thresholds and --no-clip are exclusive");
      if (en_no_clip) {
        sc.thresholding = Thresholding::kNone;
      } else if (!en_thr.empty() || sc.thresholding == Thresholding::kTable) {
        if (!d.lambda) throw ConfigError("table thresholding needs a rate-mapped bitstream (no lambda in header)");
        const std::string table_path = en_thr.empty() ? cfg.paths.thresholds : en_thr;
        require_file(table_path, "threshold table");
        sc.table = ThresholdTable::load(table_path);
        sc.thresholding = Thresholding::kTable;
      }
      sc.record_trajectory = !en_traj.empty() || !en_arrays.empty();
      const EnhanceResult res = enhance(ck.state.model, s, d.image, sc, d.lambda);
      write_ppm(en_out, res.x_hat);
      std::optional<Array3> ref;
      if (!en_ref.empty()) {
        require_file(en_ref, "reference image");
        ref = read_ppm(en_ref);
        std::printf("psnr_base %.4f\n", psnr(*ref, d.image));
        std::printf("psnr %.4f\n", psnr(*ref, quantize_to_8bit(res.x_hat)));
      }
      if (res.trajectory) {
        std::ostringstream os;
        os << "plan_index,t,mean_abs_r0,rms_r_t" << (ref ? ",psnr" : "") << "\n";
        for (const auto& r : res.trajectory->records) {
          double a = 0.0, q = 0.0;
          for (double v : r.r0_pred.values()) a += std::abs(v);
          for (double v : r.r_t.values()) q += v * v;
          os << r.plan_index << "," << r.t << "," << fmt("%.9g", a / r.r0_pred.size()) << ","
             << fmt("%.9g", std::sqrt(q / r.r_t.size()));
          if (ref) os << "," << fmt("%.6f", psnr(*ref, intermediate_output(d.image, r)));
          os << "\n";
        }
        if (!en_traj.empty()) write_text(en_traj, os.str());
        if (!en_arrays.empty()) write_file(en_arrays, serialize_trajectory(*res.trajectory));
      }
    } else if (*ft) {
      const std::string corpus_dir = ft_corpus.empty() ? cfg.paths.corpus : ft_corpus;
      const std::string out = ft_out.empty() ? cfg.paths.thresholds : ft_out;
      const auto corpus = split_corpus(load_corpus_dir(corpus_dir), ft_holdout).train;
      const ThresholdFit fit = fit_threshold_table(corpus, lambda_grid(ft_grid, cfg.codec), ft_cov, cfg.codec);
      fit.table.save(out);
      for (std::size_t i = 0; i < fit.table.entries().size(); ++i) {
        std::printf("lambda %.6g tau %.6g raw %.6g\n", fit.table.entries()[i].lambda, fit.table.entries()[i].tau,
                    fit.raw_tau[i]);
      }
      if (fit.corrected) std::printf("monotone correction applied\n");
    } else if (*cu) {
      require_file(cu_in, "bitstream");
      const Checkpoint ck = load_model(cu_ck, g);
      const NoiseSchedule s = make_schedule(ck.config.schedule);
      const Decoded d = decode(read_file(cu_in), cfg.codec);
      SamplerConfig sc = cfg.sampler_config();
      const int n = cu_plan.value_or(cfg.sampler.steps);
      apply_steps(sc, n, s.T(), static_cast<int>(respace(s.T(), n).size()), "full");
      sc.record_trajectory = true;
      if (sc.thresholding == Thresholding::kTable) sc.thresholding = Thresholding::kFixed;
      const EnhanceResult res = enhance(ck.state.model, s, d.image, sc, d.lambda);
      const CurvatureResult c = curvature(*res.trajectory);
      write_text(cu_out, curvature_csv(c, *res.trajectory));
      const std::size_t split = c.angles.size() * 8 / 10;
      double early = 0.0, late = 0.0;
      for (std::size_t i = 0; i < c.angles.size(); ++i) (i < split ? early : late) += c.angles[i];
      if (split > 0) std::printf("mean_angle_first80 %.6f\n", early / split);
      if (split < c.angles.size()) std::printf("mean_angle_last20 %.6f\n", late / (c.angles.size() - split));
    } else if (*tv) {
      const std::string corpus_dir = tv_corpus.empty() ? cfg.paths.corpus : tv_corpus;
      const auto eval = split_corpus(load_corpus_dir(corpus_dir), tv_holdout).eval;
      if (eval.empty()) throw UsageError("corpus '" + corpus_dir + "' is too small for an eval split");
      const Checkpoint ck = load_model(tv_ck, g);
      const NoiseSchedule s = make_schedule(ck.config.schedule);
      SamplerConfig sc = cfg.sampler_config();
      const int n = tv_plan.value_or(cfg.sampler.steps);
      apply_steps(sc, n, s.T(), static_cast<int>(respace(s.T(), n).size()), "full");
      if (sc.thresholding == Thresholding::kTable) sc.thresholding = Thresholding::kFixed;
      std::optional<ThresholdTable> table;
      if (!tv_thr.empty()) {
        require_file(tv_thr, "threshold table");
        table = ThresholdTable::load(tv_thr);
      }
      const TraversalReport rep =
          traversal_report(ck.state.model, s, make_eval_items(eval, cfg.codec), sc, table, tv_jobs);
      write_text(tv_out, rep.to_csv());
      std::printf("base psnr %.4f proxy %.6g\n", rep.base_psnr, rep.base_proxy);
      std::printf("step 1 psnr %.4f proxy %.6g\n", rep.records.front().psnr, rep.records.front().proxy);
      std::printf("step %zu psnr %.4f proxy %.6g\n", rep.records.size(), rep.records.back().psnr,
                  rep.records.back().proxy);
    } else if (*hi) {
      const std::string corpus_dir = hi_corpus.empty() ? cfg.paths.corpus : hi_corpus;
      const auto corpus = load_corpus_dir(corpus_dir);
      const double lambda = sample_lambda(hi_lp, cfg.codec.lambda_min, cfg.codec.lambda_max);
      std::vector<Array3> residuals;
      for (const auto& x : corpus) residuals.push_back(compute_residual(x, base_reconstruction(x, lambda, cfg.codec)));
      const ResidualHistogram h = residual_histogram(residuals, hi_bins);
      std::ostringstream os;
      os << "bin_lo,bin_hi";
      for (std::size_t c = 0; c < h.counts.size(); ++c) os << ",count_c" << c;
      os << "\n";
      for (int b = 0; b < h.bins; ++b) {
        os << fmt("%.6f", h.edges[b]) << "," << fmt("%.6f", h.edges[b + 1]);
        for (const auto& cc : h.counts) os << "," << cc[b];
        os << "\n";
      }
      write_text(hi_out, os.str());
      for (std::size_t c = 0; c < h.mean.size(); ++c) {
        std::printf("channel %zu mean %.6g std %.6g excess_kurtosis %.6g\n", c, h.mean[c], h.stddev[c],
                    h.excess_kurtosis[c]);
      }
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
