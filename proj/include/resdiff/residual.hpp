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

// Residual extraction, per-rate residual statistics and rate-dependent
// clipping thresholds.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "resdiff/codec.hpp"
#include "resdiff/common.hpp"

namespace resdiff {

inline constexpr double kDefaultCoverage = 0.95;
inline constexpr double kMinThreshold = 1e-3;
inline constexpr std::size_t kMinResidualSamples = 10000;

/// r0 = x - x_tilde.
inline Array3 compute_residual(const Array3& x, const Array3& x_tilde) {
  require_same_shape(x, x_tilde, "compute_residual");
  return axpby(1.0, x, -1.0, x_tilde);
}

struct ThresholdEntry {
  double lambda;
  double tau;
  bool operator==(const ThresholdEntry&) const = default;
};

/// Symmetric per-rate clipping bounds [-tau, tau], sorted by ascending lambda.
class ThresholdTable {
 public:
  ThresholdTable() = default;
  ThresholdTable(std::vector<ThresholdEntry> entries, double coverage)
      : entries_(std::move(entries)), coverage_(coverage) {
    if (entries_.empty()) throw ParameterError("ThresholdTable: no entries");
    if (!(coverage_ > 0.0 && coverage_ < 1.0)) throw ParameterError("ThresholdTable: coverage outside (0, 1)");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (!(e.lambda > 0.0)) throw ParameterError("ThresholdTable: lambda must be positive");
      if (!(e.tau > 0.0 && e.tau <= 1.0)) throw ParameterError("ThresholdTable: tau outside (0, 1]");
      if (i > 0 && !(e.lambda > entries_[i - 1].lambda)) {
        throw ParameterError("ThresholdTable: lambdas must be strictly increasing");
      }
      if (i > 0 && e.tau > entries_[i - 1].tau) {
        throw ParameterError("ThresholdTable: tau must be non-increasing in lambda");
      }
    }
  }

  const std::vector<ThresholdEntry>& entries() const noexcept { return entries_; }
  double coverage() const noexcept { return coverage_; }
  bool operator==(const ThresholdTable&) const = default;

  /// Threshold of the entry nearest to `lambda` in log space. Ties go to the
  /// smaller lambda.
  double lookup(double lambda) const {
    if (entries_.empty()) throw ParameterError("ThresholdTable: empty");
    if (!(lambda > 0.0)) throw ParameterError("ThresholdTable: lambda must be positive");
    const double l = std::log(lambda);
    std::size_t best = 0;
    double best_d = std::abs(std::log(entries_[0].lambda) - l);
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      const double d = std::abs(std::log(entries_[i].lambda) - l);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return entries_[best].tau;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "# resdiff threshold table v1\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "# coverage %.17g\n", coverage_);
    os << buf;
    for (const auto& e : entries_) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g\n", e.lambda, e.tau);
      os << buf;
    }
    return os.str();
  }

  static ThresholdTable from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::optional<double> coverage;
    std::vector<ThresholdEntry> entries;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (line[0] == '#') {
        std::istringstream ls(line.substr(1));
        std::string key;
        double v = 0.0;
        if ((ls >> key) && key == "coverage" && (ls >> v)) coverage = v;
        continue;
      }
      std::istringstream ls(line);
      ThresholdEntry e{};
      std::string extra;
      if (!(ls >> e.lambda >> e.tau) || (ls >> extra)) {
        throw ParameterError("threshold table: malformed line " + std::to_string(lineno));
      }
      entries.push_back(e);
    }
    if (!coverage) throw ParameterError("threshold table: missing coverage header");
    return ThresholdTable(std::move(entries), *coverage);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << to_text();
  }
  static ThresholdTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

 private:
  std::vector<ThresholdEntry> entries_;
  double coverage_ = kDefaultCoverage;
};

/// Residual samples at one rate.
struct RateResiduals {
  double lambda;
  std::vector<double> values;
};

/// Residual values of every image in `corpus`, pooled over channels and
/// pixels, when coded at rate `lambda`.
inline RateResiduals collect_residuals(const std::vector<Array3>& corpus, double lambda,
                                       const CodecConstants& constants = {}) {
  RateResiduals rr{lambda, {}};
  for (const auto& x : corpus) {
    const Array3 r = compute_residual(x, base_reconstruction(x, lambda, constants));
    rr.values.insert(rr.values.end(), r.storage().begin(), r.storage().end());
  }
  return rr;
}

/// Smallest tau with fraction(|r| <= tau) >= coverage.
inline double coverage_threshold(std::vector<double> values, double coverage) {
  if (values.empty()) throw ParameterError("coverage_threshold: no samples");
  for (double& v : values) v = std::abs(v);
  const auto n = values.size();
  auto k = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end());
  return values[k - 1];
}

/// Fraction of samples with |r| <= tau.
inline double coverage_fraction(const std::vector<double>& values, double tau) {
  if (values.empty()) return 0.0;
  std::size_t in = 0;
  for (double v : values) in += std::abs(v) <= tau ? 1 : 0;
  return static_cast<double>(in) / static_cast<double>(values.size());
}

struct ThresholdFit {
  ThresholdTable table;
  /// Raw per-rate quantiles before the monotone correction.
  std::vector<double> raw_tau;
  /// True when the raw quantiles were not already non-increasing in lambda.
  bool corrected = false;
};

/// Non-increasing least-squares fit (pool adjacent violators).
inline std::vector<double> isotonic_non_increasing(const std::vector<double>& y) {
  struct Block {
    double sum;
    std::size_t n;
  };
  std::vector<Block> blocks;
  for (double v : y) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1) {
      const auto& b = blocks[blocks.size() - 1];
      const auto& a = blocks[blocks.size() - 2];
      if (a.sum / a.n >= b.sum / b.n) break;
      Block merged{a.sum + b.sum, a.n + b.n};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  for (const auto& b : blocks) out.insert(out.end(), b.n, b.sum / b.n);
  return out;
}

inline ThresholdFit fit_threshold_table(std::vector<RateResiduals> per_rate,
                                        double coverage = kDefaultCoverage) {
  if (per_rate.empty()) throw ParameterError("fit_threshold_table: empty rate grid");
  if (!(coverage > 0.0 && coverage < 1.0)) throw ParameterError("fit_threshold_table: coverage outside (0, 1)");
  std::sort(per_rate.begin(), per_rate.end(),
            [](const RateResiduals& a, const RateResiduals& b) { return a.lambda < b.lambda; });
  ThresholdFit fit;
  for (const auto& rr : per_rate) {
    if (rr.values.size() < kMinResidualSamples) {
      throw ParameterError("fit_threshold_table: only " + std::to_string(rr.values.size()) +
                           " residual samples at lambda " + std::to_string(rr.lambda) + " (need " +
                           std::to_string(kMinResidualSamples) + ")");
    }
    fit.raw_tau.push_back(coverage_threshold(rr.values, coverage));
  }
  std::vector<double> tau = fit.raw_tau;
  fit.corrected = !std::is_sorted(tau.rbegin(), tau.rend());
  if (fit.corrected) tau = isotonic_non_increasing(tau);
  std::vector<ThresholdEntry> entries;
  for (std::size_t i = 0; i < per_rate.size(); ++i) {
    entries.push_back({per_rate[i].lambda, std::clamp(tau[i], kMinThreshold, 1.0)});
  }
  fit.table = ThresholdTable(std::move(entries), coverage);
  return fit;
}

inline ThresholdFit fit_threshold_table(const std::vector<Array3>& corpus, const std::vector<double>& lambda_grid,
                                        double coverage = kDefaultCoverage, const CodecConstants& constants = {}) {
  std::vector<RateResiduals> per_rate;
  for (double l : lambda_grid) per_rate.push_back(collect_residuals(corpus, l, constants));
  return fit_threshold_table(std::move(per_rate), coverage);
}

/// n rates evenly spaced in log space over [lambda_min, lambda_max].
inline std::vector<double> lambda_grid(int n, const CodecConstants& c = {}) {
  std::vector<double> g;
  for (int i = 0; i < n; ++i) {
    g.push_back(sample_lambda(n == 1 ? 0.0 : static_cast<double>(i) / (n - 1), c.lambda_min, c.lambda_max));
  }
  return g;
}

/// Clamps into [-tau, tau]; values already inside are returned untouched.
inline Array3 clip_symmetric(const Array3& r, double tau) { return clamp(r, -tau, tau); }

/// Clips a residual prediction to the rate's table range, or to [-1, 1] when
/// no table is given.
inline Array3 clip_prediction(const Array3& r0_pred, double lambda, const ThresholdTable* table) {
  return clip_symmetric(r0_pred, table ? table->lookup(lambda) : 1.0);
}

/// Per-channel histogram over [-1, 1] with summary moments.
struct ResidualHistogram {
  int bins = 0;
  std::vector<double> edges;
  std::vector<std::vector<std::size_t>> counts;
  std::vector<double> mean, stddev, excess_kurtosis;
  std::size_t samples_per_channel = 0;
};

inline ResidualHistogram residual_histogram(const std::vector<Array3>& residuals, int bins = 101) {
  if (residuals.empty()) throw ParameterError("residual_histogram: no residuals");
  if (bins < 1) throw ParameterError("residual_histogram: need at least one bin");
  const int C = residuals.front().channels();
  ResidualHistogram h;
  h.bins = bins;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(-1.0 + 2.0 * i / bins);
  h.counts.assign(static_cast<std::size_t>(C), std::vector<std::size_t>(static_cast<std::size_t>(bins), 0));
  std::vector<double> s1(C, 0.0), s2(C, 0.0), s4(C, 0.0);
  std::vector<std::size_t> n(C, 0);
  for (const auto& r : residuals) {
    if (r.channels() != C) throw ParameterError("residual_histogram: channel count differs");
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) {
          const double v = r(c, y, x);
          const int b = std::clamp(static_cast<int>(std::floor((v + 1.0) / 2.0 * bins)), 0, bins - 1);
          ++h.counts[c][b];
          s1[c] += v;
          ++n[c];
        }
  }
  for (int c = 0; c < C; ++c) h.mean.push_back(s1[c] / static_cast<double>(n[c]));
  for (const auto& r : residuals)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) {
          const double d = r(c, y, x) - h.mean[c];
          s2[c] += d * d;
          s4[c] += d * d * d * d;
        }
  for (int c = 0; c < C; ++c) {
    const double var = s2[c] / static_cast<double>(n[c]);
    h.stddev.push_back(std::sqrt(var));
    h.excess_kurtosis.push_back(var > 0.0 ? (s4[c] / static_cast<double>(n[c])) / (var * var) - 3.0 : 0.0);
  }
  h.samples_per_channel = n.front();
  return h;
}

}  // namespace resdiff
