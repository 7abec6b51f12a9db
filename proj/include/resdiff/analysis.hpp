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

// Image metrics and sampling diagnostics: PSNR, trajectory curvature, a
// patch-statistics Frechet distance and the distortion-perception traversal.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "resdiff/common.hpp"
#include "resdiff/sampler.hpp"

namespace resdiff {

/// Reported for identical inputs.
inline constexpr double kPsnrCap = 100.0;
/// Peak-to-peak range of [-1, 1] data.
inline constexpr double kPsnrPeak = 2.0;

inline double mse(const Array3& a, const Array3& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

/// 10 log10(MAX^2 / MSE) with MAX = 2, capped at 100 dB.
inline double psnr(const Array3& a, const Array3& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(kPsnrPeak * kPsnrPeak / m));
}

struct CurvatureResult {
  /// angles[i] is the angle between update vectors i and i + 1, in radians.
  std::vector<double> angles;
  /// Set where one of the two vectors had zero norm; the angle is then 0.
  std::vector<bool> degenerate;
};

/// Angles between consecutive update vectors.
inline CurvatureResult curvature(const std::vector<Array3>& updates) {
  if (updates.size() < 2) throw ParameterError("curvature: need at least two update vectors");
  CurvatureResult r;
  for (std::size_t i = 0; i + 1 < updates.size(); ++i) {
    const Array3& a = updates[i];
    const Array3& b = updates[i + 1];
    require_same_shape(a, b, "curvature");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      dot += a[k] * b[k];
      na += a[k] * a[k];
      nb += b[k] * b[k];
    }
    if (na == 0.0 || nb == 0.0) {
      r.angles.push_back(0.0);
      r.degenerate.push_back(true);
      continue;
    }
    const double c = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    r.angles.push_back(std::acos(c));
    r.degenerate.push_back(false);
  }
  return r;
}

inline CurvatureResult curvature(const Trajectory& traj) { return curvature(traj.update_vectors()); }

inline constexpr int kPatchSize = 32;
inline constexpr int kPatchFeatures = 4;

/// Half-overlapping square crops (stride = side / 2) covering the image.
inline std::vector<Array3> half_overlapping_crops(const Array3& img, int side = kPatchSize) {
  std::vector<Array3> out;
  const int stride = side / 2;
  for (int y = 0; y + side <= img.height(); y += stride)
    for (int x = 0; x + side <= img.width(); x += stride) {
      Array3 c(img.channels(), side, side);
      for (int ch = 0; ch < img.channels(); ++ch)
        for (int yy = 0; yy < side; ++yy)
          for (int xx = 0; xx < side; ++xx) c(ch, yy, xx) = img(ch, y + yy, x + xx);
      out.push_back(std::move(c));
    }
  return out;
}

/// Per channel: mean, variance, mean squared forward gradient and mean squared
/// 4-neighbour Laplacian.
inline std::vector<double> patch_features(const Array3& p) {
  std::vector<double> f;
  const int H = p.height(), W = p.width();
  for (int c = 0; c < p.channels(); ++c) {
    double m = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) m += p(c, y, x);
    m /= H * W;
    double var = 0.0, grad = 0.0, lap = 0.0;
    int ng = 0, nl = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double v = p(c, y, x);
        var += (v - m) * (v - m);
        if (x + 1 < W) {
          grad += (p(c, y, x + 1) - v) * (p(c, y, x + 1) - v);
          ++ng;
        }
        if (y + 1 < H) {
          grad += (p(c, y + 1, x) - v) * (p(c, y + 1, x) - v);
          ++ng;
        }
        if (x > 0 && y > 0 && x + 1 < W && y + 1 < H) {
          const double l = p(c, y - 1, x) + p(c, y + 1, x) + p(c, y, x - 1) + p(c, y, x + 1) - 4.0 * v;
          lap += l * l;
          ++nl;
        }
      }
    f.push_back(m);
    f.push_back(var / (H * W));
    f.push_back(ng ? grad / ng : 0.0);
    f.push_back(nl ? lap / nl : 0.0);
  }
  return f;
}

struct FrechetResult {
  double distance = 0.0;
  /// A covariance was singular and 1e-6 I was added to both.
  bool regularized = false;
};

inline constexpr std::size_t kMinFrechetSamples = 30;

/// Frechet distance between Gaussians fitted to two feature sets.
inline FrechetResult frechet_distance(const std::vector<std::vector<double>>& a,
                                      const std::vector<std::vector<double>>& b) {
  if (a.size() < kMinFrechetSamples || b.size() < kMinFrechetSamples) {
    throw ParameterError("frechet_distance: need at least 30 samples per set");
  }
  const auto d = static_cast<Eigen::Index>(a.front().size());
  auto fit = [d](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = Eigen::VectorXd::Zero(d);
    for (const auto& v : s) {
      if (static_cast<Eigen::Index>(v.size()) != d) throw ParameterError("frechet_distance: feature size mismatch");
      mu += Eigen::Map<const Eigen::VectorXd>(v.data(), d);
    }
    mu /= static_cast<double>(s.size());
    cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& v : s) {
      const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.data(), d) - mu;
      cov += x * x.transpose();
    }
    cov /= static_cast<double>(s.size() - 1);
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd ca, cb;
  fit(a, mu_a, ca);
  fit(b, mu_b, cb);
  FrechetResult r;
  auto min_eig = [](const Eigen::MatrixXd& m) {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  };
  if (min_eig(ca) <= 1e-12 || min_eig(cb) <= 1e-12) {
    r.regularized = true;
    ca += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    cb += 1e-6 * Eigen::MatrixXd::Identity(d, d);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
  const Eigen::MatrixXd sqrt_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  const Eigen::MatrixXd m = sqrt_a * cb * sqrt_a;
  const Eigen::VectorXd ev =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
  const double tr_sqrt = ev.cwiseMax(0.0).cwiseSqrt().sum();
  r.distance = std::max(0.0, (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt);
  return r;
}

inline std::vector<std::vector<double>> crop_features(const std::vector<Array3>& images, int side = kPatchSize) {
  std::vector<std::vector<double>> f;
  for (const auto& img : images)
    for (const auto& c : half_overlapping_crops(img, side)) f.push_back(patch_features(c));
  return f;
}

/// Patch-statistics Frechet distance between two image sets.
inline FrechetResult patch_frechet(const std::vector<Array3>& set_a, const std::vector<Array3>& set_b,
                                   int side = kPatchSize) {
  return frechet_distance(crop_features(set_a, side), crop_features(set_b, side));
}

/// One image to enhance: original, base reconstruction and its rate.
struct EvalItem {
  Array3 x;
  Array3 x_tilde;
  double lambda = 0.0;
};

/// Codes image i of n at lambda' = (i + 0.5) / n and decodes it; lambda is the
/// receiver-side value recovered from the header.
inline std::vector<EvalItem> make_eval_items(const std::vector<Array3>& images, const CodecConstants& c = {}) {
  std::vector<EvalItem> items;
  const double n = static_cast<double>(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Decoded d = decode(encode(images[i], RateControl::from_prime((static_cast<double>(i) + 0.5) / n, c)), c);
    items.push_back({images[i], d.image, *d.lambda});
  }
  return items;
}

struct TraversalRecord {
  std::size_t step = 0;
  int t = 0;
  double psnr = 0.0;
  double proxy = 0.0;
  double mean_abs_r0 = 0.0;
};

struct TraversalReport {
  std::vector<TraversalRecord> records;
  /// Same steps with rate-dependent thresholding enabled, when run.
  std::vector<TraversalRecord> thresholded;
  double base_psnr = 0.0;
  double base_proxy = 0.0;

  std::string to_csv() const {
    std::ostringstream os;
    os << "step,t,psnr,proxy,mean_abs_r0";
    if (!thresholded.empty()) os << ",psnr_thr,proxy_thr,mean_abs_r0_thr";
    os << "\n";
    char buf[256];
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      std::snprintf(buf, sizeof buf, "%zu,%d,%.6f,%.8g,%.8g", r.step, r.t, r.psnr, r.proxy, r.mean_abs_r0);
      os << buf;
      if (!thresholded.empty()) {
        const auto& q = thresholded[i];
        std::snprintf(buf, sizeof buf, ",%.6f,%.8g,%.8g", q.psnr, q.proxy, q.mean_abs_r0);
        os << buf;
      }
      os << "\n";
    }
    return os.str();
  }
};

/// Per-step corpus averages over a set of recorded trajectories (one per
/// item, equal lengths).
inline std::vector<TraversalRecord> traversal_records(const std::vector<EvalItem>& items,
                                                      const std::vector<Trajectory>& trajs) {
  if (items.size() != trajs.size() || items.empty()) throw ParameterError("traversal: item/trajectory mismatch");
  const std::size_t n_steps = trajs.front().records.size();
  std::vector<Array3> originals;
  for (const auto& it : items) originals.push_back(it.x);
  const auto ref_features = crop_features(originals);
  std::vector<TraversalRecord> out;
  for (std::size_t k = 0; k < n_steps; ++k) {
    TraversalRecord rec;
    rec.step = k + 1;
    std::vector<Array3> outputs;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (trajs[i].records.size() != n_steps) throw ParameterError("traversal: trajectories differ in length");
      const auto& r = trajs[i].records[k];
      rec.t = r.t;
      outputs.push_back(intermediate_output(items[i].x_tilde, r));
      rec.psnr += psnr(items[i].x, outputs.back());
      double a = 0.0;
      for (double v : r.r0_pred.values()) a += std::abs(v);
      rec.mean_abs_r0 += a / static_cast<double>(r.r0_pred.size());
    }
    rec.psnr /= static_cast<double>(items.size());
    rec.mean_abs_r0 /= static_cast<double>(items.size());
    rec.proxy = frechet_distance(ref_features, crop_features(outputs)).distance;
    out.push_back(rec);
  }
  return out;
}

/// Runs the sampler on every item and reports per-step fidelity and the
/// patch proxy. With `table`, a second run uses rate-dependent thresholding.
/// Items are sampled on up to `jobs` threads; the result does not depend on it.
inline TraversalReport traversal_report(const DenoiserModel& model, const NoiseSchedule& s,
                                        const std::vector<EvalItem>& items, SamplerConfig cfg,
                                        const std::optional<ThresholdTable>& table = std::nullopt, int jobs = 1) {
  cfg.record_trajectory = true;
  TraversalReport rep;
  auto run = [&](const SamplerConfig& c) {
    std::vector<Trajectory> trajs(items.size());
    parallel_for(items.size(), jobs, [&](std::size_t i) {
      trajs[i] = *enhance(model, s, items[i].x_tilde, c, items[i].lambda).trajectory;
    });
    return traversal_records(items, trajs);
  };
  rep.records = run(cfg);
  if (table) {
    SamplerConfig ct = cfg;
    ct.thresholding = Thresholding::kTable;
    ct.table = table;
    rep.thresholded = run(ct);
  }
  std::vector<Array3> xs, xts;
  for (const auto& it : items) {
    xs.push_back(it.x);
    xts.push_back(it.x_tilde);
    rep.base_psnr += psnr(it.x, it.x_tilde);
  }
  rep.base_psnr /= static_cast<double>(items.size());
  rep.base_proxy = patch_frechet(xs, xts).distance;
  return rep;
}

inline std::string curvature_csv(const CurvatureResult& c, const Trajectory& traj) {
  std::ostringstream os;
  os << "pair,t_from,t_to,angle_rad,degenerate\n";
  char buf[128];
  for (std::size_t i = 0; i < c.angles.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.9f,%d\n", i + 1, traj.records[i].t, traj.records[i + 1].t,
                  c.angles[i], c.degenerate[i] ? 1 : 0);
    os << buf;
  }
  return os.str();
}

}  // namespace resdiff
