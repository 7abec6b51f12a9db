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

// Procedural image corpus: gradients, value-noise textures, flat shapes with
// hard edges and oriented stripes, all snapped to the 8-bit grid.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "resdiff/common.hpp"
#include "resdiff/image_io.hpp"
#include "resdiff/rng.hpp"

namespace resdiff {

inline constexpr std::uint64_t kCorpusSeed = 20230301;
inline constexpr int kCorpusSize = 32;
inline constexpr int kCorpusSide = 64;
/// The last kEvalImages images of the corpus form the evaluation split.
inline constexpr int kEvalImages = 8;

namespace detail {

inline std::array<double, 3> random_color(Rng& rng) {
  return {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
}

/// Bilinearly interpolated lattice noise with `octaves` octaves, roughly in
/// [-1, 1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int cells) : cells_(cells), grid_(static_cast<std::size_t>((cells + 1) * (cells + 1))) {
    for (double& g : grid_) g = rng.uniform(-1.0, 1.0);
  }
  double at(double u, double v) const {
    const double x = u * cells_, y = v * cells_;
    const int x0 = std::min(static_cast<int>(x), cells_ - 1), y0 = std::min(static_cast<int>(y), cells_ - 1);
    const double fx = smooth(x - x0), fy = smooth(y - y0);
    auto g = [&](int i, int j) { return grid_[static_cast<std::size_t>(j * (cells_ + 1) + i)]; };
    const double a = g(x0, y0) * (1 - fx) + g(x0 + 1, y0) * fx;
    const double b = g(x0, y0 + 1) * (1 - fx) + g(x0 + 1, y0 + 1) * fx;
    return a * (1 - fy) + b * fy;
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  int cells_;
  std::vector<double> grid_;
};

inline Array3 gradient_image(Rng& rng, int side) {
  Array3 img(3, side, side);
  const auto c0 = random_color(rng), c1 = random_color(rng);
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = rng.uniform(1.0, 4.0);
  const double amp = rng.uniform(0.05, 0.25);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double u = static_cast<double>(x) / (side - 1), v = static_cast<double>(y) / (side - 1);
      const double t = std::clamp(0.5 + (u - 0.5) * std::cos(ang) + (v - 0.5) * std::sin(ang), 0.0, 1.0);
      const double wave = amp * std::sin(2.0 * std::numbers::pi * freq * (u + 0.3 * v));
      for (int c = 0; c < 3; ++c) img(c, y, x) = c0[c] * (1 - t) + c1[c] * t + wave;
    }
  return img;
}

inline Array3 texture_image(Rng& rng, int side) {
  Array3 img(3, side, side);
  const auto base = random_color(rng);
  std::vector<ValueNoise> octaves;
  const int first = 2 + static_cast<int>(rng.below(3));
  for (int o = 0; o < 4; ++o) octaves.emplace_back(rng, first << o);
  std::array<double, 3> tint{rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)};
  const double contrast = rng.uniform(0.3, 0.6);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double n = 0.0, amp = 1.0, norm = 0.0;
      for (const auto& oc : octaves) {
        n += amp * oc.at(static_cast<double>(x) / side, static_cast<double>(y) / side);
        norm += amp;
        amp *= 0.6;
      }
      n /= norm;
      for (int c = 0; c < 3; ++c) img(c, y, x) = base[c] * 0.5 + contrast * tint[c] * n * 1.6;
    }
  return img;
}

inline Array3 shapes_image(Rng& rng, int side) {
  Array3 img(3, side, side);
  const auto bg = random_color(rng);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) img(c, y, x) = bg[c];
  const int n = 3 + static_cast<int>(rng.below(4));
  for (int s = 0; s < n; ++s) {
    const auto col = random_color(rng);
    const double cx = rng.uniform(0, side), cy = rng.uniform(0, side);
    const double r = rng.uniform(side * 0.08, side * 0.3);
    const bool circle = rng.below(2) == 0;
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double dx = x - cx, dy = y - cy;
        const bool inside = circle ? dx * dx + dy * dy <= r * r : std::abs(dx) <= r && std::abs(dy) <= r * 0.6;
        if (inside)
          for (int c = 0; c < 3; ++c) img(c, y, x) = col[c];
      }
  }
  for (double& v : img.values()) v += 0.03 * rng.normal();
  return img;
}

inline Array3 stripes_image(Rng& rng, int side) {
  Array3 img(3, side, side);
  const auto c0 = random_color(rng), c1 = random_color(rng);
  const double ang = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(3.0, 12.0);
  ValueNoise warp(rng, 4);
  const double warp_amp = rng.uniform(0.0, 3.0);
  const bool square = rng.below(2) == 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double d = x * std::cos(ang) + y * std::sin(ang) +
                       warp_amp * warp.at(static_cast<double>(x) / side, static_cast<double>(y) / side);
      double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * d / period);
      if (square) s = s > 0.5 ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) img(c, y, x) = c0[c] * (1 - s) + c1[c] * s;
    }
  for (double& v : img.values()) v += 0.02 * rng.normal();
  return img;
}

}  // namespace detail

/// Deterministic corpus of `count` square images, cycling through four
/// generators.
inline std::vector<Array3> make_corpus(std::uint64_t seed = kCorpusSeed, int count = kCorpusSize,
                                       int side = kCorpusSide) {
  Rng rng(seed);
  std::vector<Array3> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Array3 img;
    switch (i % 4) {
      case 0: img = detail::gradient_image(rng, side); break;
      case 1: img = detail::texture_image(rng, side); break;
      case 2: img = detail::shapes_image(rng, side); break;
      default: img = detail::stripes_image(rng, side); break;
    }
    out.push_back(quantize_to_8bit(clamp(img, -1.0, 1.0)));
  }
  return out;
}

inline std::string corpus_file_name(int index) {
  std::string n = std::to_string(index);
  return "img" + std::string(3 - std::min<std::size_t>(3, n.size()), '0') + n + ".ppm";
}

inline void write_corpus(const std::filesystem::path& dir, const std::vector<Array3>& images) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_ppm(dir / corpus_file_name(static_cast<int>(i)), images[i]);
  }
}

/// Reads every *.ppm in `dir`, sorted by file name.
inline std::vector<Array3> read_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("corpus directory '" + dir.string() + "' does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("corpus directory '" + dir.string() + "' has no .ppm files");
  std::vector<Array3> out;
  for (const auto& f : files) out.push_back(read_ppm(f));
  return out;
}

struct CorpusSplit {
  std::vector<Array3> train;
  std::vector<Array3> eval;
};

/// Holds out the last `eval_count` images (none when the corpus is smaller
/// than twice that).
inline CorpusSplit split_corpus(const std::vector<Array3>& all, int eval_count = kEvalImages) {
  CorpusSplit s;
  const std::size_t n = all.size();
  const std::size_t e = n >= static_cast<std::size_t>(2 * eval_count) ? static_cast<std::size_t>(eval_count) : 0;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n - e));
  s.eval.assign(all.begin() + static_cast<std::ptrdiff_t>(n - e), all.end());
  return s;
}

}  // namespace resdiff
