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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace resdiff {

/// Invalid argument to a constructor or operation (out-of-range t, bad schedule
/// parameters, mismatched shapes).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while decoding a bitstream or checkpoint. Carries the byte offset at
/// which the problem was detected.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Inconsistent configuration (unknown keys, missing rate for table
/// thresholding, schedule/checkpoint mismatch).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during training (non-finite loss or update, divergence).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense channels x height x width array of doubles. Used for images in
/// [-1, 1], residual fields and noise.
class Array3 {
 public:
  Array3() = default;
  Array3(int channels, int height, int width, double fill = 0.0)
      : c_(channels), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels < 0 || height < 0 || width < 0) {
      throw ParameterError("Array3: negative dimension");
    }
  }

  int channels() const noexcept { return c_; }
  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int c, int y, int x) noexcept {
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  double operator()(int c, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Array3& o) const noexcept {
    return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  bool operator==(const Array3& o) const = default;

 private:
  int c_ = 0;
  int h_ = 0;
  int w_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Array3& a, const Array3& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ParameterError(std::string(what) + ": shape mismatch (" +
                         std::to_string(a.channels()) + "x" + std::to_string(a.height()) +
                         "x" + std::to_string(a.width()) + " vs " +
                         std::to_string(b.channels()) + "x" + std::to_string(b.height()) +
                         "x" + std::to_string(b.width()) + ")");
  }
}

/// Elementwise a*x + b*y.
inline Array3 axpby(double a, const Array3& x, double b, const Array3& y) {
  require_same_shape(x, y, "axpby");
  Array3 out(x.channels(), x.height(), x.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

inline Array3 clamp(const Array3& x, double lo, double hi) {
  Array3 out = x;
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

/// Calls f(i) for i in [0, n) on up to `jobs` threads. Each index is handled
/// by exactly one call, so results written per index do not depend on `jobs`.
/// The first exception thrown by any call is rethrown.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace resdiff
