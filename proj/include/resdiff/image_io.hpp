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

// Binary PPM (P6, maxval 255) I/O. Pixel p in [0, 255] maps to p / 127.5 - 1
// in [-1, 1]; the reverse map rounds and clamps.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "resdiff/common.hpp"

namespace resdiff {

inline double pixel_to_unit(std::uint8_t p) { return p / 127.5 - 1.0; }

inline std::uint8_t unit_to_pixel(double v) {
  const double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

/// Snaps an image onto the 8-bit grid, as if written to PPM and read back.
inline Array3 quantize_to_8bit(const Array3& x) {
  Array3 out = x;
  for (double& v : out.values()) v = pixel_to_unit(unit_to_pixel(v));
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

inline std::vector<std::uint8_t> encode_ppm(const Array3& img) {
  if (img.channels() != 3) throw ParameterError("PPM output needs 3 channels");
  const std::string header =
      "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.push_back(unit_to_pixel(img(c, y, x)));
  return out;
}

inline Array3 decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 20) throw DecodeError("PPM: number too large", start);
      ++pos;
    }
    if (pos == start) throw DecodeError("PPM: expected integer", start);
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DecodeError("PPM: expected P6", 0);
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw DecodeError("PPM: only maxval 255 supported", pos);
  if (w < 1 || h < 1) throw DecodeError("PPM: empty image", pos);
  ++pos;  // single whitespace before raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) throw DecodeError("PPM: truncated raster", bytes.size());
  Array3 img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img(c, y, x) = pixel_to_unit(bytes[pos++]);
  return img;
}

inline Array3 read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
inline void write_ppm(const std::filesystem::path& path, const Array3& img) {
  write_file(path, encode_ppm(img));
}

}  // namespace resdiff
