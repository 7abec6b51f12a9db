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

// Checkpoint container. All integers little-endian.
//
//   0   4  magic "RDCK"
//   4   4  u32 version (1)
//   8   4  u32 config text length n
//  12   n  config text (to_text of the ToolkitConfig used for training)
//   .   8  i64 Adam step
//   .   4  u32 array count
//   per array:
//       2  u16 name length k, then k bytes of name
//       8  u64 element count m, then m f64 values
//
// Arrays are "param/<name>", "adam.m/<name>", "adam.v/<name>" and
// "loss_history".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "resdiff/common.hpp"
#include "resdiff/config.hpp"
#include "resdiff/denoiser.hpp"
#include "resdiff/image_io.hpp"
#include "resdiff/train.hpp"

namespace resdiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ToolkitConfig config;
  TrainState state;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void uint(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t position() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw DecodeError("checkpoint truncated", pos_);
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ToolkitConfig& config, const TrainState& state) {
  if (!(state.model.config() == config.model)) throw ParameterError("checkpoint: model does not match config");
  detail::ByteWriter w;
  w.raw("RDCK");
  w.uint(kCheckpointVersion, 4);
  const std::string text = to_text(config);
  w.uint(text.size(), 4);
  w.raw(text);
  w.uint(static_cast<std::uint64_t>(state.adam.step), 8);
  std::vector<std::pair<std::string, const std::vector<double>*>> arrays;
  for (const auto& [name, v] : state.model.parameters()) arrays.emplace_back("param/" + name, &v->value.data);
  for (const auto& [name, m] : state.adam.m) arrays.emplace_back("adam.m/" + name, &m);
  for (const auto& [name, v] : state.adam.v) arrays.emplace_back("adam.v/" + name, &v);
  arrays.emplace_back("loss_history", &state.loss_history);
  w.uint(arrays.size(), 4);
  for (const auto& [name, data] : arrays) {
    w.uint(name.size(), 2);
    w.raw(name);
    w.uint(data->size(), 8);
    for (double d : *data) w.f64(d);
  }
  return w.take();
}

inline Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4) != "RDCK") throw DecodeError("checkpoint: bad magic", 0);
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    throw DecodeError("checkpoint: unsupported version " + std::to_string(version), 4);
  }
  const auto text_len = r.uint(4);
  Checkpoint ck{parse_config(r.raw(text_len)), TrainState{DenoiserModel(ModelConfig{}), {}, {}}};
  ck.state.model = DenoiserModel(ck.config.model);
  ck.state.adam.step = static_cast<std::int64_t>(r.uint(8));
  const auto count = r.uint(4);
  std::size_t params_seen = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.position();
    const std::string name = r.raw(r.uint(2));
    const auto n = r.uint(8);
    if (n > bytes.size() / 8) throw DecodeError("checkpoint: array '" + name + "' too long", at);
    std::vector<double> data(n);
    for (auto& d : data) d = r.f64();
    if (name.rfind("param/", 0) == 0) {
      const ad::Var& p = ck.state.model.param(name.substr(6));
      if (p->value.data.size() != n) throw DecodeError("checkpoint: size mismatch for '" + name + "'", at);
      p->value.data = std::move(data);
      ++params_seen;
    } else if (name.rfind("adam.m/", 0) == 0) {
      ck.state.adam.m[name.substr(7)] = std::move(data);
    } else if (name.rfind("adam.v/", 0) == 0) {
      ck.state.adam.v[name.substr(7)] = std::move(data);
    } else if (name == "loss_history") {
      ck.state.loss_history = std::move(data);
    } else {
      throw DecodeError("checkpoint: unknown array '" + name + "'", at);
    }
  }
  if (!r.done()) throw DecodeError("checkpoint: trailing bytes", r.position());
  if (params_seen != ck.state.model.parameters().size()) throw DecodeError("checkpoint: missing parameters", 0);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ToolkitConfig& config, const TrainState& state) {
  write_file(path, serialize_checkpoint(config, state));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace resdiff
