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

// Multi-symbol range coder with adaptive frequency models.
//
// The coder keeps a 32-bit range normalized to >= 2^24 and a 64-bit low with
// byte-wise carry propagation. Interval splitting uses the exact product
// floor(range * cum / total), so the only coding loss is the sub-unit
// rounding of interval ends plus a 5 byte flush.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "resdiff/common.hpp"

namespace resdiff {

/// Adaptive frequency table over symbols [0, n). Counts start at 1, grow by
/// `increment` per coded symbol and are halved once the total exceeds `limit`.
/// Encoder and decoder must drive identical instances.
class AdaptiveModel {
 public:
  explicit AdaptiveModel(int num_symbols, std::uint32_t increment = 24,
                         std::uint32_t limit = 1u << 16)
      : freq_(static_cast<std::size_t>(num_symbols), 1u),
        total_(static_cast<std::uint32_t>(num_symbols)),
        increment_(increment),
        limit_(limit) {
    if (num_symbols < 1 || static_cast<std::uint32_t>(num_symbols) > limit) {
      throw ParameterError("AdaptiveModel: bad alphabet size");
    }
    if (increment < 1) throw ParameterError("AdaptiveModel: increment must be >= 1");
  }

  int num_symbols() const noexcept { return static_cast<int>(freq_.size()); }
  std::uint32_t total() const noexcept { return total_; }
  std::uint32_t freq(int s) const noexcept { return freq_[static_cast<std::size_t>(s)]; }

  std::uint32_t cumulative(int s) const noexcept {
    std::uint32_t c = 0;
    for (int i = 0; i < s; ++i) c += freq_[static_cast<std::size_t>(i)];
    return c;
  }

  /// Symbol whose cumulative interval contains `target`, and its cumulative
  /// start.
  int find(std::uint32_t target, std::uint32_t& cum_out) const noexcept {
    std::uint32_t c = 0;
    int s = 0;
    for (; s + 1 < num_symbols(); ++s) {
      const std::uint32_t f = freq_[static_cast<std::size_t>(s)];
      if (target < c + f) break;
      c += f;
    }
    cum_out = c;
    return s;
  }

  /// Information content of `s` under the current state, in bits.
  double cost_bits(int s) const noexcept {
    return -std::log2(static_cast<double>(freq(s)) / static_cast<double>(total_));
  }

  void update(int s) {
    freq_[static_cast<std::size_t>(s)] += increment_;
    total_ += increment_;
    if (total_ > limit_) {
      total_ = 0;
      for (auto& f : freq_) {
        f = (f + 1) / 2;
        total_ += f;
      }
    }
  }

 private:
  std::vector<std::uint32_t> freq_;
  std::uint32_t total_;
  std::uint32_t increment_;
  std::uint32_t limit_;
};

class RangeEncoder {
 public:
  /// Codes the interval [cum, cum + freq) out of `total`.
  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    const std::uint64_t r = range_;
    const std::uint64_t lo = r * cum / total;
    const std::uint64_t hi = r * (cum + freq) / total;
    low_ += lo;
    range_ = static_cast<std::uint32_t>(hi - lo);
    info_bits_ += -std::log2(static_cast<double>(freq) / static_cast<double>(total));
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  /// Codes `s` with `model` and then adapts the model.
  void encode(AdaptiveModel& model, int s) {
    encode(model.cumulative(s), model.freq(s), model.total());
    model.update(s);
  }

  /// Codes the low `nbits` of `value` with a flat distribution (nbits <= 16).
  void encode_bits(std::uint32_t value, int nbits) {
    if (nbits <= 0) return;
    encode(value & ((1u << nbits) - 1u), 1u, 1u << nbits);
  }

  /// Flushes the coder state and returns the byte stream.
  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

  /// Sum of -log2 p over every coded symbol, using the probabilities in effect
  /// when each symbol was coded.
  double information_bits() const noexcept { return info_bits_; }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      if (has_cache_) out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
      for (; pending_ > 0; --pending_) out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
      has_cache_ = true;
    } else {
      ++pending_;
    }
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  bool has_cache_ = false;
  std::size_t pending_ = 0;
  std::vector<std::uint8_t> out_;
  double info_bits_ = 0.0;
};

class RangeDecoder {
 public:
  /// `base_offset` is only used to report positions relative to an enclosing
  /// container.
  explicit RangeDecoder(std::span<const std::uint8_t> bytes, std::size_t base_offset = 0)
      : in_(bytes), base_(base_offset) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  int decode(AdaptiveModel& model) {
    const std::uint32_t target = target_for(model.total());
    std::uint32_t cum = 0;
    const int s = model.find(target, cum);
    consume(cum, model.freq(s), model.total());
    model.update(s);
    return s;
  }

  std::uint32_t decode_bits(int nbits) {
    if (nbits <= 0) return 0;
    const std::uint32_t total = 1u << nbits;
    const std::uint32_t v = target_for(total);
    consume(v, 1u, total);
    return v;
  }

  /// Bytes read past the end of the input (zeros are substituted). A correct
  /// stream never needs any.
  std::size_t overrun() const noexcept { return overrun_; }
  std::size_t position() const noexcept { return base_ + pos_; }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::uint32_t next_byte() {
    if (pos_ < in_.size()) return in_[pos_++];
    ++overrun_;
    ++pos_;
    return 0;
  }

  std::uint32_t target_for(std::uint32_t total) const {
    const std::uint64_t v = code_;
    const std::uint64_t t = ((v + 1) * total - 1) / range_;
    if (t >= total) {
      throw DecodeError("range decoder: corrupt stream", position());
    }
    return static_cast<std::uint32_t>(t);
  }

  void consume(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    const std::uint64_t r = range_;
    const std::uint64_t lo = r * cum / total;
    const std::uint64_t hi = r * (cum + freq) / total;
    code_ -= static_cast<std::uint32_t>(lo);
    range_ = static_cast<std::uint32_t>(hi - lo);
    while (range_ < kTop) {
      range_ <<= 8;
      code_ = (code_ << 8) | next_byte();
    }
  }

  std::span<const std::uint8_t> in_;
  std::size_t base_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::size_t overrun_ = 0;
};

/// Codes a whole symbol sequence with a fresh adaptive model. The symbol count
/// is not stored; the decoder must be told it.
struct RangeCoded {
  std::vector<std::uint8_t> bytes;
  double information_bits = 0.0;
};

inline RangeCoded range_code(std::span<const int> symbols, int alphabet) {
  AdaptiveModel model(alphabet);
  RangeEncoder enc;
  for (int s : symbols) {
    if (s < 0 || s >= alphabet) throw ParameterError("range_code: symbol outside alphabet");
    enc.encode(model, s);
  }
  const double info = enc.information_bits();
  return {enc.finish(), info};
}

inline std::vector<int> range_decode(std::span<const std::uint8_t> bytes, std::size_t count,
                                     int alphabet) {
  if (count == 0) return {};
  AdaptiveModel model(alphabet);
  RangeDecoder dec(bytes);
  std::vector<int> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(dec.decode(model));
  if (dec.overrun() > 0) throw DecodeError("range decoder: truncated stream", bytes.size());
  return out;
}

}  // namespace resdiff
