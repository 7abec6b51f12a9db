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

// Multi-rate base codec: replicate padding to 8x8 blocks, orthonormal block
// DCT, uniform scalar quantization with binwidth kBaseBinwidth / s, zigzag
// scan and adaptive range coding of the quantized coefficients.
//
// Bitstream layout (little-endian):
//   offset  size  field
//   0       4     magic "RDBC"
//   4       1     version (1)
//   5       1     flags (bit 0: scale came from the rate map, lambda recoverable)
//   6       2     width
//   8       2     height
//   10      2     scale_code = round(s * 1024)
//   12      4     payload length in bytes
//   16      n     range-coded payload

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "resdiff/common.hpp"
#include "resdiff/range_coder.hpp"

namespace resdiff {

inline constexpr double kLambdaMin = 0.0004;
inline constexpr double kLambdaMax = 0.016;
inline constexpr double kScaleAtLambdaMin = 0.25;
inline constexpr double kScaleAtLambdaMax = 4.0;
inline constexpr double kBaseBinwidth = 0.25;
inline constexpr double kScaleCodeUnit = 1024.0;

/// Exponent of the default rate-to-scale map, chosen so that s spans
/// [0.25, 4] over [kLambdaMin, kLambdaMax].
inline double default_scale_beta() {
  return std::log(kScaleAtLambdaMax / kScaleAtLambdaMin) / std::log(kLambdaMax / kLambdaMin);
}
inline double default_scale_alpha() {
  return kScaleAtLambdaMax / std::pow(kLambdaMax, default_scale_beta());
}

struct CodecConstants {
  double alpha_s = default_scale_alpha();
  double beta_s = default_scale_beta();
  double lambda_min = kLambdaMin;
  double lambda_max = kLambdaMax;

  bool operator==(const CodecConstants&) const = default;
};

/// log2(lambda) interpolates linearly between log2(lambda_min) and
/// log2(lambda_max) as lambda' goes from 0 to 1.
inline double sample_lambda(double lambda_prime, double lambda_min = kLambdaMin,
                            double lambda_max = kLambdaMax) {
  if (!(lambda_prime >= 0.0 && lambda_prime <= 1.0)) {
    throw ParameterError("sample_lambda: lambda' must lie in [0, 1]");
  }
  if (!(lambda_min > 0.0 && lambda_min <= lambda_max)) {
    throw ParameterError("sample_lambda: need 0 < lambda_min <= lambda_max");
  }
  if (lambda_prime == 0.0) return lambda_min;
  if (lambda_prime == 1.0) return lambda_max;
  const double l2 = (std::log2(lambda_max) - std::log2(lambda_min)) * lambda_prime +
                    std::log2(lambda_min);
  return std::exp2(l2);
}

/// s = alpha_s * exp(beta_s * log(lambda)).
inline double rate_to_scale(double lambda, double alpha_s, double beta_s) {
  if (!(lambda > 0.0)) throw ParameterError("rate_to_scale: lambda must be positive");
  return alpha_s * std::exp(beta_s * std::log(lambda));
}

/// Inverse of rate_to_scale.
inline double scale_to_rate(double s, double alpha_s, double beta_s) {
  if (!(s > 0.0) || !(alpha_s > 0.0) || beta_s == 0.0) {
    throw ParameterError("scale_to_rate: map is not invertible");
  }
  return std::exp(std::log(s / alpha_s) / beta_s);
}

inline std::uint16_t scale_to_code(double s) {
  const double c = std::round(s * kScaleCodeUnit);
  if (!(c >= 1.0 && c <= 65535.0)) throw ParameterError("scale outside 16-bit fixed-point range");
  return static_cast<std::uint16_t>(c);
}
inline double code_to_scale(std::uint16_t code) { return code / kScaleCodeUnit; }

/// Rate operating point. Validated on construction.
struct RateControl {
  double lambda;
  CodecConstants constants;

  explicit RateControl(double lambda_rate, CodecConstants c = {}) : lambda(lambda_rate), constants(c) {
    if (!(c.lambda_min > 0.0 && c.lambda_min <= lambda && lambda <= c.lambda_max)) {
      throw ParameterError("RateControl: lambda outside [lambda_min, lambda_max]");
    }
    if (!(c.alpha_s > 0.0)) throw ParameterError("RateControl: alpha_s must be positive");
  }
  static RateControl from_prime(double lambda_prime, CodecConstants c = {}) {
    return RateControl(sample_lambda(lambda_prime, c.lambda_min, c.lambda_max), c);
  }
  double scale() const { return rate_to_scale(lambda, constants.alpha_s, constants.beta_s); }
};

namespace dct {

inline constexpr int kBlock = 8;

inline const std::array<double, 64>& basis() {
  static const std::array<double, 64> m = [] {
    std::array<double, 64> b{};
    for (int k = 0; k < kBlock; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (int n = 0; n < kBlock; ++n) {
        b[k * kBlock + n] = a * std::cos(std::numbers::pi * (2 * n + 1) * k / (2.0 * kBlock));
      }
    }
    return b;
  }();
  return m;
}

/// Orthonormal 2-D DCT-II of a row-major 8x8 block.
inline std::array<double, 64> forward(const std::array<double, 64>& x) {
  const auto& c = basis();
  std::array<double, 64> tmp{}, out{};
  for (int u = 0; u < kBlock; ++u)
    for (int j = 0; j < kBlock; ++j) {
      double s = 0.0;
      for (int i = 0; i < kBlock; ++i) s += c[u * kBlock + i] * x[i * kBlock + j];
      tmp[u * kBlock + j] = s;
    }
  for (int u = 0; u < kBlock; ++u)
    for (int v = 0; v < kBlock; ++v) {
      double s = 0.0;
      for (int j = 0; j < kBlock; ++j) s += tmp[u * kBlock + j] * c[v * kBlock + j];
      out[u * kBlock + v] = s;
    }
  return out;
}

inline std::array<double, 64> inverse(const std::array<double, 64>& X) {
  const auto& c = basis();
  std::array<double, 64> tmp{}, out{};
  for (int i = 0; i < kBlock; ++i)
    for (int v = 0; v < kBlock; ++v) {
      double s = 0.0;
      for (int u = 0; u < kBlock; ++u) s += c[u * kBlock + i] * X[u * kBlock + v];
      tmp[i * kBlock + v] = s;
    }
  for (int i = 0; i < kBlock; ++i)
    for (int j = 0; j < kBlock; ++j) {
      double s = 0.0;
      for (int v = 0; v < kBlock; ++v) s += tmp[i * kBlock + v] * c[v * kBlock + j];
      out[i * kBlock + j] = s;
    }
  return out;
}

inline const std::array<int, 64>& zigzag() {
  static const std::array<int, 64> z = [] {
    std::array<int, 64> order{};
    int idx = 0;
    for (int d = 0; d < 2 * kBlock - 1; ++d) {
      for (int k = 0; k <= d; ++k) {
        const int i = (d % 2 == 0) ? d - k : k;
        const int j = d - i;
        if (i < kBlock && j < kBlock) order[idx++] = i * kBlock + j;
      }
    }
    return order;
  }();
  return z;
}

}  // namespace dct

/// Edge-replicating pad of every plane to the next multiple of `multiple`.
inline Array3 replicate_pad(const Array3& x, int multiple) {
  const int H = (x.height() + multiple - 1) / multiple * multiple;
  const int W = (x.width() + multiple - 1) / multiple * multiple;
  if (H == x.height() && W == x.width()) return x;
  Array3 out(x.channels(), H, W);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        out(c, y, xx) = x(c, std::min(y, x.height() - 1), std::min(xx, x.width() - 1));
  return out;
}

inline Array3 crop(const Array3& x, int height, int width) {
  if (height > x.height() || width > x.width()) throw ParameterError("crop: target larger than source");
  if (height == x.height() && width == x.width()) return x;
  Array3 out(x.channels(), height, width);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx) out(c, y, xx) = x(c, y, xx);
  return out;
}

/// Quantized block coefficients in raster block order, per plane, each block in
/// natural (row-major) coefficient order.
struct QuantizedImage {
  int channels = 0;
  int padded_height = 0;
  int padded_width = 0;
  std::vector<std::int32_t> coeffs;

  bool operator==(const QuantizedImage&) const = default;
};

inline QuantizedImage quantize_image(const Array3& image, double scale) {
  const Array3 x = replicate_pad(image, dct::kBlock);
  const double step = kBaseBinwidth / scale;
  QuantizedImage q{x.channels(), x.height(), x.width(), {}};
  q.coeffs.reserve(x.size());
  std::array<double, 64> blk{};
  for (int c = 0; c < x.channels(); ++c)
    for (int by = 0; by < x.height(); by += dct::kBlock)
      for (int bx = 0; bx < x.width(); bx += dct::kBlock) {
        for (int i = 0; i < dct::kBlock; ++i)
          for (int j = 0; j < dct::kBlock; ++j) blk[i * dct::kBlock + j] = x(c, by + i, bx + j);
        const auto coef = dct::forward(blk);
        for (double v : coef) q.coeffs.push_back(static_cast<std::int32_t>(std::lround(v / step)));
      }
  return q;
}

inline Array3 dequantize_image(const QuantizedImage& q, double scale) {
  const double step = kBaseBinwidth / scale;
  Array3 x(q.channels, q.padded_height, q.padded_width);
  std::size_t k = 0;
  std::array<double, 64> coef{};
  for (int c = 0; c < q.channels; ++c)
    for (int by = 0; by < q.padded_height; by += dct::kBlock)
      for (int bx = 0; bx < q.padded_width; bx += dct::kBlock) {
        for (double& v : coef) v = q.coeffs[k++] * step;
        const auto blk = dct::inverse(coef);
        for (int i = 0; i < dct::kBlock; ++i)
          for (int j = 0; j < dct::kBlock; ++j) x(c, by + i, bx + j) = blk[i * dct::kBlock + j];
      }
  return x;
}

namespace detail {

inline constexpr int kNumCategories = 24;
inline constexpr int kEndOfBlock = kNumCategories;
inline constexpr int kNumBands = 5;

inline int magnitude_category(std::int32_t v) {
  std::uint32_t a = static_cast<std::uint32_t>(v < 0 ? -static_cast<std::int64_t>(v) : v);
  int c = 0;
  while (a) {
    ++c;
    a >>= 1;
  }
  return c;
}

inline int band_of(int zz) {
  if (zz <= 2) return 0;
  if (zz <= 9) return 1;
  if (zz <= 20) return 2;
  if (zz <= 35) return 3;
  return 4;
}

/// Context models shared by the coefficient encoder and decoder.
struct CoefficientModels {
  AdaptiveModel dc{kNumCategories};
  std::vector<AdaptiveModel> ac;
  CoefficientModels() {
    for (int i = 0; i < kNumBands * 2; ++i) ac.emplace_back(kNumCategories + 1);
  }
  AdaptiveModel& ac_model(int zz, bool prev_nonzero) { return ac[band_of(zz) * 2 + (prev_nonzero ? 1 : 0)]; }
};

inline void encode_value(RangeEncoder& enc, AdaptiveModel& m, std::int32_t v) {
  const int cat = magnitude_category(v);
  enc.encode(m, cat);
  if (cat == 0) return;
  enc.encode_bits(v < 0 ? 1u : 0u, 1);
  const std::uint32_t a = static_cast<std::uint32_t>(std::abs(v));
  // Leading one is implied by the category.
  const int extra = cat - 1;
  const std::uint32_t rest = a - (1u << extra);
  if (extra > 16) {
    enc.encode_bits(rest >> 16, extra - 16);
    enc.encode_bits(rest & 0xFFFFu, 16);
  } else {
    enc.encode_bits(rest, extra);
  }
}

inline std::int32_t decode_value(RangeDecoder& dec, int cat) {
  if (cat == 0) return 0;
  const bool neg = dec.decode_bits(1) != 0;
  const int extra = cat - 1;
  std::uint32_t rest = 0;
  if (extra > 16) {
    rest = dec.decode_bits(extra - 16) << 16;
    rest |= dec.decode_bits(16);
  } else {
    rest = dec.decode_bits(extra);
  }
  const auto a = static_cast<std::int32_t>((1u << extra) + rest);
  return neg ? -a : a;
}

}  // namespace detail

struct PayloadCoding {
  std::vector<std::uint8_t> bytes;
  double information_bits = 0.0;
};

/// Entropy codes quantized coefficients: DPCM on DC per plane, then zigzag AC
/// with an end-of-block symbol.
inline PayloadCoding encode_coefficients(const QuantizedImage& q) {
  RangeEncoder enc;
  detail::CoefficientModels models;
  const auto& zz = dct::zigzag();
  const std::size_t blocks = q.coeffs.size() / 64;
  const std::size_t blocks_per_plane =
      static_cast<std::size_t>(q.padded_height / 8) * static_cast<std::size_t>(q.padded_width / 8);
  std::int32_t prev_dc = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (blocks_per_plane && b % blocks_per_plane == 0) prev_dc = 0;
    const std::int32_t* blk = q.coeffs.data() + b * 64;
    detail::encode_value(enc, models.dc, blk[0] - prev_dc);
    prev_dc = blk[0];
    int last = 0;
    for (int k = 63; k >= 1; --k) {
      if (blk[zz[k]] != 0) {
        last = k;
        break;
      }
    }
    bool prev_nonzero = blk[0] != 0;
    for (int k = 1; k <= last; ++k) {
      const std::int32_t v = blk[zz[k]];
      detail::encode_value(enc, models.ac_model(k, prev_nonzero), v);
      prev_nonzero = v != 0;
    }
    if (last < 63) enc.encode(models.ac_model(last + 1, prev_nonzero), detail::kEndOfBlock);
  }
  const double info = enc.information_bits();
  return {enc.finish(), info};
}

inline QuantizedImage decode_coefficients(std::span<const std::uint8_t> payload, int channels,
                                          int padded_height, int padded_width,
                                          std::size_t base_offset = 0) {
  QuantizedImage q{channels, padded_height, padded_width, {}};
  const std::size_t blocks_per_plane =
      static_cast<std::size_t>(padded_height / 8) * static_cast<std::size_t>(padded_width / 8);
  const std::size_t blocks = blocks_per_plane * static_cast<std::size_t>(channels);
  q.coeffs.assign(blocks * 64, 0);
  RangeDecoder dec(payload, base_offset);
  detail::CoefficientModels models;
  const auto& zz = dct::zigzag();
  std::int32_t prev_dc = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (b % blocks_per_plane == 0) prev_dc = 0;
    std::int32_t* blk = q.coeffs.data() + b * 64;
    const int dc_cat = dec.decode(models.dc);
    blk[0] = prev_dc + detail::decode_value(dec, dc_cat);
    prev_dc = blk[0];
    bool prev_nonzero = blk[0] != 0;
    for (int k = 1; k < 64; ++k) {
      const int sym = dec.decode(models.ac_model(k, prev_nonzero));
      if (sym == detail::kEndOfBlock) break;
      blk[zz[k]] = detail::decode_value(dec, sym);
      prev_nonzero = blk[zz[k]] != 0;
    }
    if (dec.overrun() > 4) throw DecodeError("payload truncated", dec.position());
  }
  if (dec.overrun() > 0) throw DecodeError("payload truncated", dec.position());
  return q;
}

inline constexpr std::array<std::uint8_t, 4> kBitstreamMagic{'R', 'D', 'B', 'C'};
inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::uint8_t kFlagRateMapped = 1;

struct BitstreamHeader {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint16_t scale_code = 0;
  bool rate_mapped = false;

  bool operator==(const BitstreamHeader&) const = default;
};

/// Encoded image: header fields plus payload.
struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;
  /// Information content of the payload under the adaptive models. Only known
  /// on the encoder side.
  double information_bits = 0.0;

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(kBitstreamMagic.begin(), kBitstreamMagic.end());
    out.push_back(kBitstreamVersion);
    out.push_back(header.rate_mapped ? kFlagRateMapped : 0);
    auto put16 = [&](std::uint16_t v) {
      out.push_back(static_cast<std::uint8_t>(v & 0xFF));
      out.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    put16(header.width);
    put16(header.height);
    put16(header.scale_code);
    const auto n = static_cast<std::uint32_t>(payload.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
  }

  static Bitstream parse(std::span<const std::uint8_t> bytes) {
    auto need = [&](std::size_t off, std::size_t n, const char* field) {
      if (bytes.size() < off + n) {
        throw DecodeError(std::string("bitstream truncated in ") + field, bytes.size());
      }
    };
    need(0, 4, "magic");
    for (std::size_t i = 0; i < 4; ++i) {
      if (bytes[i] != kBitstreamMagic[i]) throw DecodeError("bad bitstream magic", i);
    }
    need(4, 1, "version");
    if (bytes[4] != kBitstreamVersion) {
      throw DecodeError("unsupported bitstream version " + std::to_string(bytes[4]), 4);
    }
    need(5, 1, "flags");
    if ((bytes[5] & ~kFlagRateMapped) != 0) throw DecodeError("unknown bitstream flags", 5);
    auto get16 = [&](std::size_t off) {
      return static_cast<std::uint16_t>(bytes[off] | (bytes[off + 1] << 8));
    };
    need(6, 2, "width");
    need(8, 2, "height");
    need(10, 2, "scale");
    need(12, 4, "payload length");
    Bitstream bs;
    bs.header.rate_mapped = (bytes[5] & kFlagRateMapped) != 0;
    bs.header.width = get16(6);
    bs.header.height = get16(8);
    bs.header.scale_code = get16(10);
    if (bs.header.width == 0) throw DecodeError("zero width", 6);
    if (bs.header.height == 0) throw DecodeError("zero height", 8);
    if (bs.header.scale_code == 0) throw DecodeError("zero scale code", 10);
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(bytes[12 + i]) << (8 * i);
    if (bytes.size() < kHeaderBytes + n) throw DecodeError("bitstream payload truncated", bytes.size());
    if (bytes.size() > kHeaderBytes + n) throw DecodeError("trailing bytes after payload", kHeaderBytes + n);
    bs.payload.assign(bytes.begin() + kHeaderBytes, bytes.begin() + kHeaderBytes + n);
    return bs;
  }

  double scale() const { return code_to_scale(header.scale_code); }
  std::size_t payload_bits() const { return payload.size() * 8; }
  double bits_per_pixel() const {
    return static_cast<double>(payload_bits()) / (static_cast<double>(header.width) * header.height);
  }
};

inline void check_codec_image(const Array3& image) {
  if (image.channels() < 1) throw ParameterError("encode: image has no channels");
  if (image.height() < 1 || image.width() < 1) throw ParameterError("encode: empty image");
  if (image.height() >= 65536 || image.width() >= 65536) {
    throw ParameterError("encode: unsupported size, dimensions must be < 65536");
  }
}

/// Encodes at an explicit scale. The quantized 16-bit scale is what both sides
/// use.
inline Bitstream encode_with_scale(const Array3& image, double scale, bool rate_mapped = false) {
  check_codec_image(image);
  if (image.channels() != 3) throw ParameterError("encode: expected 3 channels");
  Bitstream bs;
  bs.header.width = static_cast<std::uint16_t>(image.width());
  bs.header.height = static_cast<std::uint16_t>(image.height());
  bs.header.scale_code = scale_to_code(scale);
  bs.header.rate_mapped = rate_mapped;
  const QuantizedImage q = quantize_image(image, code_to_scale(bs.header.scale_code));
  auto coded = encode_coefficients(q);
  bs.payload = std::move(coded.bytes);
  bs.information_bits = coded.information_bits;
  return bs;
}

inline Bitstream encode(const Array3& image, const RateControl& rc) {
  return encode_with_scale(image, rc.scale(), true);
}

struct Decoded {
  Array3 image;
  double scale = 0.0;
  /// Present when the scale came from the rate map.
  std::optional<double> lambda;
};

inline QuantizedImage decode_quantized(const Bitstream& bs) {
  const int ph = (bs.header.height + 7) / 8 * 8;
  const int pw = (bs.header.width + 7) / 8 * 8;
  return decode_coefficients(bs.payload, 3, ph, pw, kHeaderBytes);
}

inline Decoded decode(const Bitstream& bs, const CodecConstants& constants = {}) {
  const QuantizedImage q = decode_quantized(bs);
  Decoded d;
  d.scale = bs.scale();
  d.image = clamp(crop(dequantize_image(q, d.scale), bs.header.height, bs.header.width), -1.0, 1.0);
  if (bs.header.rate_mapped) d.lambda = scale_to_rate(d.scale, constants.alpha_s, constants.beta_s);
  return d;
}

inline Decoded decode(std::span<const std::uint8_t> bytes, const CodecConstants& constants = {}) {
  return decode(Bitstream::parse(bytes), constants);
}

/// Base reconstruction of `image` at rate lambda.
inline Array3 base_reconstruction(const Array3& image, double lambda, const CodecConstants& c = {}) {
  return decode(encode(image, RateControl(lambda, c)), c).image;
}

}  // namespace resdiff
