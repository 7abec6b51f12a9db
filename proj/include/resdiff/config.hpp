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

// Flat "key = value" toolkit configuration. Unknown keys, duplicate keys and
// malformed values are errors.

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "resdiff/codec.hpp"
#include "resdiff/common.hpp"
#include "resdiff/denoiser.hpp"
#include "resdiff/image_io.hpp"
#include "resdiff/sampler.hpp"
#include "resdiff/schedule.hpp"
#include "resdiff/train.hpp"

namespace resdiff {

struct SamplerSettings {
  int steps = kDefaultSamplingSteps;
  int start_index = kDefaultSamplingSteps - kDefaultLateStartSteps;
  int stop_index = kDefaultSamplingSteps;
  double eta = 0.0;
  Thresholding thresholding = Thresholding::kFixed;
  std::uint64_t seed = 0;

  bool operator==(const SamplerSettings&) const = default;
};

struct PathSettings {
  std::string corpus = "data/corpus";
  std::string checkpoint = "model.rdck";
  std::string thresholds = "thresholds.txt";

  bool operator==(const PathSettings&) const = default;
};

struct ToolkitConfig {
  ScheduleSpec schedule;
  CodecConstants codec;
  ModelConfig model;
  TrainConfig train;
  SamplerSettings sampler;
  PathSettings paths;

  bool operator==(const ToolkitConfig&) const = default;

  /// Sampler configuration over the schedule's T. The table is left empty.
  SamplerConfig sampler_config() const {
    SamplerConfig c;
    c.plan = respace(schedule.T, sampler.steps);
    c.start_index = static_cast<std::size_t>(sampler.start_index);
    c.stop_index = static_cast<std::size_t>(sampler.stop_index);
    c.eta = sampler.eta;
    c.thresholding = sampler.thresholding;
    c.seed = sampler.seed;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

struct Field {
  std::function<void(ToolkitConfig&, const std::string&)> set;
  std::function<std::string(const ToolkitConfig&)> get;
};

template <typename E>
E parse_enum(const std::string& key, const std::string& v, E (*fn)(const std::string&)) {
  try {
    return fn(v);
  } catch (const ParameterError&) {
    throw ConfigError("config: bad value '" + v + "' for " + key);
  }
}

#define RESDIFF_NUM_FIELD(name, member, type)                                                            \
  {                                                                                                      \
    name, Field {                                                                                        \
      [](ToolkitConfig& c, const std::string& v) { c.member = parse_number<type>(name, v); },            \
          [](const ToolkitConfig& c) {                                                                   \
            if constexpr (std::is_floating_point_v<type>) return format_double(c.member);                \
            else return std::to_string(c.member);                                                        \
          }                                                                                              \
    }                                                                                                    \
  }

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"schedule.kind",
       {[](ToolkitConfig& c, const std::string& v) {
          c.schedule.kind = parse_enum("schedule.kind", v, &schedule_kind_from_string);
        },
        [](const ToolkitConfig& c) { return to_string(c.schedule.kind); }}},
      RESDIFF_NUM_FIELD("schedule.T", schedule.T, int),
      RESDIFF_NUM_FIELD("schedule.beta1", schedule.beta1, double),
      RESDIFF_NUM_FIELD("schedule.betaT", schedule.betaT, double),
      RESDIFF_NUM_FIELD("schedule.L", schedule.L, double),
      RESDIFF_NUM_FIELD("schedule.p", schedule.p, double),
      RESDIFF_NUM_FIELD("codec.alpha_s", codec.alpha_s, double),
      RESDIFF_NUM_FIELD("codec.beta_s", codec.beta_s, double),
      RESDIFF_NUM_FIELD("codec.lambda_min", codec.lambda_min, double),
      RESDIFF_NUM_FIELD("codec.lambda_max", codec.lambda_max, double),
      RESDIFF_NUM_FIELD("model.width", model.width, int),
      RESDIFF_NUM_FIELD("model.init_seed", model.init_seed, std::uint64_t),
      RESDIFF_NUM_FIELD("train.lr", train.lr, double),
      RESDIFF_NUM_FIELD("train.batch_size", train.batch_size, int),
      RESDIFF_NUM_FIELD("train.steps", train.steps, int),
      RESDIFF_NUM_FIELD("train.lambda_perceptual", train.lambda_perceptual, double),
      {"train.weight_mode",
       {[](ToolkitConfig& c, const std::string& v) {
          c.train.weight_mode = parse_enum("train.weight_mode", v, &weight_mode_from_string);
        },
        [](const ToolkitConfig& c) { return to_string(c.train.weight_mode); }}},
      RESDIFF_NUM_FIELD("train.seed", train.seed, std::uint64_t),
      RESDIFF_NUM_FIELD("train.crop", train.crop, int),
      {"train.flips",
       {[](ToolkitConfig& c, const std::string& v) { c.train.flips = parse_bool("train.flips", v); },
        [](const ToolkitConfig& c) { return std::string(c.train.flips ? "true" : "false"); }}},
      RESDIFF_NUM_FIELD("sampler.steps", sampler.steps, int),
      RESDIFF_NUM_FIELD("sampler.start_index", sampler.start_index, int),
      RESDIFF_NUM_FIELD("sampler.stop_index", sampler.stop_index, int),
      RESDIFF_NUM_FIELD("sampler.eta", sampler.eta, double),
      {"sampler.thresholding",
       {[](ToolkitConfig& c, const std::string& v) {
          c.sampler.thresholding = parse_enum("sampler.thresholding", v, &thresholding_from_string);
        },
        [](const ToolkitConfig& c) { return to_string(c.sampler.thresholding); }}},
      RESDIFF_NUM_FIELD("sampler.seed", sampler.seed, std::uint64_t),
      {"paths.corpus",
       {[](ToolkitConfig& c, const std::string& v) { c.paths.corpus = v; },
        [](const ToolkitConfig& c) { return c.paths.corpus; }}},
      {"paths.checkpoint",
       {[](ToolkitConfig& c, const std::string& v) { c.paths.checkpoint = v; },
        [](const ToolkitConfig& c) { return c.paths.checkpoint; }}},
      {"paths.thresholds",
       {[](ToolkitConfig& c, const std::string& v) { c.paths.thresholds = v; },
        [](const ToolkitConfig& c) { return c.paths.thresholds; }}},
  };
  return f;
}

#undef RESDIFF_NUM_FIELD

}  // namespace detail

inline void validate(const ToolkitConfig& c) {
  try {
    validate(c.schedule);
    validate(c.train);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(c.codec.lambda_min > 0.0 && c.codec.lambda_min < c.codec.lambda_max)) {
    throw ConfigError("config: need 0 < codec.lambda_min < codec.lambda_max");
  }
  if (!(c.codec.alpha_s > 0.0 && c.codec.beta_s > 0.0)) throw ConfigError("config: codec scale constants must be positive");
  if (c.model.width < 2 || c.model.width % 2) throw ConfigError("config: model.width must be even and >= 2");
  if (c.sampler.steps < 1 || c.sampler.steps > c.schedule.T) {
    throw ConfigError("config: sampler.steps must lie in [1, schedule.T]");
  }
  if (c.sampler.start_index < 0 || c.sampler.stop_index < 0) throw ConfigError("config: sampler indices must be >= 0");
  // The table itself is loaded from paths.thresholds when needed.
  SamplerConfig sc = c.sampler_config();
  if (sc.thresholding == Thresholding::kTable) sc.table = ThresholdTable({{1.0, 1.0}}, 0.5);
  validate(sc);
}

/// Parses and validates. Lines are "key = value"; '#' starts a comment line.
inline ToolkitConfig parse_config(const std::string& text) {
  ToolkitConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    const auto it = detail::fields().find(key);
    if (it == detail::fields().end()) throw ConfigError("config: unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    it->second.set(c, value);
  }
  validate(c);
  return c;
}

/// Every key, sorted, one per line. parse_config(to_text(c)) == c.
inline std::string to_text(const ToolkitConfig& c) {
  std::string out = "# resdiff config v1\n";
  for (const auto& [key, f] : detail::fields()) out += key + " = " + f.get(c) + "\n";
  return out;
}

inline ToolkitConfig load_config(const std::string& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace resdiff
