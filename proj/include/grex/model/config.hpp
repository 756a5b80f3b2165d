// Copyright 2026 The grex Authors. All Rights Reserved.
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

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "grex/core/error.hpp"

namespace grex::model {

/// Number of target-count classes: 0, 1, 2, 3, 4, 5 and "more than 5".
inline constexpr int kCountClasses = 7;

/// Count class for a target count; everything above 5 falls into the last class.
inline int count_class(std::size_t n_targets) {
  return n_targets <= 5 ? static_cast<int>(n_targets) : kCountClasses - 1;
}

struct LossWeights {
  double mask = 2.0;
  double box = 5.0;
  double minimap = 0.2;
  double count = 1.0;
};

/// Toy-scale model configuration. The image encoder downsamples by 4, the
/// pixel decoder upsamples the feature map by 2.
struct ModelConfig {
  int channels = 64;
  int regions_per_side = 10;
  int image_size = 64;
  int feature_size = 16;
  int mask_size = 32;
  int text_len = 16;
  LossWeights lambda;

  int regions() const { return regions_per_side * regions_per_side; }

  /// Tiny configuration used for finite-difference checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.channels = 8;
    c.regions_per_side = 2;
    c.image_size = 32;
    c.feature_size = 8;
    c.mask_size = 16;
    c.text_len = 4;
    return c;
  }

  /// Throws InvalidArgument naming the offending field.
  void validate() const {
    auto need = [](bool ok, const char* field, const std::string& why) {
      if (!ok) throw InvalidArgument("invalid config field '" + std::string(field) + "': " + why);
    };
    need(channels >= 1, "channels", "must be positive");
    need(regions_per_side >= 1, "regions_per_side", "must be positive");
    need(image_size >= 4 && image_size % 4 == 0, "image_size", "must be a positive multiple of 4");
    need(feature_size * 4 == image_size, "feature_size", "must equal image_size / 4");
    need(mask_size == 2 * feature_size, "mask_size", "must equal 2 * feature_size");
    need(feature_size >= regions_per_side, "regions_per_side", "must not exceed feature_size");
    need(text_len >= 1, "text_len", "must be positive");
    need(lambda.mask >= 0, "lambda_mask", "must be non-negative");
    need(lambda.box >= 0, "lambda_box", "must be non-negative");
    need(lambda.minimap >= 0, "lambda_xr", "must be non-negative");
    need(lambda.count >= 0, "lambda_count", "must be non-negative");
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "channels = " << channels << "\n"
      << "regions_per_side = " << regions_per_side << "\n"
      << "image_size = " << image_size << "\n"
      << "feature_size = " << feature_size << "\n"
      << "mask_size = " << mask_size << "\n"
      << "text_len = " << text_len << "\n"
      << "lambda_mask = " << lambda.mask << "\n"
      << "lambda_box = " << lambda.box << "\n"
      << "lambda_xr = " << lambda.minimap << "\n"
      << "lambda_count = " << lambda.count << "\n";
    return o.str();
  }

  /// Parses `key = value` lines; `#` starts a comment. Unknown keys and
  /// malformed values are rejected with the field name.
  static ModelConfig from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos)
        throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      auto as_int = [&](int& dst) {
        std::size_t pos = 0;
        try {
          dst = std::stoi(val, &pos);
        } catch (...) {
          pos = 0;
        }
        if (pos == 0 || pos != val.size())
          throw InvalidArgument("invalid config field '" + key + "': not an integer: " + val);
      };
      auto as_real = [&](double& dst) {
        std::size_t pos = 0;
        try {
          dst = std::stod(val, &pos);
        } catch (...) {
          pos = 0;
        }
        if (pos == 0 || pos != val.size())
          throw InvalidArgument("invalid config field '" + key + "': not a number: " + val);
      };
      if (key == "channels") as_int(c.channels);
      else if (key == "regions_per_side") as_int(c.regions_per_side);
      else if (key == "image_size") as_int(c.image_size);
      else if (key == "feature_size") as_int(c.feature_size);
      else if (key == "mask_size") as_int(c.mask_size);
      else if (key == "text_len") as_int(c.text_len);
      else if (key == "lambda_mask") as_real(c.lambda.mask);
      else if (key == "lambda_box") as_real(c.lambda.box);
      else if (key == "lambda_xr") as_real(c.lambda.minimap);
      else if (key == "lambda_count") as_real(c.lambda.count);
      else throw InvalidArgument("unknown config field '" + key + "'");
    }
    c.validate();
    return c;
  }

  static ModelConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.to_text() == b.to_text();
  }
};

}  // namespace grex::model
