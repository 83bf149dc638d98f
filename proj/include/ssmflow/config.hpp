// Copyright 2026 the ssmflow authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <map>
#include <sstream>

#include "ssmflow/common.hpp"

namespace ssmflow {

/// Model hyperparameters. Serializes to a flat key=value block ('#' starts a
/// comment) which is embedded verbatim in weight files.
struct ModelConfig {
  index_t dim = 128;           // matchable feature width D
  index_t downsample = 8;      // backbone stride s, 4 or 8
  index_t blocks = 8;          // enhancer depth
  index_t state_size = 16;     // SSM state N
  index_t expand = 2;          // self-block expansion
  index_t conv_width = 4;      // depthwise conv taps
  index_t mlp_ratio = 4;
  index_t iterations = 2;      // refinement steps N_iter
  bool use_aga = true;         // attention aggregation (vs concatenation)
  bool use_self = true;
  bool use_cross = true;
  bool use_mlp = true;
  bool use_pos = true;
  index_t hidden_dim = 128;    // refiner Dh
  index_t motion_dim = 64;     // refiner Dm
  index_t lookup_radius = 4;
  index_t refiner_depth = 1;   // scan layers per refinement step
  bool refiner_bidirectional = true;
  index_t pos_height = 8;      // positional-embedding native resolution
  index_t pos_width = 8;
  index_t token_cap = 4096;    // matching H*W guard
  std::string precision = "f32";

  void validate() const {
    auto positive = [](index_t v, const char* name) {
      if (v < 1) throw ValueError(std::string("ModelConfig: ") + name + " must be positive");
    };
    positive(dim, "dim");
    positive(state_size, "state_size");
    positive(expand, "expand");
    positive(conv_width, "conv_width");
    positive(mlp_ratio, "mlp_ratio");
    positive(hidden_dim, "hidden_dim");
    positive(motion_dim, "motion_dim");
    positive(refiner_depth, "refiner_depth");
    positive(pos_height, "pos_height");
    positive(pos_width, "pos_width");
    positive(token_cap, "token_cap");
    if (blocks < 0) throw ValueError("ModelConfig: blocks must be >= 0");
    if (iterations < 0) throw ValueError("ModelConfig: iterations must be >= 0");
    if (lookup_radius < 0) throw ValueError("ModelConfig: lookup_radius must be >= 0");
    if (downsample != 4 && downsample != 8) {
      throw ValueError("ModelConfig: downsample must be 4 or 8, got " + std::to_string(downsample));
    }
    if (precision != "f32" && precision != "f64") {
      throw ValueError("ModelConfig: precision must be f32 or f64, got '" + precision + "'");
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "dim=" << dim << "\n";
    os << "downsample=" << downsample << "\n";
    os << "blocks=" << blocks << "\n";
    os << "state_size=" << state_size << "\n";
    os << "expand=" << expand << "\n";
    os << "conv_width=" << conv_width << "\n";
    os << "mlp_ratio=" << mlp_ratio << "\n";
    os << "iterations=" << iterations << "\n";
    os << "use_aga=" << (use_aga ? 1 : 0) << "\n";
    os << "use_self=" << (use_self ? 1 : 0) << "\n";
    os << "use_cross=" << (use_cross ? 1 : 0) << "\n";
    os << "use_mlp=" << (use_mlp ? 1 : 0) << "\n";
    os << "use_pos=" << (use_pos ? 1 : 0) << "\n";
    os << "hidden_dim=" << hidden_dim << "\n";
    os << "motion_dim=" << motion_dim << "\n";
    os << "lookup_radius=" << lookup_radius << "\n";
    os << "refiner_depth=" << refiner_depth << "\n";
    os << "refiner_bidirectional=" << (refiner_bidirectional ? 1 : 0) << "\n";
    os << "pos_height=" << pos_height << "\n";
    os << "pos_width=" << pos_width << "\n";
    os << "token_cap=" << token_cap << "\n";
    os << "precision=" << precision << "\n";
    return os.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
        line.pop_back();
      }
      std::size_t start = line.find_first_not_of(" \t");
      if (start == std::string::npos) continue;
      line = line.substr(start);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ValueError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      cfg.set(key, value, lineno);
    }
    cfg.validate();
    return cfg;
  }

  void set(const std::string& key, const std::string& value, int lineno = 0) {
    auto as_int = [&]() -> index_t {
      try {
        return static_cast<index_t>(std::stoll(value));
      } catch (...) {
        throw ValueError("config line " + std::to_string(lineno) + ": bad integer '" + value +
                         "' for " + key);
      }
    };
    auto as_bool = [&]() { return as_int() != 0; };
    if (key == "dim") dim = as_int();
    else if (key == "downsample") downsample = as_int();
    else if (key == "blocks") blocks = as_int();
    else if (key == "state_size") state_size = as_int();
    else if (key == "expand") expand = as_int();
    else if (key == "conv_width") conv_width = as_int();
    else if (key == "mlp_ratio") mlp_ratio = as_int();
    else if (key == "iterations") iterations = as_int();
    else if (key == "use_aga") use_aga = as_bool();
    else if (key == "use_self") use_self = as_bool();
    else if (key == "use_cross") use_cross = as_bool();
    else if (key == "use_mlp") use_mlp = as_bool();
    else if (key == "use_pos") use_pos = as_bool();
    else if (key == "hidden_dim") hidden_dim = as_int();
    else if (key == "motion_dim") motion_dim = as_int();
    else if (key == "lookup_radius") lookup_radius = as_int();
    else if (key == "refiner_depth") refiner_depth = as_int();
    else if (key == "refiner_bidirectional") refiner_bidirectional = as_bool();
    else if (key == "pos_height") pos_height = as_int();
    else if (key == "pos_width") pos_width = as_int();
    else if (key == "token_cap") token_cap = as_int();
    else if (key == "precision") precision = value;
    else throw ValueError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }

  /// Name of the first differing field, or empty when equal.
  std::string first_mismatch(const ModelConfig& other) const {
    if (dim != other.dim) return "dim";
    if (downsample != other.downsample) return "downsample";
    if (blocks != other.blocks) return "blocks";
    if (state_size != other.state_size) return "state_size";
    if (expand != other.expand) return "expand";
    if (conv_width != other.conv_width) return "conv_width";
    if (mlp_ratio != other.mlp_ratio) return "mlp_ratio";
    if (iterations != other.iterations) return "iterations";
    if (use_aga != other.use_aga) return "use_aga";
    if (use_self != other.use_self) return "use_self";
    if (use_cross != other.use_cross) return "use_cross";
    if (use_mlp != other.use_mlp) return "use_mlp";
    if (use_pos != other.use_pos) return "use_pos";
    if (hidden_dim != other.hidden_dim) return "hidden_dim";
    if (motion_dim != other.motion_dim) return "motion_dim";
    if (lookup_radius != other.lookup_radius) return "lookup_radius";
    if (refiner_depth != other.refiner_depth) return "refiner_depth";
    if (refiner_bidirectional != other.refiner_bidirectional) return "refiner_bidirectional";
    if (pos_height != other.pos_height) return "pos_height";
    if (pos_width != other.pos_width) return "pos_width";
    if (token_cap != other.token_cap) return "token_cap";
    if (precision != other.precision) return "precision";
    return {};
  }

  bool operator==(const ModelConfig& other) const { return first_mismatch(other).empty(); }
};

}  // namespace ssmflow
