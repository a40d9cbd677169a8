#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "m3v/binary_io.hpp"
#include "m3v/error.hpp"
#include "m3v/model/autoencoder.hpp"
#include "m3v/model/optim.hpp"
#include "m3v/pipeline.hpp"

namespace m3v {

// Everything a CLI run can be configured with.
struct PipelineConfig {
  PipelineOptions pipeline;
  model::ModelConfig model;
  model::TrainConfig train;

  // --seed: one value for the mask, model and data-order seeds.
  void set_seed(std::uint64_t s) {
    pipeline.mask_seed = s;
    model.seed = s;
    train.data_seed = s;
  }

  void validate() const {
    try {
      pipeline.flow.validate();
      pipeline.target.validate();
      if (!(pipeline.mask_ratio > 0.0 && pipeline.mask_ratio < 1.0)) {
        throw InvalidArgument("mask.ratio must lie in (0, 1)");
      }
      if (pipeline.patch.t < 1 || pipeline.patch.h < 1 || pipeline.patch.w < 1) {
        throw InvalidArgument("patch dimensions must be positive");
      }
      if (kClipLength % pipeline.patch.t) throw InvalidArgument("patch.t must divide 16");
      if (pipeline.s_rgb < 1) throw InvalidArgument("sampling.s_rgb must be >= 1");
      if (pipeline.offset < 0) throw InvalidArgument("sampling.offset must be >= 0");
      if (pipeline.threads < 1) throw InvalidArgument("threads must be >= 1");
      auto m = model;
      m.patch_dim = m.prediction_dim = 1;  // filled in from data later
      m.validate();
      train.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("bad value \"" + std::string(v) + "\" for " + std::string(key));
  }
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  // from_chars for double is missing from older libstdc++.
  std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) {
    throw ConfigError("bad value \"" + s + "\" for " + std::string(key));
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean \"" + std::string(v) + "\" for " + std::string(key));
}

}  // namespace detail

using ConfigSetter = std::function<void(PipelineConfig&, std::string_view)>;

inline const std::map<std::string, ConfigSetter, std::less<>>& config_keys() {
  using detail::parse_bool;
  using detail::parse_number;
  using detail::parse_real;
  static const std::map<std::string, ConfigSetter, std::less<>> keys = {
      {"flow.pyramid_levels", [](auto& c, auto v) { c.pipeline.flow.pyramid_levels = parse_number<int>("flow.pyramid_levels", v); }},
      {"flow.pyramid_scale", [](auto& c, auto v) { c.pipeline.flow.pyramid_scale = parse_real("flow.pyramid_scale", v); }},
      {"flow.window_radius", [](auto& c, auto v) { c.pipeline.flow.window_radius = parse_number<int>("flow.window_radius", v); }},
      {"flow.iterations", [](auto& c, auto v) { c.pipeline.flow.iterations_per_level = parse_number<int>("flow.iterations", v); }},
      {"flow.polynomial_sigma", [](auto& c, auto v) { c.pipeline.flow.polynomial_sigma = parse_real("flow.polynomial_sigma", v); }},
      {"flow.bound", [](auto& c, auto v) { c.pipeline.flow.flow_bound = parse_real("flow.bound", v); }},
      {"camera.compensate", [](auto& c, auto v) { c.pipeline.compensate_camera = parse_bool("camera.compensate", v); }},
      {"camera.inlier_threshold", [](auto& c, auto v) { c.pipeline.camera.inlier_threshold = parse_real("camera.inlier_threshold", v); }},
      {"camera.ransac_iterations", [](auto& c, auto v) { c.pipeline.camera.ransac_iterations = parse_number<int>("camera.ransac_iterations", v); }},
      {"camera.seed", [](auto& c, auto v) { c.pipeline.camera.ransac_seed = parse_number<std::uint64_t>("camera.seed", v); }},
      {"target.kind", [](auto& c, auto v) {
         try {
           c.pipeline.target.kind = parse_target_kind(v);
         } catch (const InvalidArgument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"target.L", [](auto& c, auto v) { c.pipeline.target.L = parse_number<int>("target.L", v); }},
      {"target.K", [](auto& c, auto v) { c.pipeline.target.K = parse_number<int>("target.K", v); }},
      {"patch.t", [](auto& c, auto v) { c.pipeline.patch.t = parse_number<int>("patch.t", v); }},
      {"patch.h", [](auto& c, auto v) { c.pipeline.patch.h = parse_number<int>("patch.h", v); }},
      {"patch.w", [](auto& c, auto v) { c.pipeline.patch.w = parse_number<int>("patch.w", v); }},
      {"mask.type", [](auto& c, auto v) {
         try {
           c.pipeline.mask_type = parse_mask_type(v);
         } catch (const InvalidArgument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"mask.ratio", [](auto& c, auto v) { c.pipeline.mask_ratio = parse_real("mask.ratio", v); }},
      {"mask.seed", [](auto& c, auto v) { c.pipeline.mask_seed = parse_number<std::uint64_t>("mask.seed", v); }},
      {"mask.all_patches", [](auto& c, auto v) { c.pipeline.all_patches = parse_bool("mask.all_patches", v); }},
      {"sampling.s_rgb", [](auto& c, auto v) { c.pipeline.s_rgb = parse_number<int>("sampling.s_rgb", v); }},
      {"sampling.offset", [](auto& c, auto v) { c.pipeline.offset = parse_number<int>("sampling.offset", v); }},
      {"sampling.interpolate", [](auto& c, auto v) { c.pipeline.interpolate = parse_bool("sampling.interpolate", v); }},
      {"model.embed_dim", [](auto& c, auto v) { c.model.embed_dim = parse_number<int>("model.embed_dim", v); }},
      {"model.heads", [](auto& c, auto v) { c.model.heads = parse_number<int>("model.heads", v); }},
      {"model.encoder_depth", [](auto& c, auto v) { c.model.encoder_depth = parse_number<int>("model.encoder_depth", v); }},
      {"model.decoder_depth", [](auto& c, auto v) { c.model.decoder_depth = parse_number<int>("model.decoder_depth", v); }},
      {"model.decoder_dim", [](auto& c, auto v) { c.model.decoder_dim = parse_number<int>("model.decoder_dim", v); }},
      {"model.decoder_heads", [](auto& c, auto v) { c.model.decoder_heads = parse_number<int>("model.decoder_heads", v); }},
      {"model.mlp_ratio", [](auto& c, auto v) { c.model.mlp_ratio = parse_number<int>("model.mlp_ratio", v); }},
      {"model.seed", [](auto& c, auto v) { c.model.seed = parse_number<std::uint64_t>("model.seed", v); }},
      {"train.lr", [](auto& c, auto v) { c.train.lr = parse_real("train.lr", v); }},
      {"train.beta1", [](auto& c, auto v) { c.train.beta1 = parse_real("train.beta1", v); }},
      {"train.beta2", [](auto& c, auto v) { c.train.beta2 = parse_real("train.beta2", v); }},
      {"train.weight_decay", [](auto& c, auto v) { c.train.weight_decay = parse_real("train.weight_decay", v); }},
      {"train.batch_size", [](auto& c, auto v) { c.train.batch_size = parse_number<int>("train.batch_size", v); }},
      {"train.epochs", [](auto& c, auto v) { c.train.epochs = parse_number<int>("train.epochs", v); }},
      {"train.warmup_epochs", [](auto& c, auto v) { c.train.warmup_epochs = parse_number<int>("train.warmup_epochs", v); }},
      {"train.cosine", [](auto& c, auto v) { c.train.cosine = parse_bool("train.cosine", v); }},
      {"train.min_lr", [](auto& c, auto v) { c.train.min_lr = parse_real("train.min_lr", v); }},
      {"train.resample_masks", [](auto& c, auto v) { c.train.resample_masks = parse_bool("train.resample_masks", v); }},
      {"train.data_seed", [](auto& c, auto v) { c.train.data_seed = parse_number<std::uint64_t>("train.data_seed", v); }},
  };
  return keys;
}

// Applies one key=value assignment.
inline void set_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value) {
  const auto& keys = config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown configuration key \"" + std::string(key) + "\"");
  it->second(cfg, value);
}

// Flat "key = value" text; '#' starts a comment. Unknown or repeated keys
// and malformed values are rejected with the offending line number.
inline PipelineConfig parse_config(std::string_view text, PipelineConfig cfg = {}) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(where + "duplicate key \"" + std::string(key) + "\"");
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  const Bytes bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace m3v
