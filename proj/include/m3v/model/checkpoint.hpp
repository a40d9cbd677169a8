#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "m3v/binary_io.hpp"
#include "m3v/error.hpp"
#include "m3v/model/autoencoder.hpp"

namespace m3v::model {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::string config;  // key=value lines
  std::vector<NamedTensor> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// "M3CK", u16 version, u32 config length, config text, u32 tensor count;
// per tensor u16 name length, name, u8 rank, rank x u32 dims, f32 payload.
inline Bytes encode_m3ck(const Checkpoint& ck) {
  ByteWriter w;
  w.raw("M3CK");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(ck.config.size()));
  w.raw(ck.config);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.name.size() > 0xffff || t.shape.size() > 0xff) {
      throw InvalidArgument("tensor name or rank too large for M3CK");
    }
    std::size_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != t.values.size()) throw InvalidArgument("tensor " + t.name + ": shape/payload mismatch");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(d);
    for (float v : t.values) w.f32(v);
  }
  return std::move(w).bytes();
}

inline Checkpoint decode_m3ck(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("M3CK");
  r.expect_version(1);
  Checkpoint ck;
  const auto clen = r.u32();
  const auto cfg = r.take(clen);
  ck.config.assign(cfg.begin(), cfg.end());
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto nlen = r.u16();
    const auto name = r.take(nlen);
    t.name.assign(name.begin(), name.end());
    const auto rank = r.u8();
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    if (r.remaining() / 4 < n) {
      throw FormatError(FormatErrorKind::kTruncated, r.offset(), "tensor " + t.name);
    }
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    ck.tensors.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError(FormatErrorKind::kMalformed, r.offset(), "trailing bytes");
  return ck;
}

inline std::string config_text(const ModelConfig& c) {
  std::ostringstream s;
  s << "embed_dim=" << c.embed_dim << "\nheads=" << c.heads << "\nencoder_depth=" << c.encoder_depth
    << "\ndecoder_depth=" << c.decoder_depth << "\ndecoder_dim=" << c.decoder_dim
    << "\ndecoder_heads=" << c.decoder_heads << "\nmlp_ratio=" << c.mlp_ratio
    << "\ngrid_t=" << c.grid_t << "\ngrid_h=" << c.grid_h << "\ngrid_w=" << c.grid_w
    << "\npatch_dim=" << c.patch_dim << "\nprediction_dim=" << c.prediction_dim
    << "\nseed=" << c.seed << "\n";
  return s.str();
}

inline ModelConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("checkpoint config line without '='");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw InvalidArgument(std::string("checkpoint config lacks ") + k);
    return it->second;
  };
  ModelConfig c;
  c.embed_dim = std::stoi(get("embed_dim"));
  c.heads = std::stoi(get("heads"));
  c.encoder_depth = std::stoi(get("encoder_depth"));
  c.decoder_depth = std::stoi(get("decoder_depth"));
  c.decoder_dim = std::stoi(get("decoder_dim"));
  c.decoder_heads = std::stoi(get("decoder_heads"));
  c.mlp_ratio = std::stoi(get("mlp_ratio"));
  c.grid_t = std::stoi(get("grid_t"));
  c.grid_h = std::stoi(get("grid_h"));
  c.grid_w = std::stoi(get("grid_w"));
  c.patch_dim = std::stoi(get("patch_dim"));
  c.prediction_dim = std::stoi(get("prediction_dim"));
  c.seed = std::stoull(get("seed"));
  return c;
}

template <typename T>
Checkpoint make_checkpoint(MaskedAutoencoder<T>& m) {
  Checkpoint ck;
  ck.config = config_text(m.config());
  m.visit([&](Param<T>& p) {
    NamedTensor t;
    t.name = p.name;
    for (int d : p.shape) t.shape.push_back(static_cast<std::uint32_t>(d));
    t.values.assign(p.value.begin(), p.value.end());
    ck.tensors.push_back(std::move(t));
  });
  return ck;
}

template <typename T>
MaskedAutoencoder<T> load_checkpoint(const Checkpoint& ck) {
  MaskedAutoencoder<T> m(parse_config_text(ck.config));
  auto ps = m.params();
  if (ps.size() != ck.tensors.size()) throw InvalidArgument("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& t = ck.tensors[i];
    if (t.name != ps[i]->name || t.values.size() != ps[i]->size()) {
      throw InvalidArgument("checkpoint tensor " + t.name + " does not match the model");
    }
    ps[i]->value.assign(t.values.begin(), t.values.end());
  }
  return m;
}

}  // namespace m3v::model
