#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "m3v/error.hpp"
#include "m3v/model/layers.hpp"

namespace m3v::model {

struct ModelConfig {
  int embed_dim = 64;
  int heads = 4;
  int encoder_depth = 4;
  int decoder_depth = 1;
  int decoder_dim = 32;
  int decoder_heads = 4;
  int mlp_ratio = 4;
  // Token grid and sizes, filled in from the data.
  int grid_t = 8;
  int grid_h = 2;
  int grid_w = 2;
  int patch_dim = 0;
  int prediction_dim = 0;
  std::uint64_t seed = 0;

  int tokens() const { return grid_t * grid_h * grid_w; }

  void validate() const {
    if (embed_dim < 1 || heads < 1 || embed_dim % heads) {
      throw InvalidArgument("embed_dim must be a positive multiple of heads");
    }
    if (decoder_dim < 1 || decoder_heads < 1 || decoder_dim % decoder_heads) {
      throw InvalidArgument("decoder_dim must be a positive multiple of decoder_heads");
    }
    if (encoder_depth < 1 || decoder_depth < 1) throw InvalidArgument("depths must be >= 1");
    if (mlp_ratio < 1) throw InvalidArgument("mlp_ratio must be >= 1");
    if (grid_t < 1 || grid_h < 1 || grid_w < 1) throw InvalidArgument("token grid is empty");
    if (patch_dim < 1 || prediction_dim < 1) {
      throw InvalidArgument("patch_dim and prediction_dim must be positive");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Fixed sinusoidal encoding factorized over (t, y, x): 2*floor(dim/6)
// channels each for x and y, the remainder for t. Each axis block holds
// interleaved sin/cos pairs at geometric frequencies.
inline std::vector<double> sincos_position_table(int gt, int gh, int gw, int dim) {
  const int dxy = 2 * (dim / 6);
  const int dt = dim - 2 * dxy;
  std::vector<double> table(static_cast<std::size_t>(gt) * gh * gw * dim, 0.0);
  auto fill = [](double* out, int width, double pos) {
    for (int c = 0; c < width; ++c) {
      const int pair = c / 2;
      const double freq = std::pow(10000.0, -2.0 * pair / std::max(width, 1));
      out[c] = c % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  };
  for (int t = 0; t < gt; ++t)
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        double* row = table.data() + ((static_cast<std::size_t>(t) * gh + y) * gw + x) * dim;
        fill(row, dxy, x);
        fill(row + dxy, dxy, y);
        fill(row + 2 * dxy, dt, t);
      }
  return table;
}

// Masked autoencoder over a t x h x w token grid: the encoder sees only
// the visible tokens, the decoder sees encoded visible tokens plus a shared
// mask token at every masked position, and the head predicts one target
// vector per masked token.
template <typename T>
class MaskedAutoencoder {
 public:
  MaskedAutoencoder() = default;
  explicit MaskedAutoencoder(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    embed_ = Linear<T>("patch_embed", cfg.patch_dim, cfg.embed_dim);
    for (int i = 0; i < cfg.encoder_depth; ++i)
      encoder_.emplace_back("encoder." + std::to_string(i), cfg.embed_dim, cfg.heads,
                            cfg.mlp_ratio);
    enc_norm_ = LayerNorm<T>("encoder_norm", cfg.embed_dim);
    dec_embed_ = Linear<T>("decoder_embed", cfg.embed_dim, cfg.decoder_dim);
    mask_token_ = Param<T>("mask_token", {cfg.decoder_dim});
    for (int i = 0; i < cfg.decoder_depth; ++i)
      decoder_.emplace_back("decoder." + std::to_string(i), cfg.decoder_dim, cfg.decoder_heads,
                            cfg.mlp_ratio);
    dec_norm_ = LayerNorm<T>("decoder_norm", cfg.decoder_dim);
    head_ = Linear<T>("head", cfg.decoder_dim, cfg.prediction_dim);

    std::mt19937_64 rng(cfg.seed);
    embed_.init(rng);
    for (auto& b : encoder_) b.init(rng);
    dec_embed_.init(rng);
    for (auto& b : decoder_) b.init(rng);
    head_.init(rng);

    auto cast = [](const std::vector<double>& src) { return std::vector<T>(src.begin(), src.end()); };
    enc_pos_ = cast(sincos_position_table(cfg.grid_t, cfg.grid_h, cfg.grid_w, cfg.embed_dim));
    dec_pos_ = cast(sincos_position_table(cfg.grid_t, cfg.grid_h, cfg.grid_w, cfg.decoder_dim));
  }

  const ModelConfig& config() const noexcept { return cfg_; }

  template <typename F>
  void visit(F&& f) {
    embed_.visit(f);
    for (auto& b : encoder_) b.visit(f);
    enc_norm_.visit(f);
    dec_embed_.visit(f);
    f(mask_token_);
    for (auto& b : decoder_) b.visit(f);
    dec_norm_.visit(f);
    head_.visit(f);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    visit([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](Param<T>& p) { n += p.size(); });
    return n;
  }

  void zero_grad() {
    visit([](Param<T>& p) { p.zero_grad(); });
  }

  // `tokens` holds one row per grid position. `visible` lists the token
  // indices fed to the encoder (any order); `masked` the indices to
  // predict, in output row order.
  Mat<T> forward(const Mat<T>& tokens, std::span<const std::size_t> visible,
                 std::span<const std::size_t> masked) {
    check_indices(tokens, visible, masked);
    visible_.assign(visible.begin(), visible.end());
    masked_.assign(masked.begin(), masked.end());
    last_encoder_tokens_ = visible.size();

    Mat<T> x = gather_embed(tokens, visible);
    for (auto& b : encoder_) x = b.forward(x);
    x = enc_norm_.forward(x);

    // Decoder sequence: visible tokens first, then masked ones.
    const Mat<T> proj = dec_embed_.forward(x);
    const int dd = cfg_.decoder_dim;
    const int nv = static_cast<int>(visible.size());
    Mat<T> seq(nv + static_cast<int>(masked.size()), dd);
    for (int r = 0; r < nv; ++r)
      for (int c = 0; c < dd; ++c) seq(r, c) = proj(r, c) + dec_pos(visible[r], c);
    for (std::size_t m = 0; m < masked.size(); ++m)
      for (int c = 0; c < dd; ++c)
        seq(nv + static_cast<int>(m), c) = mask_token_.value[c] + dec_pos(masked[m], c);
    for (auto& b : decoder_) seq = b.forward(seq);
    seq = dec_norm_.forward(seq);

    Mat<T> tail(static_cast<int>(masked.size()), dd);
    std::copy(seq.row(nv), seq.row(nv) + tail.d.size(), tail.d.begin());
    return head_.forward(tail);
  }

  // Accumulates parameter gradients for the last forward call.
  void backward(const Mat<T>& dpred) {
    const int dd = cfg_.decoder_dim;
    const int nv = static_cast<int>(visible_.size());
    const int nm = static_cast<int>(masked_.size());
    const Mat<T> dtail = head_.backward(dpred);
    Mat<T> dseq(nv + nm, dd);
    std::copy(dtail.d.begin(), dtail.d.end(), dseq.row(nv));
    dseq = dec_norm_.backward(dseq);
    for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) dseq = it->backward(dseq);
    for (int m = 0; m < nm; ++m)
      for (int c = 0; c < dd; ++c) mask_token_.grad[c] += dseq(nv + m, c);
    Mat<T> dproj(nv, dd);
    std::copy(dseq.d.begin(), dseq.d.begin() + dproj.d.size(), dproj.d.begin());
    Mat<T> dx = dec_embed_.backward(dproj);
    dx = enc_norm_.backward(dx);
    for (auto it = encoder_.rbegin(); it != encoder_.rend(); ++it) dx = it->backward(dx);
    embed_.backward(dx);
  }

  // Mean-pooled encoder output with every token visible.
  std::vector<T> features(const Mat<T>& tokens) {
    std::vector<std::size_t> all(static_cast<std::size_t>(tokens.rows));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    check_indices(tokens, all, {});
    last_encoder_tokens_ = all.size();
    Mat<T> x = gather_embed(tokens, all);
    for (auto& b : encoder_) x = b.forward(x);
    x = enc_norm_.forward(x);
    std::vector<T> pooled(cfg_.embed_dim, T(0));
    for (int r = 0; r < x.rows; ++r)
      for (int c = 0; c < x.cols; ++c) pooled[c] += x(r, c);
    for (auto& v : pooled) v /= static_cast<T>(x.rows);
    return pooled;
  }

  // Tokens entering the encoder on the last call.
  std::size_t last_encoder_tokens() const noexcept { return last_encoder_tokens_; }

  // Rows attended over by encoder attention layers since construction.
  std::uint64_t encoder_attention_tokens() const {
    std::uint64_t n = 0;
    for (const auto& b : encoder_) n += b.attn.tokens_seen;
    return n;
  }
  std::uint64_t encoder_attention_pairs() const {
    std::uint64_t n = 0;
    for (const auto& b : encoder_) n += b.attn.pairs_scored;
    return n;
  }

 private:
  T dec_pos(std::size_t token, int c) const {
    return dec_pos_[token * static_cast<std::size_t>(cfg_.decoder_dim) + c];
  }

  void check_indices(const Mat<T>& tokens, std::span<const std::size_t> visible,
                     std::span<const std::size_t> masked) const {
    if (tokens.rows != cfg_.tokens() || tokens.cols != cfg_.patch_dim) {
      throw InvalidArgument("token matrix is " + std::to_string(tokens.rows) + "x" +
                            std::to_string(tokens.cols) + ", model expects " +
                            std::to_string(cfg_.tokens()) + "x" + std::to_string(cfg_.patch_dim));
    }
    if (visible.empty()) throw InvalidArgument("at least one visible token is required");
    std::vector<std::uint8_t> seen(tokens.rows, 0);
    for (auto s : {visible, masked})
      for (auto i : s) {
        if (i >= static_cast<std::size_t>(tokens.rows) || seen[i]) {
          throw InvalidArgument("token index out of range or repeated");
        }
        seen[i] = 1;
      }
  }

  Mat<T> gather_embed(const Mat<T>& tokens, std::span<const std::size_t> idx) {
    Mat<T> in(static_cast<int>(idx.size()), tokens.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(tokens.row(static_cast<int>(idx[r])), tokens.row(static_cast<int>(idx[r])) + tokens.cols,
                in.row(static_cast<int>(r)));
    Mat<T> x = embed_.forward(in);
    const int d = cfg_.embed_dim;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < d; ++c)
        x(static_cast<int>(r), c) += enc_pos_[idx[r] * static_cast<std::size_t>(d) + c];
    return x;
  }

  ModelConfig cfg_;
  Linear<T> embed_;
  std::vector<Block<T>> encoder_;
  LayerNorm<T> enc_norm_;
  Linear<T> dec_embed_;
  Param<T> mask_token_;
  std::vector<Block<T>> decoder_;
  LayerNorm<T> dec_norm_;
  Linear<T> head_;
  std::vector<T> enc_pos_, dec_pos_;
  std::vector<std::size_t> visible_, masked_;
  std::size_t last_encoder_tokens_ = 0;
};

// Copies parameter values between models of possibly different scalar types.
template <typename To, typename From>
void copy_parameters(MaskedAutoencoder<To>& dst, MaskedAutoencoder<From>& src) {
  auto d = dst.params();
  auto s = src.params();
  if (d.size() != s.size()) throw InvalidArgument("models differ in structure");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i]->size() != s[i]->size()) throw InvalidArgument("models differ in structure");
    for (std::size_t j = 0; j < d[i]->size(); ++j) d[i]->value[j] = static_cast<To>(s[i]->value[j]);
  }
}

}  // namespace m3v::model
