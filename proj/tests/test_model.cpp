#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "m3v/model/checkpoint.hpp"
#include "m3v/model/gradcheck.hpp"
#include "m3v/model/loss.hpp"
#include "m3v/model/optim.hpp"
#include "m3v/model/train.hpp"
#include "m3v/pipeline.hpp"
#include "m3v/synth.hpp"

using namespace m3v;
using namespace m3v::model;

namespace {

ModelConfig tiny_config(int patch_dim = 6, int prediction_dim = 5) {
  ModelConfig c;
  c.embed_dim = 8;
  c.heads = 1;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.decoder_dim = 8;
  c.decoder_heads = 1;
  c.mlp_ratio = 2;
  c.grid_t = 2;
  c.grid_h = 2;
  c.grid_w = 2;
  c.patch_dim = patch_dim;
  c.prediction_dim = prediction_dim;
  c.seed = 7;
  return c;
}

Mat<float> random_tokens(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Mat<float> t(c.tokens(), c.patch_dim);
  for (auto& v : t.d) v = n(rng);
  return t;
}

ToyDataset disk_dataset(TargetKind kind, int clips, std::uint64_t seed, double speed = 3.0) {
  synth::DiskDatasetParams dp;
  dp.clips = clips;
  dp.frames = 21;
  dp.speed = speed;
  const auto data = synth::make_disk_dataset(dp, seed);
  PipelineOptions o;
  o.patch = {2, 8, 8};
  o.s_rgb = 1;
  o.interpolate = true;
  o.all_patches = true;
  o.target.kind = kind;
  std::vector<FrameSequence> inputs;
  std::vector<ClipTargets> targets;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    o.mask_seed = seed * 1000 + i;
    targets.push_back(build_clip_targets(data[i].video, o));
    inputs.push_back(input_clip(data[i].video, targets.back().plan));
    labels.push_back(data[i].truth.label);
  }
  return make_toy_dataset(inputs, targets, labels);
}

ModelConfig small_model() {
  ModelConfig mc;
  mc.embed_dim = 16;
  mc.heads = 2;
  mc.encoder_depth = 1;
  mc.decoder_dim = 16;
  mc.decoder_heads = 2;
  mc.seed = 3;
  return mc;
}

}  // namespace

TEST(PositionTable, Layout) {
  const auto t = sincos_position_table(2, 3, 4, 14);
  ASSERT_EQ(t.size(), 2u * 3 * 4 * 14);
  // Token (0,0,0): sin(0)=0, cos(0)=1 in every block.
  for (int c = 0; c < 14; ++c) EXPECT_EQ(t[c], c % 2 == 0 ? 0.0 : 1.0);
  // x block is 2*floor(14/6)=4 wide: token x=1 has sin(1) in channel 0.
  EXPECT_NEAR(t[14], std::sin(1.0), 1e-12);
  // t block starts at channel 8; token t=1 is row 12.
  EXPECT_NEAR(t[12 * 14 + 8], std::sin(1.0), 1e-12);
}

TEST(Autoencoder, SingleMaskedPatchShape) {
  const auto cfg = tiny_config();
  MaskedAutoencoder<float> m(cfg);
  const std::vector<std::size_t> vis{0, 1, 2, 3, 4, 5, 6}, msk{7};
  const auto out = m.forward(random_tokens(cfg, 1), vis, msk);
  EXPECT_EQ(out.rows, 1);
  EXPECT_EQ(out.cols, cfg.prediction_dim);
}

TEST(Autoencoder, VisibleOrderDoesNotMatter) {
  const auto cfg = tiny_config();
  MaskedAutoencoder<float> m(cfg);
  const auto tok = random_tokens(cfg, 2);
  const std::vector<std::size_t> a{0, 2, 5, 6}, b{6, 0, 5, 2}, msk{1, 3, 4, 7};
  const auto pa = m.forward(tok, a, msk);
  const auto pb = m.forward(tok, b, msk);
  for (std::size_t i = 0; i < pa.d.size(); ++i) EXPECT_NEAR(pa.d[i], pb.d[i], 1e-5);
}

TEST(Autoencoder, DeterministicAndEncoderSeesVisibleOnly) {
  const auto cfg = tiny_config();
  MaskedAutoencoder<float> m1(cfg), m2(cfg);
  const auto tok = random_tokens(cfg, 3);
  const std::vector<std::size_t> vis{1, 4, 6}, msk{0, 2, 3, 5, 7};
  const auto p1 = m1.forward(tok, vis, msk);
  const auto p2 = m2.forward(tok, vis, msk);
  EXPECT_EQ(p1.d, p2.d);
  EXPECT_EQ(m1.last_encoder_tokens(), 3u);
  EXPECT_EQ(m1.encoder_attention_tokens(), 3u);
  EXPECT_EQ(m1.encoder_attention_pairs(), 9u);
}

TEST(Autoencoder, BadIndicesRejected) {
  const auto cfg = tiny_config();
  MaskedAutoencoder<float> m(cfg);
  const auto tok = random_tokens(cfg, 3);
  const std::vector<std::size_t> vis{1, 4}, dup{1, 2}, out{9};
  EXPECT_THROW(m.forward(tok, vis, dup), InvalidArgument);
  EXPECT_THROW(m.forward(tok, vis, out), InvalidArgument);
}

TEST(Loss, PerfectPrediction) {
  Mat<float> pred(1, 3);
  pred.d = {1, 2, 3};
  const std::vector<float> t{1, 2, 3};
  const std::vector<std::uint8_t> inc{1, 1, 1};
  const std::vector<LossItem> items{{t, inc, 0}};
  EXPECT_EQ(masked_motion_loss(pred, items).loss, 0.0);
}

TEST(Loss, TwoPatchHandExample) {
  Mat<float> pred(2, 264, 1.0f);
  const std::vector<float> target(264, 0.0f);
  const std::vector<std::uint8_t> valid(264, 1), invalid(264, 0);
  const std::vector<LossItem> items{{target, valid, 0}, {target, invalid, 4}};
  const auto r = masked_motion_loss(pred, items);
  EXPECT_EQ(r.loss, 1.0);
  EXPECT_EQ(r.included, 264u);
  EXPECT_EQ(r.excluded_trajectories, 4u);
  EXPECT_FALSE(r.nothing_included);
}

TEST(Loss, OneInvalidTrajectoryMatchesOracle) {
  TargetConfig cfg;
  const std::vector<std::uint8_t> validity{1, 1, 0, 1};
  const auto inc = component_mask(cfg, 264, validity);
  EXPECT_EQ(std::count(inc.begin(), inc.end(), 0), 66);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Mat<float> pred(1, 264);
  std::vector<float> t(264);
  for (auto& v : pred.d) v = n(rng);
  for (auto& v : t) v = n(rng);
  const std::vector<LossItem> items{{t, inc, 1}};
  std::vector<std::vector<double>> P{{pred.d.begin(), pred.d.end()}}, T{{t.begin(), t.end()}};
  std::vector<std::vector<bool>> I{{inc.begin(), inc.end()}};
  EXPECT_DOUBLE_EQ(masked_motion_loss(pred, items).loss, synth::masked_mean_oracle(P, T, I));
}

TEST(Loss, MatchesOracleOnSmallInstances) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::bernoulli_distribution keep(0.6);
  for (int rep = 0; rep < 200; ++rep) {
    const int patches = 1 + rep % 4;
    const int dim = 1 + static_cast<int>(rng() % 12);
    Mat<float> pred(patches, dim);
    for (auto& v : pred.d) v = n(rng);
    std::vector<std::vector<float>> t(patches, std::vector<float>(dim));
    std::vector<std::vector<std::uint8_t>> inc(patches, std::vector<std::uint8_t>(dim));
    std::vector<std::vector<double>> P(patches), T(patches);
    std::vector<std::vector<bool>> I(patches);
    std::vector<LossItem> items;
    for (int p = 0; p < patches; ++p) {
      for (int c = 0; c < dim; ++c) {
        t[p][c] = n(rng);
        inc[p][c] = keep(rng);
        P[p].push_back(pred(p, c));
        T[p].push_back(t[p][c]);
        I[p].push_back(inc[p][c]);
      }
    }
    for (int p = 0; p < patches; ++p) items.push_back({t[p], inc[p], 0});
    const auto r = masked_motion_loss(pred, items);
    EXPECT_NEAR(r.loss, synth::masked_mean_oracle(P, T, I), 1e-12);
    // Permuting the patches leaves the loss unchanged.
    std::vector<int> perm(patches);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat<float> pp(patches, dim);
    std::vector<LossItem> pi;
    for (int p = 0; p < patches; ++p) {
      std::copy(pred.row(perm[p]), pred.row(perm[p]) + dim, pp.row(p));
      pi.push_back(items[perm[p]]);
    }
    EXPECT_NEAR(masked_motion_loss(pp, pi).loss, r.loss, 1e-12);
    // Excluding one more component never increases the denominator.
    auto inc2 = inc;
    inc2[0][0] = 0;
    std::vector<LossItem> items2;
    for (int p = 0; p < patches; ++p) items2.push_back({t[p], inc2[p], 0});
    EXPECT_LE(masked_motion_loss(pred, items2).included, r.included);
  }
}

TEST(Loss, NothingIncluded) {
  Mat<float> pred(2, 3, 5.0f);
  const std::vector<float> t(3, 0.0f);
  const std::vector<std::uint8_t> none(3, 0);
  const std::vector<LossItem> items{{t, none, 4}, {t, none, 4}};
  Mat<float> g;
  const auto r = masked_motion_loss(pred, items, &g);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_TRUE(r.nothing_included);
  for (float v : g.d) EXPECT_EQ(v, 0.0f);
}

TEST(Loss, SplitBatchGradientMatchesWhole) {
  Mat<double> pred(2, 2);
  pred.d = {1, 2, 3, 4};
  const std::vector<float> t{0, 0};
  const std::vector<std::uint8_t> all{1, 1}, half{1, 0};
  const std::vector<LossItem> both{{t, all, 0}, {t, half, 0}};
  Mat<double> g;
  masked_motion_loss(pred, both, &g);
  Mat<double> a(1, 2), b(1, 2), ga, gb;
  a.d = {1, 2};
  b.d = {3, 4};
  masked_motion_loss(a, std::span(both).subspan(0, 1), &ga, 3);
  masked_motion_loss(b, std::span(both).subspan(1, 1), &gb, 3);
  EXPECT_DOUBLE_EQ(g(0, 0), ga(0, 0));
  EXPECT_DOUBLE_EQ(g(0, 1), ga(0, 1));
  EXPECT_DOUBLE_EQ(g(1, 0), gb(0, 0));
  EXPECT_EQ(gb(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(g(0, 0), 2.0 / 3.0);
}

TEST(GradCheck, TinyModelFloat) {
  const auto c = make_gradcheck_case(tiny_config(), 11);
  const auto r = gradient_check<float>(c);
  EXPECT_LE(r.parameters, 5000u);
  EXPECT_EQ(r.checked, r.parameters);
  EXPECT_LT(r.max_relative_error, 1e-3) << r.worst_parameter << "[" << r.worst_index << "]";
}

TEST(GradCheck, ZeroInputZeroTarget) {
  const auto c = make_gradcheck_case(tiny_config(), 12, true);
  const auto r = gradient_check<float>(c);
  EXPECT_LT(r.max_relative_error, 1e-3) << r.worst_parameter;
}

TEST(GradCheck, PerturbedDoubleModel) {
  const auto c = make_gradcheck_case(tiny_config(), 13);
  EXPECT_LT(gradient_check<double>(c, 1e-4, 1e-6, 0.3).max_relative_error, 1e-4);
}

TEST(GradCheck, CentralDifferenceIsSecondOrder) {
  const auto c = make_gradcheck_case(tiny_config(), 14);
  const double e1 = finite_difference_error(c, 0.1, 0.3);
  const double e2 = finite_difference_error(c, 0.05, 0.3);
  const double e3 = finite_difference_error(c, 0.025, 0.3);
  EXPECT_NEAR(e1 / e2, 4.0, 0.8);
  EXPECT_NEAR(e2 / e3, 4.0, 0.8);
}

TEST(Optim, AdamWFirstStep) {
  Param<double> w("w", {1, 2});
  w.value = {1.0, -2.0};
  w.grad = {0.5, -0.25};
  Param<double> b("b", {2});
  b.value = {3.0, 3.0};
  b.grad = {1.0, 0.0};
  TrainConfig tc;
  tc.weight_decay = 0.1;
  AdamW<double> opt({&w, &b}, tc);
  opt.step(0.01);
  // First bias-corrected step is lr * g/|g| (+ decay for matrices).
  EXPECT_NEAR(w.value[0], 1.0 - 0.01 * (0.5 / (0.5 + 1e-8) + 0.1), 1e-12);
  EXPECT_NEAR(w.value[1], -2.0 - 0.01 * (-0.25 / (0.25 + 1e-8) - 0.2), 1e-12);
  EXPECT_NEAR(b.value[0], 3.0 - 0.01 * (1.0 / (1.0 + 1e-8)), 1e-12);
  EXPECT_EQ(b.value[1], 3.0);
}

TEST(Optim, WarmupCosineSchedule) {
  TrainConfig tc;
  tc.lr = 1.0;
  tc.min_lr = 0.1;
  EXPECT_DOUBLE_EQ(learning_rate(tc, 0, 4, 20), 0.25);
  EXPECT_DOUBLE_EQ(learning_rate(tc, 3, 4, 20), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(tc, 4, 4, 20), 1.0);
  EXPECT_NEAR(learning_rate(tc, 12, 4, 20), 0.55, 1e-12);
  tc.cosine = false;
  EXPECT_DOUBLE_EQ(learning_rate(tc, 19, 4, 20), 1.0);
}

TEST(Optim, ConfigValidation) {
  TrainConfig tc;
  tc.warmup_epochs = tc.epochs + 1;
  EXPECT_THROW(tc.validate(), InvalidArgument);
  tc = {};
  tc.lr = -1;
  EXPECT_THROW(tc.validate(), InvalidArgument);
}

TEST(Checkpoint, RoundTripRestoresModel) {
  const auto cfg = tiny_config();
  MaskedAutoencoder<float> m(cfg);
  perturb_parameters(m, 0.1, 5);
  const auto bytes = encode_m3ck(make_checkpoint(m));
  const auto ck = decode_m3ck(bytes);
  EXPECT_EQ(encode_m3ck(ck), bytes);
  auto back = load_checkpoint<float>(ck);
  EXPECT_EQ(back.config(), cfg);
  const auto tok = random_tokens(cfg, 8);
  const std::vector<std::size_t> vis{0, 3, 5}, msk{1, 2, 4, 6, 7};
  EXPECT_EQ(back.forward(tok, vis, msk).d, m.forward(tok, vis, msk).d);
}

TEST(Checkpoint, RandomTensorsBitExact) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(-1e3f, 1e3f);
  Checkpoint ck{"a=1\nb=2\n", {}};
  for (int i = 0; i < 20; ++i) {
    NamedTensor t{"t" + std::to_string(i), {static_cast<std::uint32_t>(1 + i % 3), 5}, {}};
    t.values.resize(t.shape[0] * 5);
    for (auto& v : t.values) v = u(rng);
    ck.tensors.push_back(t);
  }
  EXPECT_EQ(decode_m3ck(encode_m3ck(ck)), ck);
}

TEST(Checkpoint, CorruptInputs) {
  Checkpoint ck{"x=1\n", {{"w", {2}, {1.0f, 2.0f}}}};
  auto b = encode_m3ck(ck);
  auto t = b;
  t.pop_back();
  EXPECT_THROW(decode_m3ck(t), FormatError);
  auto extra = b;
  extra.push_back(0);
  EXPECT_THROW(decode_m3ck(extra), FormatError);
  b[0] = 'Q';
  EXPECT_THROW(decode_m3ck(b), FormatError);
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  const auto data = disk_dataset(TargetKind::kTrajectory, 8, 1);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.epochs = 3;
  const auto r = train_toy(data, tc, small_model());
  for (const auto& e : r.epochs) EXPECT_NEAR(e.loss, r.epochs.front().loss, 1e-7);
}

TEST(Train, DeterministicCurves) {
  const auto data = disk_dataset(TargetKind::kPixel, 8, 2);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 3;
  tc.resample_masks = true;
  const auto a = train_toy(data, tc, small_model());
  const auto b = train_toy(data, tc, small_model());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) EXPECT_EQ(a.epochs[i].loss, b.epochs[i].loss);
}

TEST(Train, LossDecreases) {
  const auto data = disk_dataset(TargetKind::kTrajectory, 16, 3);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 10;
  tc.warmup_epochs = 1;
  const auto r = train_toy(data, tc, small_model());
  EXPECT_LT(r.epochs.back().loss, r.epochs.front().loss);
}

TEST(Train, NonFiniteTargetDiverges) {
  auto data = disk_dataset(TargetKind::kPixel, 2, 4);
  for (auto& c : data.clips)
    for (auto m : c.masked) c.targets[m][0] = std::numeric_limits<float>::infinity();
  TrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(train_toy(data, tc, small_model()), DivergenceError);
}

TEST(Train, EmptyDatasetRejected) {
  ToyDataset d;
  EXPECT_THROW(train_toy(d, TrainConfig{}, small_model()), InvalidArgument);
}

TEST(StaticProbe, NeedsTubeMasks) {
  auto data = disk_dataset(TargetKind::kPixel, 2, 5);
  data.mask_type = MaskType::kCube;
  EXPECT_THROW(static_video_probe(data, TrainConfig{}, small_model()), InvalidArgument);
}

TEST(StaticProbe, ZeroMotionDatasetHasZeroTrajectoryLoss) {
  const auto data = disk_dataset(TargetKind::kTrajectory, 4, 6, 0.0);
  // Without motion, z_p is all zero; z_s is identical along each track.
  for (const auto& c : data.clips)
    for (auto m : c.masked)
      for (int i = 0; i < 48; ++i) ASSERT_EQ(c.targets[m][i], 0.0f);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 1e-3;
  const auto pc = static_video_probe(data, tc, small_model());
  EXPECT_EQ(pc.multi.epochs.size(), 2u);
  EXPECT_EQ(pc.stat.epochs.size(), 2u);
}

TEST(LinearProbe, SeparableData) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<std::vector<double>> x, tx;
  std::vector<int> y, ty;
  for (int i = 0; i < 200; ++i) {
    const int k = i % 4;
    std::vector<double> v{n(rng), n(rng), n(rng)};
    v[k % 2] += k < 2 ? 2.0 : -2.0;
    (i < 160 ? x : tx).push_back(v);
    (i < 160 ? y : ty).push_back(k);
  }
  const auto r = linear_probe(x, y, tx, ty, 4);
  EXPECT_GT(r.train_accuracy, 0.95);
  EXPECT_GT(r.test_accuracy, 0.95);
}
