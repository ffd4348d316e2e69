#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "binaural/grad/suite.hpp"
#include "binaural/net/model.hpp"
#include "binaural/scene.hpp"

using namespace binaural;
using namespace binaural::net;

namespace {

constexpr double kPi = std::numbers::pi;

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

ModelConfig small_config() {
  ModelConfig cfg = grad::gradcheck_model_config();
  cfg.base_width = 4;
  return cfg;
}

struct Inputs {
  Tensor mix, image, depth;
  Channel mono;
};

Inputs random_inputs(const ModelConfig& cfg, std::uint64_t seed, std::size_t frames = 20) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 0.3);
  Channel mono(cfg.stft.hop * (frames - 1) + cfg.stft.fft_size);
  for (auto& v : mono) v = g(rng);
  return {spectrogram_tensor(stft(mono, cfg.stft)), random_tensor({3, cfg.image_height, cfg.image_width}, seed + 1, 0, 1),
          random_tensor({1, cfg.image_height, cfg.image_width}, seed + 2, 0.5, kMaxDepth), mono};
}

ParameterSet perturbed(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  auto p = init_parameters(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, scale);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (auto& v : p.tensor(i).data) v += g(rng);
  return p;
}

DecoderOutputs run_forward(Tape& tape, const ParameterSet& ps, const Inputs& in, const ModelConfig& cfg) {
  BoundParameters p(tape, ps, false);
  return forward(tape, p, in.mix, in.image, in.depth, cfg);
}

void expect_in_range(const Tensor& t, double lo, double hi, const char* what) {
  for (double v : t.data) {
    ASSERT_TRUE(std::isfinite(v)) << what;
    ASSERT_GE(v, lo) << what;
    ASSERT_LE(v, hi) << what;
  }
}

}  // namespace

TEST(Config, Validation) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  ModelConfig bad;
  bad.image_width = 30;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.view_taps = {1, 2, 3};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.view_taps = {1, 2, 3, 5};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.stft.fft_size = 32;
  bad.stft.hop = 8;
  EXPECT_THROW(bad.validate(), ConfigError);
  const ModelConfig def;
  EXPECT_EQ(def.view_taps, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(def.view_blocks, 4u);
  EXPECT_EQ(to_text(model_config_from_text(to_text(small_config()))), to_text(small_config()));
}

TEST(AudioEncoder, BottleneckShapeAndZeroResponse) {
  ModelConfig cfg;
  cfg.base_width = 8;
  auto ps = init_parameters(cfg);
  Tape tape;
  BoundParameters p(tape, ps, false);
  const auto f = encode_audio(p, tape.constant(random_tensor({2, 256, 64}, 1)), cfg);
  EXPECT_EQ(f.bottleneck().shape(), (Shape{32, 8, 2}));
  ASSERT_EQ(f.layers.size(), 5u);
  EXPECT_EQ(f.layers[0].shape(), (Shape{8, 128, 32}));

  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.name(i).ends_with(".bias")) std::fill(ps.tensor(i).data.begin(), ps.tensor(i).data.end(), 0.0);
  Tape t2;
  BoundParameters p2(t2, ps, false);
  const auto z = encode_audio(p2, t2.constant(Tensor({2, 256, 64}, 0.0)), cfg);
  for (double v : z.bottleneck().value().data) EXPECT_EQ(v, 0.0);
  Tape t3;
  BoundParameters p3(t3, ps, false);
  EXPECT_THROW(encode_audio(p3, t3.constant(Tensor({2, 250, 64}, 0.0)), cfg), ConfigError);
}

TEST(ViewEncoder, ShapeAndStatelessness) {
  ModelConfig cfg;
  const auto ps = init_parameters(cfg);
  const auto a = random_tensor({3, 32, 32}, 2, 0, 1), b = random_tensor({3, 32, 32}, 3, 0, 1);
  auto encode = [&](const Tensor& x) {
    Tape tape;
    BoundParameters p(tape, ps, false);
    return encode_view(p, "image", tape.constant(x), cfg).value();
  };
  const auto fa = encode(a), fb = encode(b);
  EXPECT_EQ(fa.shape, (Shape{32, 4, 4}));
  EXPECT_NE(fa.data, fb.data);
  // Evaluating in swapped order gives the same per-input features.
  EXPECT_EQ(encode(b).data, fb.data);
  EXPECT_EQ(encode(a).data, fa.data);
  Tape tape;
  BoundParameters p(tape, ps, false);
  EXPECT_THROW(encode_view(p, "depth", tape.constant(Tensor({1, 30, 32}, 1.0)), cfg), ConfigError);
}

TEST(Attention, CosineExamples) {
  Tape tape;
  // view [2,1,3] columns: [1,0], [0,1], [1,1]; audio [2,1,1] column [1,0].
  Var view = tape.constant(Tensor({2, 1, 3}, std::vector<double>{1, 0, 1, 0, 1, 1}));
  Var audio = tape.constant(Tensor({2, 1, 1}, std::vector<double>{1, 0}));
  const auto a = cross_modal_attention(view, audio).value();
  ASSERT_EQ(a.shape, (Shape{3, 1, 1}));
  // Both norms carry eps = 1e-12 under the root.
  EXPECT_NEAR(a[0], 1.0 / (1.0 + 1e-12), 1e-15);
  EXPECT_NEAR(a[1], 0.0, 1e-15);
  EXPECT_NEAR(a[2], 1 / std::sqrt(2.0 + 1e-12) / std::sqrt(1.0 + 1e-12), 1e-15);
  EXPECT_THROW(cross_modal_attention(view, tape.constant(Tensor({3, 1, 1}, 1.0))), ShapeError);
}

TEST(Attention, AlignAndFuse) {
  ParameterSet ps;
  ps.add("al.weight", Tensor({5, 4, 1, 1}, 0.0));
  ps.add("al.bias", Tensor({5}, 0.0));
  Tape tape;
  BoundParameters p(tape, ps, false);
  Var v = tape.constant(random_tensor({4, 2, 2}, 4));
  EXPECT_EQ(align_channels(p, "al", v, 1).value().data, v.value().data);
  const auto z = align_channels(p, "al", v, 2).value();
  EXPECT_EQ(z.shape, (Shape{5, 2, 2}));
  for (double x : z.data) EXPECT_EQ(x, 0.0);

  Var m = tape.constant(random_tensor({4, 3, 5}, 5));
  const auto f = fuse_attention(m, m, 6, 7).value();
  ASSERT_EQ(f.shape, (Shape{8, 6, 7}));
  const std::size_t half = 4 * 6 * 7;
  for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(f[i], f[half + i]);
  expect_in_range(f, -1, 1, "fused");
  EXPECT_THROW(fuse_attention(m, tape.constant(Tensor({4, 3, 4})), 6, 7), ShapeError);
}

TEST(Mask, ComplexProduct) {
  Tape tape;
  const auto a = random_tensor({2, 3, 4}, 6);
  Tensor one({2, 3, 4}, 0.0);
  for (std::size_t i = 0; i < 12; ++i) one[i] = 1.0;
  EXPECT_EQ(apply_complex_mask(tape.constant(one), tape.constant(a)).value().data, a.data);
  for (double v : apply_complex_mask(tape.constant(Tensor({2, 3, 4}, 0.0)), tape.constant(a)).value().data)
    EXPECT_EQ(v, 0.0);
  const auto y = apply_complex_mask(tape.constant(Tensor({2, 1, 1}, std::vector<double>{0.5, 0.5})),
                                    tape.constant(Tensor({2, 1, 1}, std::vector<double>{0.2, 0.4})))
                     .value();
  EXPECT_NEAR(y[0], -0.1, 1e-15);
  EXPECT_NEAR(y[1], 0.3, 1e-15);
}

TEST(Losses, HandCases) {
  Tape tape;
  Tensor gt({2, 2, 1}, std::vector<double>{0.3, -0.2, 0.4, 0.1});
  const auto target = make_target(gt);
  DecoderOutputs exact;
  exact.stft_pred = tape.constant(gt);
  exact.mag_hat = tape.constant(target.mag);
  exact.phase_pred = tape.constant(target.phase);
  const auto l = compute_losses(tape, exact, target, {});
  EXPECT_EQ(l.stft.value().item(), 0.0);
  EXPECT_EQ(l.mag.value().item(), 0.0);
  EXPECT_EQ(l.phs.value().item(), 0.0);
  EXPECT_NEAR(l.rec.value().item(), 0.0, 1e-30);
  EXPECT_NEAR(l.total.value().item(), 0.0, 1e-30);

  DecoderOutputs off = exact;
  Tensor shifted = gt;
  for (auto& v : shifted.data) v += 0.5;
  off.stft_pred = tape.constant(shifted);
  off.mag_hat = tape.constant(Tensor({1, 2, 1}, 1.0));
  const auto l2 = compute_losses(tape, off, target, {0, 0, 0});
  EXPECT_NEAR(l2.stft.value().item(), 0.25, 1e-15);
  EXPECT_EQ(l2.total.value().item(), l2.stft.value().item());
  const auto l3 = compute_losses(tape, off, target, {2, 3, 4});
  EXPECT_NEAR(l3.total.value().item(),
              l3.stft.value().item() + 2 * l3.mag.value().item() + 3 * l3.phs.value().item() + 4 * l3.rec.value().item(),
              1e-14);
}

TEST(Forward, ShapesAtDefaultSize) {
  ModelConfig cfg;
  const auto ps = init_parameters(cfg);
  Tape tape;
  BoundParameters p(tape, ps, false);
  const auto mix = random_tensor({2, 257, 64}, 7);
  const auto out = forward(tape, p, mix, random_tensor({3, 32, 32}, 8, 0, 1), Tensor({1, 32, 32}, 3.0), cfg);
  EXPECT_EQ(out.mag_hat.shape(), (Shape{1, 257, 64}));
  EXPECT_EQ(out.stft_mask.shape(), (Shape{2, 257, 64}));
  EXPECT_EQ(out.phase_mask.shape(), (Shape{1, 257, 64}));
  EXPECT_EQ(out.stft_pred.shape(), (Shape{2, 257, 64}));
  ASSERT_EQ(out.attention.size(), kDecoderDepth);
  for (const auto& la : out.attention) {
    ASSERT_TRUE(la.fused.has_value());
    EXPECT_EQ(la.fused->shape()[0], 2 * cfg.patches());
  }
}

TEST(Forward, RangesHoldUnderLargeParameters) {
  const auto cfg = small_config();
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto ps = perturbed(cfg, seed, seed % 2 ? 3.0 : 0.3);
    const auto in = random_inputs(cfg, seed);
    Tape tape;
    const auto out = run_forward(tape, ps, in, cfg);
    expect_in_range(out.stft_mask.value(), -1, 1, "mask");
    expect_in_range(out.phase_mask.value(), -1, 1, "phase mask");
    expect_in_range(out.phase_pred.value(), -kPi, kPi, "phase");
    expect_in_range(out.mag_hat.value(), 0, 1e300, "magnitude");
    for (const auto& la : out.attention) {
      expect_in_range(la.image->value(), -1, 1, "image attention");
      expect_in_range(la.depth->value(), -1, 1, "depth attention");
      expect_in_range(la.fused->value(), -1, 1, "fused attention");
    }
  }
}

TEST(Forward, AudioOnlyIgnoresViewsAndDiffersFromFull) {
  auto cfg = small_config();
  const auto full_ps = init_parameters(cfg);
  const auto in = random_inputs(cfg, 9), other = random_inputs(cfg, 10);
  auto audio_cfg = cfg;
  audio_cfg.use_image = audio_cfg.use_depth = false;
  const auto audio_ps = init_parameters(audio_cfg);
  Tape t1, t2, t3;
  const auto a = run_forward(t1, audio_ps, in, audio_cfg).stft_pred.value();
  Inputs swapped = in;
  swapped.image = other.image;
  swapped.depth = other.depth;
  const auto b = run_forward(t2, audio_ps, swapped, audio_cfg).stft_pred.value();
  EXPECT_EQ(a.data, b.data);
  const auto c = run_forward(t3, full_ps, in, cfg).stft_pred.value();
  EXPECT_NE(a.data, c.data);
}

TEST(Forward, SingleAndTripleShareOutputShape) {
  auto cfg = small_config();
  auto single = cfg;
  single.decoder_mode = DecoderMode::kSingle;
  const auto in = random_inputs(cfg, 11);
  Tape t1, t2;
  const auto a = run_forward(t1, init_parameters(cfg), in, cfg);
  const auto b = run_forward(t2, init_parameters(single), in, single);
  EXPECT_EQ(a.stft_pred.shape(), b.stft_pred.shape());
  expect_in_range(b.phase_pred.value(), -kPi, kPi, "single phase");
  expect_in_range(b.mag_hat.value(), 0, 1e300, "single magnitude");
}

TEST(Predict, MonoIdentityAtAnyParameters) {
  const auto cfg = small_config();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const BinauralNet net{cfg, perturbed(cfg, seed, seed * 0.5)};
    const auto in = random_inputs(cfg, 20 + seed, 30);
    const auto out = predict_binaural(in.mono, in.image, in.depth, net);
    ASSERT_EQ(out.num_samples(), in.mono.size());
    double err = 0, peak = 0, out_peak = 0;
    for (std::size_t i = cfg.stft.fft_size; i + cfg.stft.fft_size < in.mono.size(); ++i) {
      err = std::max(err, std::abs(out.left()[i] + out.right()[i] - in.mono[i]));
      peak = std::max(peak, std::abs(in.mono[i]));
    }
    for (std::size_t i = 0; i < in.mono.size(); ++i) {
      ASSERT_TRUE(std::isfinite(out.left()[i]) && std::isfinite(out.right()[i]));
      out_peak = std::max({out_peak, std::abs(out.left()[i]), std::abs(out.right()[i])});
    }
    EXPECT_LE(err, 1e-3 * peak);
    double in_peak = 0;
    for (double v : in.mono) in_peak = std::max(in_peak, std::abs(v));
    EXPECT_LE(out_peak, 10 * in_peak);
  }
}

TEST(Export, CountAndRange) {
  const auto cfg = small_config();
  const BinauralNet net = BinauralNet::create(cfg);
  const auto in = random_inputs(cfg, 30);
  const auto images = export_attention(in.mono, in.image, in.depth, net);
  ASSERT_EQ(images.size(), 2 * kDecoderDepth);
  for (const auto& img : images) {
    EXPECT_EQ(img.pixels.size(), cfg.patches());
    for (double v : img.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  auto image_only = cfg;
  image_only.use_depth = false;
  EXPECT_EQ(export_attention(in.mono, in.image, in.depth, BinauralNet::create(image_only)).size(), kDecoderDepth);
}

TEST(Parameters, InitIsSeededAndNamed) {
  const auto cfg = small_config();
  EXPECT_TRUE(init_parameters(cfg) == init_parameters(cfg));
  auto other = cfg;
  other.init_seed += 1;
  EXPECT_FALSE(init_parameters(cfg) == init_parameters(other));
  const auto ps = init_parameters(cfg);
  EXPECT_TRUE(ps.contains("audio.enc1.weight"));
  EXPECT_TRUE(ps.contains("image.tap4.weight"));
  EXPECT_TRUE(ps.contains("depth.block4.ffn.w1"));
  EXPECT_TRUE(ps.contains("phs.dec5.weight"));
  EXPECT_FALSE(ps.contains("stft.align1.image.weight"));
  EXPECT_TRUE(ps.contains("stft.align2.image.weight"));
}
