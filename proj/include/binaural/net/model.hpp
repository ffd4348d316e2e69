#pragma once

// Mono-to-binaural network: convolutional audio encoder, two patch-transformer
// view encoders (image, depth), and mask/magnitude/phase decoders that fuse
// cosine-similarity attention between view patches and audio features at
// every upsampling layer.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"
#include "binaural/grad/ops.hpp"
#include "binaural/grad/params.hpp"
#include "binaural/grad/tape.hpp"
#include "binaural/net/config.hpp"
#include "binaural/scene.hpp"

namespace binaural::net {

using grad::BoundParameters;
using grad::ParameterSet;
using grad::Shape;
using grad::Tape;
using grad::Tensor;
using grad::Var;

inline constexpr std::size_t kKernel = 4;
inline constexpr std::size_t kStride = 2;
inline constexpr std::size_t kPad = 1;

// ---------------------------------------------------------------- layout

/// Channel widths of the encoder layers 1..5: d, 2d, 4d, 4d, 4d.
inline std::array<std::size_t, kEncoderDepth> encoder_channels(const ModelConfig& cfg) {
  const std::size_t d = cfg.base_width;
  return {d, 2 * d, 4 * d, 4 * d, 4 * d};
}

struct DecoderLayerPlan {
  std::size_t act_channels;   // decoder activation entering the layer
  std::size_t skip_layer;     // encoder layer concatenated as skip (0: none)
  std::size_t skip_channels;
  std::size_t out_channels;
};

/// Decoder layer i (1-based) pairs with encoder layer 6-i; layer 1 has no skip.
inline std::array<DecoderLayerPlan, kDecoderDepth> decoder_plan(const ModelConfig& cfg, std::size_t head_channels) {
  const std::size_t d = cfg.base_width;
  const auto enc = encoder_channels(cfg);
  const std::array<std::size_t, kDecoderDepth> act = {4 * d, 4 * d, 4 * d, 2 * d, d};
  const std::array<std::size_t, kDecoderDepth> out = {4 * d, 4 * d, 2 * d, d, head_channels};
  std::array<DecoderLayerPlan, kDecoderDepth> plan{};
  for (std::size_t i = 1; i <= kDecoderDepth; ++i) {
    const std::size_t skip = i == 1 ? 0 : kEncoderDepth + 1 - i;
    plan[i - 1] = {act[i - 1], skip, skip ? enc[skip - 1] : 0, out[i - 1]};
  }
  return plan;
}

inline std::size_t attention_channels(const ModelConfig& cfg) {
  return cfg.patches() * ((cfg.use_image ? 1 : 0) + (cfg.use_depth ? 1 : 0));
}

struct Head {
  std::string name;
  std::size_t channels;
};

inline std::vector<Head> decoder_heads(const ModelConfig& cfg) {
  if (cfg.decoder_mode == DecoderMode::kSingle) return {{"trunk", 2}};
  return {{"stft", 2}, {"mag", 1}, {"phs", 1}};
}

inline std::vector<std::string> view_modalities(const ModelConfig& cfg) {
  std::vector<std::string> m;
  if (cfg.use_image) m.push_back("image");
  if (cfg.use_depth) m.push_back("depth");
  return m;
}

inline std::size_t view_input_channels(const std::string& modality) { return modality == "image" ? 3 : 1; }

// ---------------------------------------------------------------- parameters

namespace detail {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = stddev * gaussian();
    return t;
  }

 private:
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform01(rng_);
    const double u2 = uniform01(rng_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2 * std::numbers::pi * u2);
  }

  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace detail

/// He-normal convolutions, 1/sqrt(fan_in) projections, zero biases, unit LayerNorm gains.
inline ParameterSet init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  ParameterSet p;
  detail::Initializer init(cfg.init_seed);
  const std::size_t k2 = kKernel * kKernel;

  const auto enc = encoder_channels(cfg);
  std::size_t in = 2;
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    const std::string name = "audio.enc" + std::to_string(i + 1);
    p.add(name + ".weight", init.normal({enc[i], in, kKernel, kKernel}, std::sqrt(2.0 / static_cast<double>(in * k2))));
    p.add(name + ".bias", Tensor({enc[i]}, 0.0));
    in = enc[i];
  }

  const std::size_t e = cfg.view_embed;
  const double proj = 1.0 / std::sqrt(static_cast<double>(e));
  for (const auto& mod : view_modalities(cfg)) {
    const std::size_t cin = view_input_channels(mod);
    const std::size_t ps = cfg.patch_size;
    p.add(mod + ".patch.weight", init.normal({e, cin, ps, ps}, 1.0 / std::sqrt(static_cast<double>(cin * ps * ps))));
    p.add(mod + ".patch.bias", Tensor({e}, 0.0));
    p.add(mod + ".pos", init.normal({cfg.patches(), e}, 0.02));
    for (std::size_t b = 1; b <= cfg.view_blocks; ++b) {
      const std::string blk = mod + ".block" + std::to_string(b);
      p.add(blk + ".ln1.gamma", Tensor({e}, 1.0));
      p.add(blk + ".ln1.beta", Tensor({e}, 0.0));
      for (const char* w : {"q", "k", "v", "o"}) {
        p.add(blk + ".attn.w" + w, init.normal({e, e}, proj));
        p.add(blk + ".attn.b" + w, Tensor({e}, 0.0));
      }
      p.add(blk + ".ln2.gamma", Tensor({e}, 1.0));
      p.add(blk + ".ln2.beta", Tensor({e}, 0.0));
      p.add(blk + ".ffn.w1", init.normal({e, 2 * e}, proj));
      p.add(blk + ".ffn.b1", Tensor({2 * e}, 0.0));
      p.add(blk + ".ffn.w2", init.normal({2 * e, e}, 1.0 / std::sqrt(2.0 * static_cast<double>(e))));
      p.add(blk + ".ffn.b2", Tensor({e}, 0.0));
    }
    for (std::size_t j = 1; j <= kViewTaps; ++j) {
      const std::string tap = mod + ".tap" + std::to_string(j);
      p.add(tap + ".weight", init.normal({cfg.base_width, e, 1, 1}, proj));
      p.add(tap + ".bias", Tensor({cfg.base_width}, 0.0));
    }
  }

  const std::size_t att = attention_channels(cfg);
  for (const auto& head : decoder_heads(cfg)) {
    const auto plan = decoder_plan(cfg, head.channels);
    for (std::size_t i = 1; i <= kDecoderDepth; ++i) {
      const auto& lp = plan[i - 1];
      const std::string layer = head.name + ".dec" + std::to_string(i);
      const std::size_t cin = att + lp.act_channels + lp.skip_channels;
      // Each output pixel of a stride-2 transposed conv sees cin * (k/s)^2 inputs.
      const double fan_in = static_cast<double>(cin * k2) / static_cast<double>(kStride * kStride);
      p.add(layer + ".weight", init.normal({cin, lp.out_channels, kKernel, kKernel}, std::sqrt(2.0 / fan_in)));
      p.add(layer + ".bias", Tensor({lp.out_channels}, 0.0));
      if (i == 1) continue;  // first layer's channels already match the views
      for (const auto& mod : view_modalities(cfg)) {
        const std::string align = head.name + ".align" + std::to_string(i) + "." + mod;
        p.add(align + ".weight",
              init.normal({lp.act_channels, cfg.audio_width(), 1, 1}, 1.0 / std::sqrt(static_cast<double>(cfg.audio_width()))));
        p.add(align + ".bias", Tensor({lp.act_channels}, 0.0));
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------- tensors <-> spectrograms

/// [2, F, T] tensor with real and imaginary planes.
inline Tensor spectrogram_tensor(const Spectrogram& s) {
  Tensor t({2, s.bins, s.frames});
  std::copy(s.real_plane.begin(), s.real_plane.end(), t.data.begin());
  std::copy(s.imag_plane.begin(), s.imag_plane.end(), t.data.begin() + static_cast<long>(s.real_plane.size()));
  return t;
}

inline Spectrogram tensor_spectrogram(const Tensor& t, const StftConfig& cfg) {
  if (t.rank() != 3 || t.dim(0) != 2) throw ShapeError("expected a [2,F,T] spectrogram tensor, got " + grad::to_string(t.shape));
  Spectrogram s(t.dim(1), t.dim(2), cfg);
  const std::size_t n = s.real_plane.size();
  std::copy(t.data.begin(), t.data.begin() + static_cast<long>(n), s.real_plane.begin());
  std::copy(t.data.begin() + static_cast<long>(n), t.data.end(), s.imag_plane.begin());
  return s;
}

// ---------------------------------------------------------------- encoders

struct AudioFeatures {
  std::array<Var, kEncoderDepth> layers;  // activations of encoder layers 1..5
  Var bottleneck() const { return layers.back(); }
};

/// Five stride-2 convolutions with LeakyReLU. Input [2, F, T] with F, T divisible by 32.
inline AudioFeatures encode_audio(const BoundParameters& p, Var spec, const ModelConfig& cfg) {
  const Shape& s = spec.shape();
  if (s.size() != 3 || s[0] != 2) throw ShapeError("encode_audio: expected [2,F,T], got " + grad::to_string(s));
  const std::size_t factor = std::size_t{1} << kEncoderDepth;
  if (s[1] % factor != 0 || s[2] % factor != 0)
    throw ConfigError("encode_audio: spectrogram extents " + grad::to_string(s) + " must be divisible by " +
                      std::to_string(factor));
  AudioFeatures f;
  Var x = spec;
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    const std::string name = "audio.enc" + std::to_string(i + 1);
    x = grad::leaky_relu(grad::conv2d(x, p[name + ".weight"], p[name + ".bias"], kStride, kPad), cfg.leaky_slope);
    f.layers[i] = x;
  }
  return f;
}

namespace detail {

inline Var linear(const BoundParameters& p, Var x, const std::string& w, const std::string& b) {
  return grad::add(grad::matmul(x, p[w]), grad::expand_rows(p[b], x.shape()[0]));
}

/// Pre-norm transformer block on tokens [P, E], single attention head.
inline Var transformer_block(const BoundParameters& p, Var x, const std::string& blk, std::size_t embed) {
  Var z = grad::layer_norm(x, p[blk + ".ln1.gamma"], p[blk + ".ln1.beta"]);
  Var q = linear(p, z, blk + ".attn.wq", blk + ".attn.bq");
  Var k = linear(p, z, blk + ".attn.wk", blk + ".attn.bk");
  Var v = linear(p, z, blk + ".attn.wv", blk + ".attn.bv");
  Var scores = grad::mul_scalar(grad::matmul(q, grad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(embed)));
  Var mixed = grad::matmul(grad::softmax(scores, 1), v);
  x = grad::add(x, linear(p, mixed, blk + ".attn.wo", blk + ".attn.bo"));
  Var z2 = grad::layer_norm(x, p[blk + ".ln2.gamma"], p[blk + ".ln2.beta"]);
  Var hidden = grad::gelu(linear(p, z2, blk + ".ffn.w1", blk + ".ffn.b1"));
  return grad::add(x, linear(p, hidden, blk + ".ffn.w2", blk + ".ffn.b2"));
}

}  // namespace detail

/// Patch embedding, transformer blocks, four tapped blocks projected 1x1 to d
/// channels each and concatenated: [4d, H/patch, W/patch].
inline Var encode_view(const BoundParameters& p, const std::string& modality, Var view, const ModelConfig& cfg) {
  const Shape& s = view.shape();
  if (s.size() != 3 || s[0] != view_input_channels(modality))
    throw ShapeError("encode_view(" + modality + "): unexpected input shape " + grad::to_string(s));
  if (s[1] % cfg.patch_size != 0 || s[2] % cfg.patch_size != 0)
    throw ConfigError("encode_view: image " + grad::to_string(s) + " not divisible by patch size " +
                      std::to_string(cfg.patch_size));
  const std::size_t h = s[1] / cfg.patch_size, w = s[2] / cfg.patch_size, e = cfg.view_embed;
  if (h * w != cfg.patches())
    throw ConfigError("encode_view: image size does not match the configured " + std::to_string(cfg.image_height) +
                      "x" + std::to_string(cfg.image_width));
  if (modality == "depth") view = grad::mul_scalar(view, 1.0 / kMaxDepth);  // metres -> [0, 1]
  Var tokens = grad::conv2d(view, p[modality + ".patch.weight"], p[modality + ".patch.bias"], cfg.patch_size, 0);
  tokens = grad::transpose(grad::reshape(tokens, {e, h * w}));
  tokens = grad::add(tokens, p[modality + ".pos"]);

  std::vector<Var> block_out;
  for (std::size_t b = 1; b <= cfg.view_blocks; ++b) {
    tokens = detail::transformer_block(p, tokens, modality + ".block" + std::to_string(b), e);
    block_out.push_back(tokens);
  }
  std::vector<Var> taps;
  for (std::size_t j = 0; j < kViewTaps; ++j) {
    Var grid = grad::reshape(grad::transpose(block_out[cfg.view_taps[j] - 1]), {e, h, w});
    const std::string tap = modality + ".tap" + std::to_string(j + 1);
    taps.push_back(grad::conv2d(grid, p[tap + ".weight"], p[tap + ".bias"], 1, 0));
  }
  return grad::concat(taps, 0);
}

// ---------------------------------------------------------------- fusion

/// Cosine similarity between every view column f_view(:,i,j) and every audio
/// column f_audio(:,k,l), flattened to [(h*w), f, t].
inline Var cross_modal_attention(Var view, Var audio) {
  const Shape& vs = view.shape();
  const Shape& as = audio.shape();
  if (vs.size() != 3 || as.size() != 3) throw ShapeError("cross_modal_attention: expected [C,h,w] and [C,f,t]");
  if (vs[0] != as[0])
    throw ShapeError("cross_modal_attention: channel mismatch " + grad::to_string(vs) + " vs " + grad::to_string(as));
  Var vn = grad::l2_normalize(grad::reshape(view, {vs[0], vs[1] * vs[2]}));
  Var an = grad::l2_normalize(grad::reshape(audio, {as[0], as[1] * as[2]}));
  return grad::reshape(grad::matmul(grad::transpose(vn), an), {vs[1] * vs[2], as[1], as[2]});
}

/// Per-position linear map 4d -> c_i followed by GELU; identity for layer 1.
inline Var align_channels(const BoundParameters& p, const std::string& prefix, Var view, std::size_t layer) {
  if (layer <= 1) return view;
  return grad::gelu(grad::conv2d(view, p[prefix + ".weight"], p[prefix + ".bias"], 1, 0));
}

/// Resizes each map's f x t plane to the target grid and stacks them on the leading axis.
inline Var fuse_attention(const std::vector<Var>& maps, std::size_t f, std::size_t t) {
  if (maps.empty()) throw ShapeError("fuse_attention: no attention maps");
  const Shape& first = maps.front().shape();
  std::vector<Var> resized;
  for (Var m : maps) {
    if (m.shape() != first)
      throw ShapeError("fuse_attention: shape mismatch " + grad::to_string(first) + " vs " + grad::to_string(m.shape()));
    resized.push_back(first[1] == f && first[2] == t ? m : grad::resize_bilinear(m, f, t));
  }
  return resized.size() == 1 ? resized.front() : grad::concat(resized, 0);
}

inline Var fuse_attention(Var att_img, Var att_depth, std::size_t f, std::size_t t) {
  return fuse_attention(std::vector<Var>{att_img, att_depth}, f, t);
}

// ---------------------------------------------------------------- decoding

/// Complex product per bin of mask M [2,F,T] and mixture A [2,F,T].
inline Var apply_complex_mask(Var mask, Var mix) {
  if (mask.shape() != mix.shape() || mask.shape().size() != 3 || mask.shape()[0] != 2)
    throw ShapeError("apply_complex_mask: shapes " + grad::to_string(mask.shape()) + " and " +
                     grad::to_string(mix.shape()) + " must both be [2,F,T]");
  Var mr = grad::slice(mask, 0, 0, 1), mi = grad::slice(mask, 0, 1, 1);
  Var ar = grad::slice(mix, 0, 0, 1), ai = grad::slice(mix, 0, 1, 1);
  Var re = grad::sub(grad::mul(mr, ar), grad::mul(mi, ai));
  Var im = grad::add(grad::mul(mr, ai), grad::mul(mi, ar));
  return grad::concat({re, im}, 0);
}

struct LayerAttention {
  std::optional<Var> image;  // [(h*w), f_i, t_i]
  std::optional<Var> depth;
  std::optional<Var> fused;  // [(#modalities*h*w), f_i, t_i]
};

struct DecoderOutputs {
  Var mag_hat;     // [1,F,T] >= 0
  Var stft_mask;   // [2,F,T] in [-1,1]
  Var phase_mask;  // [1,F,T] in [-1,1]
  Var stft_pred;   // [2,F,T]
  Var phase_pred;  // [1,F,T] = pi * phase_mask
  std::vector<LayerAttention> attention;  // per decoder layer, from the STFT trunk
};

struct ViewFeatures {
  std::optional<Var> image;  // [4d, h, w]
  std::optional<Var> depth;
};

namespace detail {

/// Network grid for an F x T spectrogram: frequency cropped down to a
/// multiple of 32, time zero-padded up to one.
inline std::pair<std::size_t, std::size_t> network_grid(std::size_t f, std::size_t t) {
  const std::size_t factor = std::size_t{1} << kEncoderDepth;
  if (f < factor) throw ConfigError("spectrogram has fewer than 32 frequency bins");
  return {f / factor * factor, (t + factor - 1) / factor * factor};
}

inline Var to_network_grid(Tape& tape, Var spec) {
  const Shape& s = spec.shape();
  auto [fn, tn] = network_grid(s[1], s[2]);
  Var x = fn == s[1] ? spec : grad::slice(spec, 1, 0, fn);
  if (tn != s[2]) x = grad::concat({x, tape.constant(Tensor({s[0], fn, tn - s[2]}, 0.0))}, 2);
  return x;
}

/// Crops padded frames and repeats the top frequency row to restore F x T.
inline Var from_network_grid(Var x, std::size_t f, std::size_t t) {
  const Shape& s = x.shape();
  if (s[2] != t) x = grad::slice(x, 2, 0, t);
  if (s[1] != f) {
    std::vector<Var> parts{x};
    Var top = grad::slice(x, 1, s[1] - 1, 1);
    for (std::size_t i = s[1]; i < f; ++i) parts.push_back(top);
    x = grad::concat(parts, 1);
  }
  return x;
}

struct TrunkResult {
  Var pre_activation;  // [head_channels, F, T]
  std::vector<LayerAttention> attention;
};

inline TrunkResult run_trunk(const BoundParameters& p, const Head& head, const AudioFeatures& audio,
                             const ViewFeatures& views, const ModelConfig& cfg, std::size_t f, std::size_t t) {
  const auto plan = decoder_plan(cfg, head.channels);
  TrunkResult r;
  Var act = audio.bottleneck();
  for (std::size_t i = 1; i <= kDecoderDepth; ++i) {
    const auto& lp = plan[i - 1];
    const Shape& as = act.shape();
    LayerAttention la;
    std::vector<Var> maps;
    auto attend = [&](const std::optional<Var>& view, const std::string& mod) -> std::optional<Var> {
      if (!view) return std::nullopt;
      Var aligned = align_channels(p, head.name + ".align" + std::to_string(i) + "." + mod, *view, i);
      Var att = cross_modal_attention(aligned, act);
      maps.push_back(att);
      return att;
    };
    la.image = attend(views.image, "image");
    la.depth = attend(views.depth, "depth");
    std::vector<Var> inputs;
    if (!maps.empty()) {
      la.fused = fuse_attention(maps, as[1], as[2]);
      inputs.push_back(*la.fused);
    }
    inputs.push_back(act);
    if (lp.skip_layer) inputs.push_back(audio.layers[lp.skip_layer - 1]);
    Var x = inputs.size() == 1 ? inputs.front() : grad::concat(inputs, 0);
    const std::string layer = head.name + ".dec" + std::to_string(i);
    act = grad::conv_transpose2d(x, p[layer + ".weight"], p[layer + ".bias"], kStride, kPad);
    if (i < kDecoderDepth) act = grad::leaky_relu(act, cfg.leaky_slope);
    r.attention.push_back(std::move(la));
  }
  r.pre_activation = from_network_grid(act, f, t);
  return r;
}

}  // namespace detail

/// Runs the decoder subnetworks. `mix` is the full-resolution [2,F,T]
/// mixture spectrogram the STFT mask is applied to.
inline DecoderOutputs decode(const BoundParameters& p, const AudioFeatures& audio, const ViewFeatures& views, Var mix,
                             const ModelConfig& cfg) {
  if (views.image.has_value() != cfg.use_image || views.depth.has_value() != cfg.use_depth)
    throw ConfigError("decode: provided view features do not match use_image/use_depth");
  const Shape& ms = mix.shape();
  if (ms.size() != 3 || ms[0] != 2) throw ShapeError("decode: mixture must be [2,F,T], got " + grad::to_string(ms));
  const std::size_t f = ms[1], t = ms[2];
  for (const auto& v : {views.image, views.depth})
    if (v && v->shape() != Shape{cfg.audio_width(), cfg.patch_rows(), cfg.patch_cols()})
      throw ShapeError("decode: view features " + grad::to_string(v->shape()) + " do not have 4d channels");

  DecoderOutputs out;
  if (cfg.decoder_mode == DecoderMode::kTriple) {
    auto stft_trunk = detail::run_trunk(p, {"stft", 2}, audio, views, cfg, f, t);
    auto mag_trunk = detail::run_trunk(p, {"mag", 1}, audio, views, cfg, f, t);
    auto phs_trunk = detail::run_trunk(p, {"phs", 1}, audio, views, cfg, f, t);
    out.stft_mask = grad::tanh(stft_trunk.pre_activation);
    out.mag_hat = grad::relu(mag_trunk.pre_activation);
    out.phase_mask = grad::tanh(phs_trunk.pre_activation);
    out.stft_pred = apply_complex_mask(out.stft_mask, mix);
    out.phase_pred = grad::mul_scalar(out.phase_mask, std::numbers::pi);
    out.attention = std::move(stft_trunk.attention);
  } else {
    // One trunk; magnitude and phase are read off its masked spectrogram.
    auto trunk = detail::run_trunk(p, {"trunk", 2}, audio, views, cfg, f, t);
    out.stft_mask = grad::tanh(trunk.pre_activation);
    out.stft_pred = apply_complex_mask(out.stft_mask, mix);
    Var re = grad::slice(out.stft_pred, 0, 0, 1), im = grad::slice(out.stft_pred, 0, 1, 1);
    out.mag_hat = grad::sqrt(grad::add_scalar(grad::add(grad::square(re), grad::square(im)), 1e-12));
    out.phase_pred = grad::atan2(im, re);
    out.phase_mask = grad::mul_scalar(out.phase_pred, 1.0 / std::numbers::pi);
    out.attention = std::move(trunk.attention);
  }
  return out;
}

/// Full forward pass from the [2,F,T] mixture spectrogram and the two views.
inline DecoderOutputs forward(Tape& tape, const BoundParameters& p, const Tensor& mix, const Tensor& image,
                              const Tensor& depth, const ModelConfig& cfg) {
  Var mix_var = tape.constant(mix);
  AudioFeatures audio = encode_audio(p, detail::to_network_grid(tape, mix_var), cfg);
  ViewFeatures views;
  if (cfg.use_image) views.image = encode_view(p, "image", tape.constant(image), cfg);
  if (cfg.use_depth) views.depth = encode_view(p, "depth", tape.constant(depth), cfg);
  return decode(p, audio, views, mix_var, cfg);
}

// ---------------------------------------------------------------- losses

struct LossWeights {
  double mag = 1.0;
  double phs = 1.0;
  double rec = 1.0;
};

/// Ground-truth difference spectrogram with its magnitude and phase planes.
struct Target {
  Tensor stft;   // [2,F,T]
  Tensor mag;    // [1,F,T]
  Tensor phase;  // [1,F,T], atan2(im, re), 0 where both vanish
};

inline Target make_target(const Tensor& diff_spec) {
  if (diff_spec.rank() != 3 || diff_spec.dim(0) != 2)
    throw ShapeError("make_target: expected [2,F,T], got " + grad::to_string(diff_spec.shape));
  const std::size_t f = diff_spec.dim(1), t = diff_spec.dim(2), n = f * t;
  Target tg{diff_spec, Tensor({1, f, t}), Tensor({1, f, t})};
  for (std::size_t i = 0; i < n; ++i) {
    const double re = diff_spec[i], im = diff_spec[n + i];
    tg.mag[i] = std::hypot(re, im);
    tg.phase[i] = (re == 0.0 && im == 0.0) ? 0.0 : std::atan2(im, re);
  }
  return tg;
}

struct Losses {
  Var stft;  // mean squared error of the masked spectrogram
  Var mag;
  Var phs;
  Var rec;   // magnitude/phase heads recombined into real and imaginary planes
  Var total;
};

inline Losses compute_losses(Tape& tape, const DecoderOutputs& out, const Target& target, const LossWeights& w) {
  auto mse = [](Var a, Var b) { return grad::mean(grad::square(grad::sub(a, b))); };
  Var gt = tape.constant(target.stft);
  Losses l;
  l.stft = mse(out.stft_pred, gt);
  l.mag = mse(out.mag_hat, tape.constant(target.mag));
  l.phs = mse(out.phase_pred, tape.constant(target.phase));
  Var rec = grad::concat({grad::mul(out.mag_hat, grad::cos(out.phase_pred)),
                          grad::mul(out.mag_hat, grad::sin(out.phase_pred))},
                         0);
  l.rec = mse(rec, gt);
  l.total = grad::add(grad::add(l.stft, grad::mul_scalar(l.mag, w.mag)),
                      grad::add(grad::mul_scalar(l.phs, w.phs), grad::mul_scalar(l.rec, w.rec)));
  return l;
}

// ---------------------------------------------------------------- model bundle

struct BinauralNet {
  ModelConfig config;
  ParameterSet params;

  static BinauralNet create(const ModelConfig& cfg) { return {cfg, init_parameters(cfg)}; }
};

/// Mono mix -> binaural: STFT, forward, masked difference spectrogram, iSTFT,
/// then half-sum/half-difference recovery. Samples past the last full frame
/// get a zero predicted difference.
inline Waveform predict_binaural(std::span<const double> mono, const Tensor& image, const Tensor& depth,
                                 const BinauralNet& net, int sample_rate = 16000) {
  const auto spec = stft(mono, net.config.stft);
  Tape tape;
  BoundParameters p(tape, net.params, /*trainable=*/false);
  const auto out = forward(tape, p, spectrogram_tensor(spec), image, depth, net.config);
  Channel diff = istft(tensor_spectrogram(out.stft_pred.value(), net.config.stft));
  diff.resize(mono.size(), 0.0);
  auto [left, right] = recover_channels(mono, diff);
  return Waveform{{std::move(left), std::move(right)}, sample_rate};
}

struct AttentionImage {
  std::size_t layer;     // 1-based decoder layer
  std::string modality;  // "image" or "depth"
  std::size_t height, width;
  std::vector<double> pixels;  // min-max normalized to [0, 1]
};

/// Per decoder layer and modality: attention averaged over time-frequency
/// positions, laid out on the patch grid and min-max normalized.
inline std::vector<AttentionImage> export_attention(std::span<const double> mono, const Tensor& image,
                                                    const Tensor& depth, const BinauralNet& net) {
  const auto spec = stft(mono, net.config.stft);
  Tape tape;
  BoundParameters p(tape, net.params, false);
  const auto out = forward(tape, p, spectrogram_tensor(spec), image, depth, net.config);
  const std::size_t h = net.config.patch_rows(), w = net.config.patch_cols(), n = h * w;
  std::vector<AttentionImage> images;
  for (std::size_t i = 0; i < out.attention.size(); ++i) {
    const auto& la = out.attention[i];
    if (!la.fused) continue;
    const Tensor& fused = la.fused->value();
    const std::size_t tf = fused.dim(1) * fused.dim(2);
    const auto mods = view_modalities(net.config);
    for (std::size_t m = 0; m < mods.size(); ++m) {
      AttentionImage img{i + 1, mods[m], h, w, std::vector<double>(n, 0.0)};
      for (std::size_t q = 0; q < n; ++q) {
        double s = 0.0;
        const double* row = fused.data.data() + (m * n + q) * tf;
        for (std::size_t j = 0; j < tf; ++j) s += row[j];
        img.pixels[q] = s / static_cast<double>(tf);
      }
      const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
      const double a = *lo, range = *hi - *lo;
      for (double& v : img.pixels) v = range > 0 ? (v - a) / range : 0.0;
      images.push_back(std::move(img));
    }
  }
  return images;
}

}  // namespace binaural::net
