#pragma once

// The STMI network stack: frame autoencoder with attention gates, U-block
// generator with noise injection, and the three discriminator branches
// combined into one probability.

#include <string>
#include <vector>

#include "stmi/core.hpp"
#include "stmi/geometry.hpp"
#include "stmi/losses.hpp"
#include "stmi/motion.hpp"
#include "stmi/tensor.hpp"

namespace stmi {

/// Fixed ingestion scale: coordinates arrive in millimeters; the networks
/// operate on meters so activations stay in a tame range. The decoder
/// applies the inverse.
inline constexpr double kCoordScale = 1e-3;

struct FrameCodecConfig {
  int h = 16;       // pose embedding width
  int blocks = 2;   // attention blocks per codec
  int width = 0;    // hidden width; 0 means "= h"

  int hidden() const { return width > 0 ? width : h; }
  void validate() const {
    if (h < 1 || blocks < 0 || width < 0) throw ContractError("bad codec config");
  }
};

struct GeneratorConfig {
  int ublocks = 2;
  int depth = 2;     // number of stride-2 halvings per U-block
  int channels = 8;  // channels after the first halving

  void validate() const {
    if (ublocks < 1 || depth < 1 || channels < 1) throw ContractError("bad generator config");
  }
};

struct DiscriminatorConfig {
  int res_blocks = 2;
  int channels = 8;
  int feature_width = 8;  // per-block transformed feature width
  int head_width = 16;

  void validate() const {
    if (res_blocks < 1 || channels < 1 || feature_width < 1 || head_width < 1)
      throw ContractError("bad discriminator config");
  }
};

struct DiscBranches {
  bool base = true;
  bool edm = true;
  bool motion = true;

  int count() const { return (base ? 1 : 0) + (edm ? 1 : 0) + (motion ? 1 : 0); }
};

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

namespace detail {

inline void init_linear(ParameterStore& store, Rng& rng, const std::string& prefix, int in,
                        int out) {
  const double std = std::sqrt(2.0 / (in + out));
  std::vector<double> w(static_cast<size_t>(in) * out);
  for (auto& v : w) v = std * rng.normal();
  store.add(prefix + ".w", Shape{in, out}, std::move(w));
  store.add(prefix + ".b", Shape{out}, std::vector<double>(static_cast<size_t>(out), 0.0));
}

inline void init_conv(ParameterStore& store, Rng& rng, const std::string& prefix, int kh,
                      int kw, int ci, int co, bool transposed = false) {
  const double std = std::sqrt(2.0 / (kh * kw * (ci + co)));
  std::vector<double> k(static_cast<size_t>(kh) * kw * ci * co);
  for (auto& v : k) v = std * rng.normal();
  // transposed kernels are laid out kh x kw x Co x Ci
  store.add(prefix + ".k", transposed ? Shape{kh, kw, co, ci} : Shape{kh, kw, ci, co},
            std::move(k));
  store.add(prefix + ".b", Shape{co}, std::vector<double>(static_cast<size_t>(co), 0.0));
}

inline void init_codec(ParameterStore& store, Rng& rng, const FrameCodecConfig& cfg, int in,
                       int out, const std::string& prefix) {
  const int w = cfg.hidden();
  init_linear(store, rng, prefix + ".in", in, w);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".b" + std::to_string(b);
    init_linear(store, rng, bp + ".f1", w, w);
    init_linear(store, rng, bp + ".f2", w, w);
    init_linear(store, rng, bp + ".g", w, w);
  }
  init_linear(store, rng, prefix + ".out", w, out);
  init_linear(store, rng, prefix + ".gate", w, out);
  init_linear(store, rng, prefix + ".skip", w, out);
}

inline int ublock_channels(const GeneratorConfig& cfg, int level) {
  // level 1..depth
  return cfg.channels << (level - 1);
}

inline void init_ublock(ParameterStore& store, Rng& rng, const GeneratorConfig& cfg,
                        const std::string& prefix) {
  int in_ch = 1;
  for (int l = 1; l <= cfg.depth; ++l) {
    const int out_ch = ublock_channels(cfg, l);
    init_conv(store, rng, prefix + ".d" + std::to_string(l), 3, 3, in_ch, out_ch);
    store.add(prefix + ".d" + std::to_string(l) + ".noise", Shape{1}, {0.0});
    in_ch = out_ch;
  }
  // up path: deepest to shallowest; intermediate levels concat the skip
  for (int l = cfg.depth - 1; l >= 1; --l) {
    const int out_ch = ublock_channels(cfg, l);
    init_conv(store, rng, prefix + ".u" + std::to_string(l), 3, 3, in_ch, out_ch, true);
    in_ch = out_ch + ublock_channels(cfg, l);  // concat with down output
  }
  init_conv(store, rng, prefix + ".u0", 3, 3, in_ch, 1, true);
}

inline void init_rescnn(ParameterStore& store, Rng& rng, const DiscriminatorConfig& cfg,
                        int in_ch, const std::string& prefix) {
  init_conv(store, rng, prefix + ".in", 3, 3, in_ch, cfg.channels);
  for (int b = 0; b < cfg.res_blocks; ++b) {
    const std::string bp = prefix + ".r" + std::to_string(b);
    init_conv(store, rng, bp + ".c1", 3, 3, cfg.channels, cfg.channels);
    init_conv(store, rng, bp + ".c2", 3, 3, cfg.channels, cfg.channels);
    init_linear(store, rng, bp + ".f", cfg.channels, cfg.feature_width);
  }
  const int feat = cfg.res_blocks * cfg.feature_width;
  init_linear(store, rng, prefix + ".h1", feat, cfg.head_width);
  init_linear(store, rng, prefix + ".h2", cfg.head_width, 1);
}

}  // namespace detail

/// Generator-side parameters: frame encoder/decoder and U-blocks.
inline void init_generator_params(ParameterStore& store, Rng& rng,
                                  const FrameCodecConfig& codec, const GeneratorConfig& gen,
                                  int joints) {
  codec.validate();
  gen.validate();
  detail::init_codec(store, rng, codec, 3 * joints, codec.h, "enc");
  detail::init_codec(store, rng, codec, codec.h, 3 * joints, "dec");
  for (int u = 0; u < gen.ublocks; ++u)
    detail::init_ublock(store, rng, gen, "gen.u" + std::to_string(u));
}

/// Discriminator-side parameters: all three branches plus the combiner.
/// Every branch is initialized regardless of which ones an ablation enables,
/// so checkpoints have a stable schema.
inline void init_discriminator_params(ParameterStore& store, Rng& rng,
                                      const FrameCodecConfig& codec,
                                      const DiscriminatorConfig& disc, int joints) {
  disc.validate();
  detail::init_codec(store, rng, codec, 3 * joints, codec.h, "disc.base.enc");
  detail::init_rescnn(store, rng, disc, 1, "disc.base.cnn");
  detail::init_rescnn(store, rng, disc, joints, "disc.edm.cnn");
  detail::init_rescnn(store, rng, disc, joints + 3, "disc.motion.cnn");
  for (const char* b : {"base", "edm", "motion"})
    store.add(std::string("disc.comb.w.") + b, Shape{1}, {1.0});
  store.add("disc.comb.b", Shape{1}, {0.0});
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace detail {

inline DiffTensor linear(Graph& g, DiffTensor x, ParameterStore& store,
                         const std::string& prefix) {
  DiffTensor w = g.param(store, prefix + ".w");
  DiffTensor b = g.param(store, prefix + ".b");
  DiffTensor y = g.matmul(x, w);
  return g.add(y, g.expand_axes(b, y.shape(), {0}));
}

/// Attention gate of one codec stage: att(x, pi, tau) = pi*tau + x*(1-tau),
/// with tau = sigmoid(linear(x)) computed from the stage input.
inline DiffTensor attention(Graph& g, DiffTensor x_carrier, DiffTensor pi, DiffTensor tau) {
  return g.add(g.mul(pi, tau), g.mul(x_carrier, g.affine(tau, -1.0, 1.0)));
}

/// Shared frame codec body: rows of `x` are processed independently, so the
/// map is frame-wise and time invariant by construction.
inline DiffTensor codec_forward(Graph& g, DiffTensor x, ParameterStore& store,
                                const FrameCodecConfig& cfg, const std::string& prefix) {
  DiffTensor h = linear(g, x, store, prefix + ".in");
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".b" + std::to_string(b);
    DiffTensor pi = linear(g, g.relu(linear(g, h, store, bp + ".f1")), store, bp + ".f2");
    DiffTensor tau = g.sigmoid(linear(g, h, store, bp + ".g"));
    h = attention(g, h, pi, tau);
  }
  DiffTensor out = linear(g, h, store, prefix + ".out");
  DiffTensor tau = g.sigmoid(linear(g, h, store, prefix + ".gate"));
  DiffTensor skip = linear(g, h, store, prefix + ".skip");
  return attention(g, skip, out, tau);
}

inline DiffTensor conv_bias(Graph& g, DiffTensor y, ParameterStore& store,
                            const std::string& prefix) {
  DiffTensor b = g.param(store, prefix + ".b");
  return g.add(y, g.expand_axes(b, y.shape(), {0, 1}));
}

}  // namespace detail

/// Frame-wise embedding: F x J x 3 -> F x H x 1. Permuting input frames
/// permutes output rows identically.
inline DiffTensor frame_encode(Graph& g, DiffTensor s, ParameterStore& store,
                               const FrameCodecConfig& cfg, int joints,
                               const std::string& prefix = "enc") {
  cfg.validate();
  const Shape& in = s.shape();
  if (in.rank() != 3 || in[1] != joints || in[2] != 3)
    throw ShapeError("frame_encode expects F x J x 3");
  const int F = in[0];
  DiffTensor flat = g.affine(g.reshape(s, Shape{F, 3 * joints}), kCoordScale, 0.0);
  DiffTensor e = detail::codec_forward(g, flat, store, cfg, prefix);
  return g.reshape(e, Shape{F, cfg.h, 1});
}

/// Frame-wise decoding: F x H x 1 -> F x J x 3 in the aligned frame.
inline DiffTensor frame_decode(Graph& g, DiffTensor e, ParameterStore& store,
                               const FrameCodecConfig& cfg, int joints,
                               const std::string& prefix = "dec") {
  cfg.validate();
  const Shape& in = e.shape();
  if (in.rank() != 3 || in[1] != cfg.h || in[2] != 1)
    throw ShapeError("frame_decode expects F x H x 1");
  const int F = in[0];
  DiffTensor flat = g.reshape(e, Shape{F, cfg.h});
  DiffTensor out = detail::codec_forward(g, flat, store, cfg, prefix);
  return g.reshape(g.affine(out, 1.0 / kCoordScale, 0.0), Shape{F, joints, 3});
}

/// Series of U-blocks over the F x H plane treated as a one-channel image.
/// Each block downsamples with stride-2 convolutions (noise injected at each
/// level), upsamples with transposed convolutions, concatenates skip
/// connections, and refines its input additively. Output matches the input
/// shape F x H x 1.
inline DiffTensor generator_forward(Graph& g, DiffTensor e, ParameterStore& store,
                                    const GeneratorConfig& cfg, std::uint64_t noise_seed) {
  cfg.validate();
  const Shape& in = e.shape();
  if (in.rank() != 3 || in[2] != 1) throw ShapeError("generator expects F x H x 1");
  const int F = in[0], H = in[1];
  const int unit = 1 << cfg.depth;
  if (F < unit || H < unit)
    throw ContractError("spatial extents too small for depth " + std::to_string(cfg.depth));
  const int Fp = (F + unit - 1) / unit * unit;
  const int Hp = (H + unit - 1) / unit * unit;

  DiffTensor x = g.reshape(e, Shape{F, H, 1});
  if (Fp != F || Hp != H) x = g.pad_reflect2d(x, Fp, Hp);

  for (int u = 0; u < cfg.ublocks; ++u) {
    const std::string up = "gen.u" + std::to_string(u);
    std::vector<DiffTensor> down(static_cast<size_t>(cfg.depth) + 1);
    down[0] = x;
    for (int l = 1; l <= cfg.depth; ++l) {
      const std::string dp = up + ".d" + std::to_string(l);
      DiffTensor y = g.conv2d(down[static_cast<size_t>(l - 1)], g.param(store, dp + ".k"), 2);
      y = g.relu(detail::conv_bias(g, y, store, dp));
      // learned-scale noise injection, deterministic in the seed
      Rng nrng(mix_seed(noise_seed, static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(l)));
      std::vector<double> noise(static_cast<size_t>(y.shape().numel()));
      for (auto& v : noise) v = nrng.normal();
      DiffTensor scale = g.param(store, dp + ".noise");
      y = g.add(y, g.mul(scale, g.constant(y.shape(), noise)));
      down[static_cast<size_t>(l)] = y;
    }
    DiffTensor uacc = down[static_cast<size_t>(cfg.depth)];
    for (int l = cfg.depth - 1; l >= 1; --l) {
      const std::string pp = up + ".u" + std::to_string(l);
      DiffTensor y = g.conv2d(uacc, g.param(store, pp + ".k"), 2, /*transposed=*/true);
      y = g.relu(detail::conv_bias(g, y, store, pp));
      uacc = g.concat3(y, down[static_cast<size_t>(l)], 2);
    }
    DiffTensor refined = g.conv2d(uacc, g.param(store, up + ".u0.k"), 2, true);
    refined = detail::conv_bias(g, refined, store, up + ".u0");
    x = g.add(x, refined);
  }

  if (Fp != F || Hp != H) {
    x = g.slice3(x, 0, 0, F);
    x = g.slice3(x, 1, 0, H);
  }
  return g.reshape(x, Shape{F, H, 1});
}

/// Residual CNN feature extractor: consecutive two-convolution blocks with
/// additive shortcuts; each block output is pooled, linearly transformed and
/// concatenated into the feature vector.
inline DiffTensor residual_features(Graph& g, DiffTensor img, ParameterStore& store,
                                    const DiscriminatorConfig& cfg, const std::string& prefix) {
  cfg.validate();
  if (img.shape().rank() != 3) throw ShapeError("residual_features expects H x W x C");
  DiffTensor x = g.relu(detail::conv_bias(
      g, g.conv2d(img, g.param(store, prefix + ".in.k"), 1), store, prefix + ".in"));
  DiffTensor feats;
  for (int b = 0; b < cfg.res_blocks; ++b) {
    const std::string bp = prefix + ".r" + std::to_string(b);
    DiffTensor h = g.relu(detail::conv_bias(
        g, g.conv2d(x, g.param(store, bp + ".c1.k"), 1), store, bp + ".c1"));
    h = detail::conv_bias(g, g.conv2d(h, g.param(store, bp + ".c2.k"), 1), store, bp + ".c2");
    x = g.relu(g.add(x, h));
    DiffTensor pooled = g.reshape(g.mean_axes(x, {0, 1}), Shape{1, cfg.channels});
    DiffTensor f = g.relu(detail::linear(g, pooled, store, bp + ".f"));
    DiffTensor f3 = g.reshape(f, Shape{1, 1, cfg.feature_width});
    feats = b == 0 ? f3 : g.concat3(feats, f3, 2);
  }
  return g.reshape(feats, Shape{1, cfg.res_blocks * cfg.feature_width});
}

namespace detail {

inline DiffTensor branch_score(Graph& g, DiffTensor features, ParameterStore& store,
                               const std::string& prefix) {
  DiffTensor h = g.relu(linear(g, features, store, prefix + ".h1"));
  return g.sigmoid(g.reshape(linear(g, h, store, prefix + ".h2"), scalar_shape()));
}

}  // namespace detail

/// Base branch: the frame-encoder architecture (independent parameters)
/// applied to the raw coordinates, then the residual classifier on the
/// embedded F x H plane.
inline DiffTensor disc_base(Graph& g, DiffTensor s_out, ParameterStore& store,
                            const FrameCodecConfig& codec, const DiscriminatorConfig& cfg,
                            int joints) {
  DiffTensor e = frame_encode(g, s_out, store, codec, joints, "disc.base.enc");
  DiffTensor img = g.reshape(e, Shape{e.shape()[0], codec.h, 1});
  DiffTensor feat = residual_features(g, img, store, cfg, "disc.base.cnn");
  return detail::branch_score(g, feat, store, "disc.base.cnn");
}

/// EDM branch: per-frame Euclidean distance matrices as an F x J image with
/// J channels, differentiable through the distance computation.
inline DiffTensor disc_edm(Graph& g, DiffTensor s_out, ParameterStore& store,
                           const DiscriminatorConfig& cfg) {
  DiffTensor edm_stack = g.affine(g.pairwise_edm(s_out), kCoordScale, 0.0);
  DiffTensor feat = residual_features(g, edm_stack, store, cfg, "disc.edm.cnn");
  return detail::branch_score(g, feat, store, "disc.edm.cnn");
}

/// Motion branch: concatenation of elementwise-absolute temporal differences
/// of coordinates and of EDM representations, shape (F-1) x J x (3+J).
inline DiffTensor disc_motion(Graph& g, DiffTensor s_out, ParameterStore& store,
                              const DiscriminatorConfig& cfg) {
  const int F = s_out.shape()[0];
  DiffTensor cur = g.slice3(s_out, 0, 1, F - 1);
  DiffTensor prev = g.slice3(s_out, 0, 0, F - 1);
  DiffTensor coord_diff = g.affine(g.abs(g.sub(cur, prev)), kCoordScale, 0.0);
  DiffTensor edm_stack = g.pairwise_edm(s_out);
  DiffTensor edm_cur = g.slice3(edm_stack, 0, 1, F - 1);
  DiffTensor edm_prev = g.slice3(edm_stack, 0, 0, F - 1);
  DiffTensor edm_diff = g.affine(g.abs(g.sub(edm_cur, edm_prev)), kCoordScale, 0.0);
  DiffTensor img = g.concat3(coord_diff, edm_diff, 2);
  DiffTensor feat = residual_features(g, img, store, cfg, "disc.motion.cnn");
  return detail::branch_score(g, feat, store, "disc.motion.cnn");
}

/// Linear combination of the enabled branch scores through a sigmoid.
inline DiffTensor discriminate(Graph& g, DiffTensor s_out, ParameterStore& store,
                               const FrameCodecConfig& codec, const DiscriminatorConfig& cfg,
                               const DiscBranches& branches, int joints) {
  if (branches.count() == 0) throw ContractError("at least one discriminator branch required");
  DiffTensor acc = g.param(store, "disc.comb.b");
  if (branches.base) {
    DiffTensor s = disc_base(g, s_out, store, codec, cfg, joints);
    acc = g.add(acc, g.mul(g.param(store, "disc.comb.w.base"), g.reshape(s, scalar_shape())));
  }
  if (branches.edm) {
    DiffTensor s = disc_edm(g, s_out, store, cfg);
    acc = g.add(acc, g.mul(g.param(store, "disc.comb.w.edm"), g.reshape(s, scalar_shape())));
  }
  if (branches.motion) {
    DiffTensor s = disc_motion(g, s_out, store, cfg);
    acc = g.add(acc, g.mul(g.param(store, "disc.comb.w.motion"), g.reshape(s, scalar_shape())));
  }
  // keep the probability strictly inside (0,1): a saturated sigmoid rounds
  // to exactly 1.0 in f64 and the losses reject that
  return g.clamp(g.sigmoid(acc), kProbEps, 1.0 - kProbEps);
}

/// Full inpainting pipeline as a graph node:
/// align -> mask -> encode -> U-blocks -> decode -> unalign.
/// Returns the world-frame F x J x 3 output; `transform_out` receives the
/// alignment used (for tests and callers that need the aligned frame).
inline DiffTensor stmi_forward_node(Graph& g, const MotionSequence& s, const OcclusionMask& m,
                                    ParameterStore& store, const FrameCodecConfig& codec,
                                    const GeneratorConfig& gen, const SkeletonTopology& topo,
                                    std::uint64_t noise_seed,
                                    AlignmentTransform* transform_out = nullptr) {
  auto [aligned, transform] = align(s, topo);
  MotionSequence masked = apply_mask(aligned, m);
  DiffTensor x = g.constant(Shape{s.frames, s.joints, 3}, masked.coords);
  DiffTensor e = frame_encode(g, x, store, codec, topo.joints, "enc");
  DiffTensor h = generator_forward(g, e, store, gen, noise_seed);
  DiffTensor y = frame_decode(g, h, store, codec, topo.joints, "dec");
  // undo the rigid alignment: world_row = aligned_row * R + t
  const int N = s.frames * s.joints;
  DiffTensor y2d = g.reshape(y, Shape{N, 3});
  DiffTensor rot = g.constant(Shape{3, 3}, std::vector<double>(transform.rotation.begin(),
                                                               transform.rotation.end()));
  DiffTensor t = g.constant(Shape{3}, std::vector<double>(transform.translation.begin(),
                                                          transform.translation.end()));
  DiffTensor world = g.add(g.matmul(y2d, rot), g.expand_axes(t, Shape{N, 3}, {0}));
  if (transform_out) *transform_out = transform;
  return g.reshape(world, Shape{s.frames, s.joints, 3});
}

/// Value-level wrapper around stmi_forward_node.
inline MotionSequence stmi_forward(const MotionSequence& s, const OcclusionMask& m,
                                   ParameterStore& store, const FrameCodecConfig& codec,
                                   const GeneratorConfig& gen, const SkeletonTopology& topo,
                                   std::uint64_t noise_seed) {
  Graph g;
  DiffTensor out = stmi_forward_node(g, s, m, store, codec, gen, topo, noise_seed);
  MotionSequence result(s.frames, s.joints, s.fps);
  result.coords = out.value();
  return result;
}

}  // namespace stmi
