#pragma once

// Differentiable losses: masked reconstruction, limb distances, bone
// lengths, the regularized adversarial pair, and their weighted combination.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "stmi/core.hpp"
#include "stmi/geometry.hpp"
#include "stmi/motion.hpp"
#include "stmi/tensor.hpp"

namespace stmi {

struct LossWeights {
  double rec = 1.0;
  double limb = 0.1;
  double bone = 0.1;
  double disc = 1.0;
  double gen = 1.0;
  double gamma = 10.0;  // R1 coefficient

  void validate() const {
    for (double v : {rec, limb, bone, disc, gen, gamma})
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ContractError("loss weights must be finite and non-negative");
  }
};

/// Probability clamp for log arguments.
inline constexpr double kProbEps = 1e-7;

namespace detail {

inline DiffTensor sequence_node(Graph& g, const MotionSequence& s, bool requires_grad = false) {
  return g.leaf(Shape{s.frames, s.joints, 3}, s.coords, requires_grad);
}

inline DiffTensor mask_node(Graph& g, const OcclusionMask& m) {
  std::vector<double> v(m.bits.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = m.bits[i];
  return g.constant(Shape{m.frames, m.joints, 3}, v);
}

/// F x 3 coordinate rows of one joint.
inline DiffTensor joint_rows(Graph& g, DiffTensor seq, int joint) {
  const int F = seq.shape()[0];
  return g.reshape(g.slice3(seq, 1, joint, 1), Shape{F, 3});
}

}  // namespace detail

/// || (S_out o M) - (S o M) ||_2 : one L2 norm over all visible entries.
/// The mask multiplication makes the gradient identically zero at occluded
/// entries.
inline DiffTensor rec_loss(Graph& g, DiffTensor s_out, const MotionSequence& s,
                           const OcclusionMask& m) {
  if (s_out.shape() != Shape{s.frames, s.joints, 3})
    throw ShapeError("generated tensor shape does not match sequence");
  if (m.frames != s.frames || m.joints != s.joints)
    throw ShapeError("mask shape does not match sequence");
  DiffTensor target = detail::sequence_node(g, s);
  DiffTensor mask = detail::mask_node(g, m);
  return g.l2norm(g.mul(g.sub(s_out, target), mask));
}

/// Sum over frames and limb pairs of | d_gt - d_gen |, where a pair
/// contributes at frame f only if both of its joints are fully visible.
inline DiffTensor limb_loss(Graph& g, DiffTensor s_out, const MotionSequence& s,
                            const OcclusionMask& m, const SkeletonTopology& topo) {
  if (s_out.shape() != Shape{s.frames, s.joints, 3})
    throw ShapeError("generated tensor shape does not match sequence");
  if (topo.extremity_pairs.empty()) throw ContractError("topology has no extremity pairs");
  const int F = s.frames;
  DiffTensor total = g.scalar(0.0);
  for (const auto& [i, j] : topo.extremity_pairs) {
    std::vector<double> gt_dist(static_cast<size_t>(F), 0.0);
    std::vector<double> weight(static_cast<size_t>(F), 0.0);
    bool any = false;
    for (int f = 0; f < F; ++f) {
      if (!m.joint_visible(f, i) || !m.joint_visible(f, j)) continue;
      const double dx = s.at(f, i, 0) - s.at(f, j, 0);
      const double dy = s.at(f, i, 1) - s.at(f, j, 1);
      const double dz = s.at(f, i, 2) - s.at(f, j, 2);
      gt_dist[static_cast<size_t>(f)] = std::sqrt(dx * dx + dy * dy + dz * dz);
      weight[static_cast<size_t>(f)] = 1.0;
      any = true;
    }
    if (!any) continue;
    DiffTensor diff = g.sub(detail::joint_rows(g, s_out, i), detail::joint_rows(g, s_out, j));
    DiffTensor gen_dist = g.rownorm(diff);
    DiffTensor err = g.abs(g.sub(gen_dist, g.constant(Shape{F}, gt_dist)));
    total = g.add(total, g.sum_all(g.mul(err, g.constant(Shape{F}, weight))));
  }
  return total;
}

enum class BonePolicy {
  kStrict,              // a bone never fully visible raises a contract error
  kSkipUndefinedBones,  // such bones are dropped from the sum
};

/// Sum over every frame and bone of | mean_visible_length - frame_length |,
/// with the reference lengths measured on the visible part of the original
/// sequence and the per-frame lengths taken from the generated tensor.
inline DiffTensor bone_loss(Graph& g, DiffTensor s_out, const MotionSequence& s,
                            const OcclusionMask& m, const SkeletonTopology& topo,
                            BonePolicy policy = BonePolicy::kStrict) {
  if (s_out.shape() != Shape{s.frames, s.joints, 3})
    throw ShapeError("generated tensor shape does not match sequence");
  std::vector<std::optional<double>> ref;
  if (policy == BonePolicy::kStrict) {
    auto strict = mean_bone_lengths(s, m, topo);
    ref.assign(strict.begin(), strict.end());
  } else {
    ref = mean_bone_lengths_partial(s, m, topo);
  }
  DiffTensor total = g.scalar(0.0);
  const int F = s.frames;
  for (size_t b = 0; b < topo.bones.size(); ++b) {
    if (!ref[b]) continue;
    const auto [p, c] = topo.bones[b];
    DiffTensor diff = g.sub(detail::joint_rows(g, s_out, p), detail::joint_rows(g, s_out, c));
    DiffTensor lengths = g.rownorm(diff);
    total = g.add(total, g.sum_all(g.abs(g.affine(lengths, 1.0, -*ref[b]))));
  }
  (void)F;
  return total;
}

/// Discriminator objective in minimized form:
///   -( log(1 - D(fake)) + log(D(real)) ) + (gamma/2) * ||grad_x D(real)||^2.
/// The discriminator maximizes the two log terms and minimizes the penalty.
/// Probabilities are clamped away from {0,1} before the logs.
inline DiffTensor disc_loss(Graph& g, DiffTensor d_real, DiffTensor d_fake,
                            DiffTensor r1_grad_sqnorm, double gamma) {
  for (DiffTensor d : {d_real, d_fake}) {
    if (!d.shape().is_scalar()) throw ContractError("discriminator outputs must be scalar");
    const double v = d.scalar();
    if (!(v > 0.0 && v < 1.0))
      throw ContractError("discriminator output " + fmt_g17(v) + " outside (0,1)");
  }
  DiffTensor one_minus_fake = g.affine(d_fake, -1.0, 1.0);
  DiffTensor objective = g.add(g.log(g.clamp(one_minus_fake, kProbEps, 1.0 - kProbEps)),
                               g.log(g.clamp(d_real, kProbEps, 1.0 - kProbEps)));
  DiffTensor loss = g.neg(objective);
  if (r1_grad_sqnorm.defined() && gamma > 0.0)
    loss = g.add(loss, g.affine(r1_grad_sqnorm, 0.5 * gamma, 0.0));
  return loss;
}

/// Non-saturating generator objective in minimized form: -log D(fake).
inline DiffTensor gen_loss(Graph& g, DiffTensor d_fake) {
  if (!d_fake.shape().is_scalar()) throw ContractError("discriminator output must be scalar");
  const double v = d_fake.scalar();
  if (!(v > 0.0 && v < 1.0))
    throw ContractError("discriminator output " + fmt_g17(v) + " outside (0,1)");
  return g.neg(g.log(g.clamp(d_fake, kProbEps, 1.0 - kProbEps)));
}

/// Per-step scalar summary. `disc` and `gen` are the minimized forms of the
/// adversarial objectives; `r1` is the (gamma/2)-scaled penalty inside
/// `disc`, recorded separately for monitoring.
struct LossReport {
  double rec = 0.0;
  double limb = 0.0;
  double bone = 0.0;
  double disc = 0.0;
  double gen = 0.0;
  double r1 = 0.0;
  double total = 0.0;

  bool finite() const {
    for (double v : {rec, limb, bone, disc, gen, r1, total})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Weighted combination; zeroing a weight removes the term entirely.
inline LossReport full_loss(double rec, double limb, double bone, double disc, double gen,
                            double r1, const LossWeights& w) {
  w.validate();
  LossReport r;
  r.rec = rec;
  r.limb = limb;
  r.bone = bone;
  r.disc = disc;
  r.gen = gen;
  r.r1 = r1;
  r.total = w.rec * rec + w.limb * limb + w.bone * bone + w.disc * disc + w.gen * gen;
  return r;
}

inline void write_loss_csv_header(std::ostream& os) {
  os << "step,rec,limb,bone,disc,gen,r1,total\n";
}

inline void write_loss_csv_row(std::ostream& os, int step, const LossReport& r) {
  os << step << "," << fmt_g17(r.rec) << "," << fmt_g17(r.limb) << "," << fmt_g17(r.bone)
     << "," << fmt_g17(r.disc) << "," << fmt_g17(r.gen) << "," << fmt_g17(r.r1) << ","
     << fmt_g17(r.total) << "\n";
}

}  // namespace stmi
