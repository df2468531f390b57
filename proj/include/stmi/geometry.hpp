#pragma once

// Spatial alignment, Euclidean distance matrices, bone and limb measurements,
// temporal differences. Shared by losses, discriminator features and tests.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "stmi/core.hpp"
#include "stmi/motion.hpp"

namespace stmi {

/// Rigid canonicalization: translation plus a rotation about the vertical
/// (+Z) axis. `degenerate_facing` flags the identity-rotation fallback.
struct AlignmentTransform {
  std::array<double, 3> translation{{0, 0, 0}};
  std::array<double, 9> rotation{{1, 0, 0, 0, 1, 0, 0, 0, 1}};  // row-major
  bool degenerate_facing = false;

  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    std::array<double, 3> q{{p[0] - translation[0], p[1] - translation[1], p[2] - translation[2]}};
    return {rotation[0] * q[0] + rotation[1] * q[1] + rotation[2] * q[2],
            rotation[3] * q[0] + rotation[4] * q[1] + rotation[5] * q[2],
            rotation[6] * q[0] + rotation[7] * q[1] + rotation[8] * q[2]};
  }

  std::array<double, 3> invert(const std::array<double, 3>& p) const {
    // rotation is orthonormal, its inverse is the transpose
    std::array<double, 3> q{{rotation[0] * p[0] + rotation[3] * p[1] + rotation[6] * p[2],
                             rotation[1] * p[0] + rotation[4] * p[1] + rotation[7] * p[2],
                             rotation[2] * p[0] + rotation[5] * p[1] + rotation[8] * p[2]}};
    return {q[0] + translation[0], q[1] + translation[1], q[2] + translation[2]};
  }
};

/// Canonicalize a sequence: frame-0 hip to the origin, frame-0 ground-plane
/// left-hip -> right-hip direction along +X. The transform is rigid over the
/// whole sequence so it is exactly invertible.
inline std::pair<MotionSequence, AlignmentTransform> align(const MotionSequence& s,
                                                           const SkeletonTopology& topo) {
  AlignmentTransform t;
  for (int c = 0; c < 3; ++c) {
    const double v = s.at(0, topo.hip, c);
    if (!std::isfinite(v)) throw ContractError("frame-0 hip coordinates must be finite");
    t.translation[static_cast<size_t>(c)] = v;
  }
  const double dx = s.at(0, topo.right_hip, 0) - s.at(0, topo.left_hip, 0);
  const double dy = s.at(0, topo.right_hip, 1) - s.at(0, topo.left_hip, 1);
  const double norm = std::sqrt(dx * dx + dy * dy);
  if (norm < 1e-9) {
    t.degenerate_facing = true;
  } else {
    const double c = dx / norm, sn = dy / norm;
    // Rz(-theta) with theta = atan2(dy, dx): maps the facing direction to +X.
    t.rotation = {c, sn, 0, -sn, c, 0, 0, 0, 1};
  }
  MotionSequence out = s;
  for (int f = 0; f < s.frames; ++f)
    for (int j = 0; j < s.joints; ++j) {
      const std::array<double, 3> p{{s.at(f, j, 0), s.at(f, j, 1), s.at(f, j, 2)}};
      const auto q = t.apply(p);
      for (int c = 0; c < 3; ++c) out.at(f, j, c) = q[static_cast<size_t>(c)];
    }
  return {std::move(out), t};
}

inline MotionSequence unalign(const MotionSequence& s, const AlignmentTransform& t) {
  MotionSequence out = s;
  for (int f = 0; f < s.frames; ++f)
    for (int j = 0; j < s.joints; ++j) {
      const std::array<double, 3> p{{s.at(f, j, 0), s.at(f, j, 1), s.at(f, j, 2)}};
      const auto q = t.invert(p);
      for (int c = 0; c < 3; ++c) out.at(f, j, c) = q[static_cast<size_t>(c)];
    }
  return out;
}

/// J x J matrix of pairwise joint distances (mm); rotation and translation
/// invariant representation of a pose.
struct EdmMatrix {
  int joints = 0;
  std::vector<double> d;  // row-major J x J

  double at(int i, int j) const { return d[static_cast<size_t>(i) * joints + j]; }
};

inline EdmMatrix edm(const double* frame, int joints) {
  EdmMatrix m;
  m.joints = joints;
  m.d.assign(static_cast<size_t>(joints) * joints, 0.0);
  for (int i = 0; i < joints; ++i)
    for (int j = i + 1; j < joints; ++j) {
      const double dx = frame[i * 3] - frame[j * 3];
      const double dy = frame[i * 3 + 1] - frame[j * 3 + 1];
      const double dz = frame[i * 3 + 2] - frame[j * 3 + 2];
      const double v = std::sqrt(dx * dx + dy * dy + dz * dz);
      m.d[static_cast<size_t>(i) * joints + j] = v;
      m.d[static_cast<size_t>(j) * joints + i] = v;
    }
  return m;
}

inline EdmMatrix edm(const MotionSequence& s, int frame_index) {
  return edm(s.frame(frame_index), s.joints);
}

inline std::vector<double> bone_lengths(const double* frame, const SkeletonTopology& topo) {
  std::vector<double> out(topo.bones.size());
  for (size_t b = 0; b < topo.bones.size(); ++b) {
    const auto [p, c] = topo.bones[b];
    const double dx = frame[p * 3] - frame[c * 3];
    const double dy = frame[p * 3 + 1] - frame[c * 3 + 1];
    const double dz = frame[p * 3 + 2] - frame[c * 3 + 2];
    out[b] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return out;
}

inline std::vector<double> bone_lengths(const MotionSequence& s, int frame_index,
                                        const SkeletonTopology& topo) {
  return bone_lengths(s.frame(frame_index), topo);
}

/// Per-bone mean length over frames where both endpoint joints are fully
/// visible. Partially visible bones are skipped, never imputed.
/// A bone that is never fully visible raises a contract error naming it.
inline std::vector<double> mean_bone_lengths(const MotionSequence& s, const OcclusionMask& m,
                                             const SkeletonTopology& topo) {
  if (s.frames != m.frames || s.joints != m.joints)
    throw ShapeError("mask shape does not match sequence");
  std::vector<double> sum(topo.bones.size(), 0.0);
  std::vector<int> count(topo.bones.size(), 0);
  for (int f = 0; f < s.frames; ++f) {
    for (size_t b = 0; b < topo.bones.size(); ++b) {
      const auto [p, c] = topo.bones[b];
      if (!m.joint_visible(f, p) || !m.joint_visible(f, c)) continue;
      const double dx = s.at(f, p, 0) - s.at(f, c, 0);
      const double dy = s.at(f, p, 1) - s.at(f, c, 1);
      const double dz = s.at(f, p, 2) - s.at(f, c, 2);
      sum[b] += std::sqrt(dx * dx + dy * dy + dz * dz);
      count[b]++;
    }
  }
  std::vector<double> out(topo.bones.size());
  for (size_t b = 0; b < topo.bones.size(); ++b) {
    if (count[b] == 0)
      throw ContractError("bone " + std::to_string(topo.bones[b].first) + "-" +
                          std::to_string(topo.bones[b].second) +
                          " is never fully visible");
    out[b] = sum[b] / count[b];
  }
  return out;
}

/// Same statistic but tolerant: bones never fully visible come back empty.
/// Used by training under aggressive per-scalar occlusion.
inline std::vector<std::optional<double>> mean_bone_lengths_partial(
    const MotionSequence& s, const OcclusionMask& m, const SkeletonTopology& topo) {
  std::vector<double> sum(topo.bones.size(), 0.0);
  std::vector<int> count(topo.bones.size(), 0);
  for (int f = 0; f < s.frames; ++f)
    for (size_t b = 0; b < topo.bones.size(); ++b) {
      const auto [p, c] = topo.bones[b];
      if (!m.joint_visible(f, p) || !m.joint_visible(f, c)) continue;
      const double dx = s.at(f, p, 0) - s.at(f, c, 0);
      const double dy = s.at(f, p, 1) - s.at(f, c, 1);
      const double dz = s.at(f, p, 2) - s.at(f, c, 2);
      sum[b] += std::sqrt(dx * dx + dy * dy + dz * dz);
      count[b]++;
    }
  std::vector<std::optional<double>> out(topo.bones.size());
  for (size_t b = 0; b < topo.bones.size(); ++b)
    if (count[b] > 0) out[b] = sum[b] / count[b];
  return out;
}

/// Distances between the extremity pairs E of one frame.
inline std::vector<double> limb_pair_distances(const double* frame,
                                               const SkeletonTopology& topo) {
  std::vector<double> out(topo.extremity_pairs.size());
  for (size_t e = 0; e < topo.extremity_pairs.size(); ++e) {
    const auto [i, j] = topo.extremity_pairs[e];
    const double dx = frame[i * 3] - frame[j * 3];
    const double dy = frame[i * 3 + 1] - frame[j * 3 + 1];
    const double dz = frame[i * 3 + 2] - frame[j * 3 + 2];
    out[e] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return out;
}

inline std::vector<double> limb_pair_distances(const MotionSequence& s, int frame_index,
                                               const SkeletonTopology& topo) {
  return limb_pair_distances(s.frame(frame_index), topo);
}

/// Elementwise |S(t) - S(t-1)|, shape (F-1) x J x 3. The motion
/// discriminator consumes these as per-joint feature maps, so the l1 is
/// applied per entry instead of collapsing dimensions.
inline std::vector<double> temporal_difference(const MotionSequence& s) {
  std::vector<double> out(static_cast<size_t>(s.frames - 1) * s.joints * 3);
  const size_t stride = static_cast<size_t>(s.joints) * 3;
  for (int f = 1; f < s.frames; ++f)
    for (size_t k = 0; k < stride; ++k)
      out[static_cast<size_t>(f - 1) * stride + k] =
          std::fabs(s.coords[static_cast<size_t>(f) * stride + k] -
                    s.coords[static_cast<size_t>(f - 1) * stride + k]);
  return out;
}

/// Elementwise |EDM(S(t)) - EDM(S(t-1))|, shape (F-1) x J x J.
inline std::vector<double> edm_temporal_difference(const MotionSequence& s) {
  const int J = s.joints;
  std::vector<double> out(static_cast<size_t>(s.frames - 1) * J * J);
  EdmMatrix prev = edm(s, 0);
  for (int f = 1; f < s.frames; ++f) {
    EdmMatrix cur = edm(s, f);
    for (size_t k = 0; k < cur.d.size(); ++k)
      out[static_cast<size_t>(f - 1) * J * J + k] = std::fabs(cur.d[k] - prev.d[k]);
    prev = std::move(cur);
  }
  return out;
}

}  // namespace stmi
