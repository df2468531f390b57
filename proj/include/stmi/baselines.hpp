#pragma once

// Deterministic completion baselines used as comparison points in the
// occlusion and prediction experiments.

#include "stmi/core.hpp"
#include "stmi/motion.hpp"

namespace stmi {

/// True when the mask is a future-prediction pattern: a fully visible prefix
/// followed by fully occluded frames, with at least one visible frame.
inline bool is_future_mask(const OcclusionMask& m) {
  int first_hidden = m.frames;
  for (int f = 0; f < m.frames; ++f) {
    bool all_visible = true, all_hidden = true;
    for (int j = 0; j < m.joints; ++j)
      for (int c = 0; c < 3; ++c) {
        if (m.at(f, j, c)) all_hidden = false;
        else all_visible = false;
      }
    if (first_hidden == m.frames) {
      if (all_hidden) first_hidden = f;
      else if (!all_visible) return false;
    } else if (!all_hidden) {
      return false;
    }
  }
  return first_hidden > 0;
}

/// Repeat the last fully visible frame over the predicted frames.
inline MotionSequence zero_velocity(const MotionSequence& s, const OcclusionMask& m) {
  if (s.frames != m.frames || s.joints != m.joints)
    throw ShapeError("mask shape does not match sequence");
  if (!is_future_mask(m))
    throw ContractError("zero_velocity requires a future-prediction mask");
  int last_visible = 0;
  for (int f = 0; f < m.frames; ++f)
    if (m.frame_fully_visible(f)) last_visible = f;
  MotionSequence out = s;
  for (int f = last_visible + 1; f < s.frames; ++f)
    for (int j = 0; j < s.joints; ++j)
      for (int c = 0; c < 3; ++c) out.at(f, j, c) = s.at(last_visible, j, c);
  return out;
}

namespace detail {

inline MotionSequence interpolate_impl(const MotionSequence& s, const OcclusionMask& m,
                                       bool strict);

}  // namespace detail

/// Straight-line interpolation per scalar channel between the nearest
/// visible frames; leading/trailing gaps hold the nearest visible value.
/// A channel with no visible frame at all violates the precondition.
inline MotionSequence linear_interpolate(const MotionSequence& s, const OcclusionMask& m) {
  return detail::interpolate_impl(s, m, /*strict=*/true);
}

/// Experiment-harness variant: channels that are never observed keep the
/// masked zeros instead of raising (structured occlusions at high rates can
/// hide a joint for a whole sequence).
inline MotionSequence linear_interpolate_lenient(const MotionSequence& s,
                                                 const OcclusionMask& m) {
  return detail::interpolate_impl(s, m, /*strict=*/false);
}

namespace detail {

inline MotionSequence interpolate_impl(const MotionSequence& s, const OcclusionMask& m,
                                       bool strict) {
  if (s.frames != m.frames || s.joints != m.joints)
    throw ShapeError("mask shape does not match sequence");
  MotionSequence out = s;
  const int F = s.frames;
  for (int j = 0; j < s.joints; ++j)
    for (int c = 0; c < 3; ++c) {
      // collect visible frame indices for this channel
      int prev = -1;
      for (int f = 0; f < F; ++f) {
        if (m.at(f, j, c)) {
          prev = f;
          continue;
        }
        // find next visible frame
        int next = -1;
        for (int g = f + 1; g < F; ++g)
          if (m.at(g, j, c)) { next = g; break; }
        if (prev >= 0 && next >= 0) {
          const double t = static_cast<double>(f - prev) / (next - prev);
          out.at(f, j, c) = (1.0 - t) * s.at(prev, j, c) + t * s.at(next, j, c);
        } else if (prev >= 0) {
          out.at(f, j, c) = s.at(prev, j, c);
        } else if (next >= 0) {
          out.at(f, j, c) = s.at(next, j, c);
        } else if (strict) {
          throw ContractError("channel has no visible frame to interpolate from");
        } else {
          out.at(f, j, c) = 0.0;
        }
      }
    }
  return out;
}

}  // namespace detail

}  // namespace stmi
