#pragma once

// Skeleton sequence / occlusion-mask data model, the sequence and dataset
// file formats, occlusion-pattern generators, and the synthetic dataset
// used for desk-scale experiments.

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stmi/core.hpp"
#include "stmi/params.hpp"

namespace stmi {

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

struct SkeletonTopology {
  int joints = 0;
  std::vector<std::pair<int, int>> bones;            // (parent, child)
  std::vector<std::pair<int, int>> extremity_pairs;  // limb pairs E
  int hip = 0;
  int left_hip = 0;
  int right_hip = 0;
  std::string id;

  int bone_count() const { return static_cast<int>(bones.size()); }

  void validate() const {
    if (joints < 2) throw ContractError("topology needs at least 2 joints");
    if (static_cast<int>(bones.size()) != joints - 1)
      throw ContractError("bone edges must form a tree (J-1 edges)");
    std::vector<int> degree(static_cast<size_t>(joints), 0);
    for (auto [p, c] : bones) {
      if (p < 0 || p >= joints || c < 0 || c >= joints)
        throw ContractError("bone index out of range");
      degree[static_cast<size_t>(p)]++;
      degree[static_cast<size_t>(c)]++;
    }
    // connectivity: union-find over edges
    std::vector<int> root(static_cast<size_t>(joints));
    for (int i = 0; i < joints; ++i) root[static_cast<size_t>(i)] = i;
    std::function<int(int)> find = [&](int x) {
      while (root[static_cast<size_t>(x)] != x) x = root[static_cast<size_t>(x)] = root[static_cast<size_t>(root[static_cast<size_t>(x)])];
      return x;
    };
    for (auto [p, c] : bones) root[static_cast<size_t>(find(p))] = find(c);
    for (int i = 1; i < joints; ++i)
      if (find(i) != find(0)) throw ContractError("bone edges do not connect all joints");
    for (auto [a, b] : extremity_pairs)
      if (a < 0 || a >= joints || b < 0 || b >= joints)
        throw ContractError("extremity index out of range");
    if (hip < 0 || hip >= joints) throw ContractError("hip index out of range");
  }

  /// Maximal chains from each leaf joint toward the root, stopping at the
  /// first branching joint. These are the units dropped by limb occlusion.
  std::vector<std::vector<int>> limb_chains() const {
    std::vector<std::vector<int>> adj(static_cast<size_t>(joints));
    for (auto [p, c] : bones) {
      adj[static_cast<size_t>(p)].push_back(c);
      adj[static_cast<size_t>(c)].push_back(p);
    }
    std::vector<std::vector<int>> chains;
    for (int j = 0; j < joints; ++j) {
      if (j == hip || adj[static_cast<size_t>(j)].size() != 1) continue;
      std::vector<int> chain{j};
      int prev = j, cur = adj[static_cast<size_t>(j)][0];
      while (cur != hip && adj[static_cast<size_t>(cur)].size() == 2) {
        chain.push_back(cur);
        const auto& nb = adj[static_cast<size_t>(cur)];
        const int next = nb[0] == prev ? nb[1] : nb[0];
        prev = cur;
        cur = next;
      }
      chains.push_back(std::move(chain));
    }
    return chains;
  }

  /// 17-joint tree: hip root, spine-thorax-neck-head column, two arms from
  /// the thorax, two legs from the hip. Extremity pairs are all pairs among
  /// head, wrists and ankles.
  static SkeletonTopology default17() {
    SkeletonTopology t;
    t.joints = 17;
    t.id = "h17";
    // 0 hip, 1 spine, 2 thorax, 3 neck, 4 head,
    // 5 l-shoulder, 6 l-elbow, 7 l-wrist, 8 r-shoulder, 9 r-elbow, 10 r-wrist,
    // 11 l-hip, 12 l-knee, 13 l-ankle, 14 r-hip, 15 r-knee, 16 r-ankle
    t.bones = {{0, 1},  {1, 2},  {2, 3},  {3, 4},  {2, 5},  {5, 6},
               {6, 7},  {2, 8},  {8, 9},  {9, 10}, {0, 11}, {11, 12},
               {12, 13}, {0, 14}, {14, 15}, {15, 16}};
    const int ext[5] = {4, 7, 10, 13, 16};  // head, wrists, ankles
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) t.extremity_pairs.emplace_back(ext[i], ext[j]);
    t.hip = 0;
    t.left_hip = 11;
    t.right_hip = 14;
    t.validate();
    return t;
  }
};

// ---------------------------------------------------------------------------
// Sequence and mask
// ---------------------------------------------------------------------------

/// F x J x 3 joint coordinates in millimeters, camera frame.
struct MotionSequence {
  int frames = 0;
  int joints = 0;
  double fps = 12.5;
  std::vector<double> coords;  // row-major F x J x 3

  MotionSequence() = default;
  MotionSequence(int f, int j, double fps_) : frames(f), joints(j), fps(fps_) {
    if (f < 2) throw ContractError("sequence needs at least 2 frames");
    coords.assign(static_cast<size_t>(f) * j * 3, 0.0);
  }

  double& at(int f, int j, int c) {
    return coords[(static_cast<size_t>(f) * joints + j) * 3 + static_cast<size_t>(c)];
  }
  double at(int f, int j, int c) const {
    return coords[(static_cast<size_t>(f) * joints + j) * 3 + static_cast<size_t>(c)];
  }
  const double* frame(int f) const { return coords.data() + static_cast<size_t>(f) * joints * 3; }
  double* frame(int f) { return coords.data() + static_cast<size_t>(f) * joints * 3; }

  double duration_s() const { return frames / fps; }
};

/// Binary visibility tensor, same layout as the sequence; 1 = visible.
struct OcclusionMask {
  int frames = 0;
  int joints = 0;
  std::vector<std::uint8_t> bits;

  OcclusionMask() = default;
  OcclusionMask(int f, int j, std::uint8_t fill = 1) : frames(f), joints(j) {
    bits.assign(static_cast<size_t>(f) * j * 3, fill);
  }

  std::uint8_t& at(int f, int j, int c) {
    return bits[(static_cast<size_t>(f) * joints + j) * 3 + static_cast<size_t>(c)];
  }
  std::uint8_t at(int f, int j, int c) const {
    return bits[(static_cast<size_t>(f) * joints + j) * 3 + static_cast<size_t>(c)];
  }

  void set_joint(int f, int j, std::uint8_t v) {
    for (int c = 0; c < 3; ++c) at(f, j, c) = v;
  }

  bool joint_visible(int f, int j) const {
    return at(f, j, 0) && at(f, j, 1) && at(f, j, 2);
  }

  bool frame_fully_visible(int f) const {
    for (int j = 0; j < joints; ++j)
      if (!joint_visible(f, j)) return false;
    return true;
  }

  double visible_fraction() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return static_cast<double>(n) / static_cast<double>(bits.size());
  }
};

struct MotionDataset {
  SkeletonTopology topology;
  std::vector<MotionSequence> sequences;
  std::vector<std::string> names;  // file-relative names, parallel to sequences
  std::vector<std::string> tags;   // "train" or "val", parallel to sequences
  std::string split_tag = "all";

  int size() const { return static_cast<int>(sequences.size()); }

  MotionDataset subset(const std::string& tag) const {
    MotionDataset out;
    out.topology = topology;
    out.split_tag = tag;
    for (int i = 0; i < size(); ++i) {
      if (tags[static_cast<size_t>(i)] != tag) continue;
      out.sequences.push_back(sequences[static_cast<size_t>(i)]);
      out.names.push_back(names[static_cast<size_t>(i)]);
      out.tags.push_back(tag);
    }
    return out;
  }

  void validate() const {
    for (const auto& s : sequences) {
      if (s.joints != topology.joints)
        throw ContractError("sequence joint count does not match topology");
      if (!sequences.empty() && s.fps != sequences[0].fps)
        throw ContractError("sequences must share fps");
    }
  }
};

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

/// S o M: zero out occluded entries.
inline MotionSequence apply_mask(const MotionSequence& s, const OcclusionMask& m) {
  if (s.frames != m.frames || s.joints != m.joints)
    throw ShapeError("mask shape does not match sequence");
  MotionSequence out = s;
  for (size_t i = 0; i < out.coords.size(); ++i)
    if (!m.bits[i]) out.coords[i] = 0.0;
  return out;
}

/// Future-prediction mask: frames [0, visible) kept, the rest dropped.
inline OcclusionMask mask_future(int frames, int joints, int visible_frames) {
  if (visible_frames < 0 || visible_frames > frames)
    throw ContractError("visible_frames out of range");
  OcclusionMask m(frames, joints, 1);
  for (int f = visible_frames; f < frames; ++f)
    for (int j = 0; j < joints; ++j) m.set_joint(f, j, 0);
  return m;
}

/// Independent per-joint occlusion (all three coordinates together).
inline OcclusionMask mask_random_joints(int frames, int joints, double rate,
                                        std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ContractError("rate must be in [0,1]");
  OcclusionMask m(frames, joints, 1);
  Rng rng(mix_seed(seed, 0x6A6F696E74ULL));
  for (int f = 0; f < frames; ++f)
    for (int j = 0; j < joints; ++j)
      if (rng.uniform() < rate) m.set_joint(f, j, 0);
  return m;
}

/// Whole limb chains dropped per frame until roughly rate*J joints are gone.
/// The chain that would cross the target is dropped with the fractional
/// probability that makes the expected occluded count hit the target exactly
/// (when the chains cover enough joints to reach it).
inline OcclusionMask mask_random_limbs(int frames, int joints,
                                       const SkeletonTopology& topo, double rate,
                                       std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ContractError("rate must be in [0,1]");
  auto chains = topo.limb_chains();
  if (chains.empty()) throw ContractError("topology has no limb chains");
  OcclusionMask m(frames, joints, 1);
  Rng rng(mix_seed(seed, 0x6C696D62ULL));
  const double target = rate * joints;
  std::vector<int> order(chains.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int f = 0; f < frames; ++f) {
    // Fisher-Yates on the chain order, then drop a prefix.
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    double occluded = 0;
    for (int ci : order) {
      if (occluded >= target) break;
      const auto& chain = chains[static_cast<size_t>(ci)];
      const double len = static_cast<double>(chain.size());
      if (occluded + len > target && rng.uniform() >= (target - occluded) / len) {
        occluded = target;  // this chain stays visible
        continue;
      }
      for (int j : chain) m.set_joint(f, j, 0);
      occluded += len;
    }
  }
  return m;
}

/// Whole frames dropped uniformly without replacement; the first and last
/// frame stay visible so interpolation is always defined.
inline OcclusionMask mask_missing_frames(int frames, int joints, double rate,
                                         std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ContractError("rate must be in [0,1]");
  OcclusionMask m(frames, joints, 1);
  const int interior = std::max(frames - 2, 0);
  int k = static_cast<int>(std::lround(rate * frames));
  k = std::min(k, interior);
  Rng rng(mix_seed(seed, 0x6672616D65ULL));
  std::vector<int> idx(static_cast<size_t>(interior));
  for (int i = 0; i < interior; ++i) idx[static_cast<size_t>(i)] = i + 1;
  for (int i = interior - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < joints; ++j) m.set_joint(idx[static_cast<size_t>(i)], j, 0);
  return m;
}

/// Independent per-scalar occlusion ("noisy transmission").
inline OcclusionMask mask_noisy_transmission(int frames, int joints, double rate,
                                             std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ContractError("rate must be in [0,1]");
  OcclusionMask m(frames, joints, 1);
  Rng rng(mix_seed(seed, 0x7472616E73ULL));
  for (auto& b : m.bits) b = rng.uniform() < rate ? 0 : 1;
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class Archetype { Walk, Turn, StopAndGo, StandStill };

inline const char* archetype_name(Archetype a) {
  switch (a) {
    case Archetype::Walk: return "walk";
    case Archetype::Turn: return "turn";
    case Archetype::StopAndGo: return "stopandgo";
    case Archetype::StandStill: return "standstill";
  }
  return "?";
}

namespace detail {

inline std::array<double, 3> rotate_z(const std::array<double, 3>& v, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

inline std::array<double, 3> rotate_axis(const std::array<double, 3>& v,
                                         const std::array<double, 3>& axis, double angle) {
  // Rodrigues rotation; axis must be unit length.
  const double c = std::cos(angle), s = std::sin(angle);
  const double dot = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
  const std::array<double, 3> cross = {axis[1] * v[2] - axis[2] * v[1],
                                       axis[2] * v[0] - axis[0] * v[2],
                                       axis[0] * v[1] - axis[1] * v[0]};
  std::array<double, 3> out;
  for (int i = 0; i < 3; ++i) out[i] = v[i] * c + cross[i] * s + axis[i] * dot * (1.0 - c);
  return out;
}

/// Bone rest offsets for default17, millimeters, +Z up, facing +Y at yaw 0.
inline std::array<double, 3> rest_offset17(int parent, int child) {
  switch (child) {
    case 1: return {0, 0, 120};     // hip -> spine
    case 2: return {0, 0, 140};     // spine -> thorax
    case 3: return {0, 0, 110};     // thorax -> neck
    case 4: return {0, 0, 120};     // neck -> head
    case 5: return {-180, 0, -10};  // thorax -> l-shoulder
    case 6: return {-30, 0, -280};  // l-shoulder -> l-elbow
    case 7: return {-10, 0, -250};  // l-elbow -> l-wrist
    case 8: return {180, 0, -10};
    case 9: return {30, 0, -280};
    case 10: return {10, 0, -250};
    case 11: return {-110, 0, -30};  // hip -> l-hip
    case 12: return {-10, 0, -450};
    case 13: return {0, 0, -430};
    case 14: return {110, 0, -30};
    case 15: return {10, 0, -450};
    case 16: return {0, 0, -430};
    default:
      (void)parent;
      throw ContractError("rest_offset17: unknown child joint");
  }
}

}  // namespace detail

/// Procedural anthropomorphic sequences: a root trajectory per archetype plus
/// per-limb sinusoidal articulation. Bones are placed by rotating fixed rest
/// offsets, so their lengths are constant within a sequence by construction.
inline MotionSequence synth_sequence(Archetype kind, int frames, double fps,
                                     const SkeletonTopology& topo, std::uint64_t seed) {
  if (topo.id != "h17")
    throw ContractError("synth_sequence supports the default 17-joint topology");
  Rng rng(mix_seed(seed, 0x73796E7468ULL));
  MotionSequence s(frames, topo.joints, fps);

  const double freq = rng.uniform(0.5, 2.0);           // Hz
  const double phase = rng.uniform(0.0, 6.28318530717958648);
  const double leg_amp = rng.uniform(0.25, 0.55);      // rad
  const double arm_amp = rng.uniform(0.15, 0.45);
  const double sway_amp = rng.uniform(0.02, 0.08);
  const double speed = rng.uniform(700.0, 1500.0);     // mm/s
  const double heading0 = rng.uniform(0.0, 6.28318530717958648);
  const double base_x = rng.uniform(-500.0, 500.0);
  const double base_y = rng.uniform(-500.0, 500.0);
  // Latent future events: onset strictly inside the second half of the clip,
  // so the continuation is genuinely multimodal given the first half.
  const double event_t = rng.uniform(0.55, 0.95) * frames / fps;
  const double turn_rate = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.4);

  std::vector<int> parent(static_cast<size_t>(topo.joints), -1);
  for (auto [p, c] : topo.bones) parent[static_cast<size_t>(c)] = p;

  double pos_x = base_x, pos_y = base_y, heading = heading0;
  const double dt = 1.0 / fps;
  for (int f = 0; f < frames; ++f) {
    const double t = f / fps;
    double v = speed;
    double hd_rate = 0.0;
    double articulation = 1.0;
    switch (kind) {
      case Archetype::Walk:
        break;
      case Archetype::Turn:
        if (t >= event_t) hd_rate = turn_rate;
        break;
      case Archetype::StopAndGo:
        if (t >= event_t) { v = 0.0; articulation = 0.15; }
        break;
      case Archetype::StandStill:
        v = 0.0;
        articulation = 0.0;
        break;
    }
    const double osc = std::sin(2.0 * 3.14159265358979324 * freq * t + phase);
    const double osc_q = std::sin(2.0 * 3.14159265358979324 * freq * t + phase + 1.5707963267948966);

    // root
    s.at(f, topo.hip, 0) = pos_x;
    s.at(f, topo.hip, 1) = pos_y;
    s.at(f, topo.hip, 2) = 1000.0 + (kind == Archetype::StandStill
                                         ? 0.0
                                         : 20.0 * articulation * osc_q * sway_amp / 0.05);

    // forward kinematics: child = parent + Rz(heading) * Raxis(angle) * rest
    for (auto [p, c] : topo.bones) {
      std::array<double, 3> off = detail::rest_offset17(p, c);
      double angle = 0.0;
      std::array<double, 3> axis = {1, 0, 0};  // swing about body-lateral axis
      switch (c) {
        case 12: case 13: angle = leg_amp * osc; break;           // left leg
        case 15: case 16: angle = -leg_amp * osc; break;          // right leg
        case 6: case 7: angle = -arm_amp * osc; break;            // left arm
        case 9: case 10: angle = arm_amp * osc; break;            // right arm
        case 2: case 3: case 4: angle = sway_amp * osc_q; break;  // torso sway
        default: break;
      }
      angle *= articulation;
      if (angle != 0.0) off = detail::rotate_axis(off, axis, angle);
      off = detail::rotate_z(off, heading);
      for (int k = 0; k < 3; ++k)
        s.at(f, c, k) = s.at(f, p, k) + off[static_cast<size_t>(k)];
    }

    heading += hd_rate * dt;
    pos_x += v * std::cos(heading + 1.5707963267948966) * dt;
    pos_y += v * std::sin(heading + 1.5707963267948966) * dt;
  }
  return s;
}

inline MotionDataset synth_dataset(int n_sequences, int frames,
                                   const SkeletonTopology& topo,
                                   const std::vector<Archetype>& archetypes,
                                   std::uint64_t seed, double fps = 12.5,
                                   double val_fraction = 0.2) {
  if (n_sequences <= 0) throw ContractError("need at least one sequence");
  if (archetypes.empty()) throw ContractError("need at least one archetype");
  MotionDataset d;
  d.topology = topo;
  const int n_val = static_cast<int>(std::lround(val_fraction * n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    const Archetype kind = archetypes[static_cast<size_t>(i) % archetypes.size()];
    d.sequences.push_back(synth_sequence(kind, frames, fps, topo, mix_seed(seed, 1000 + i)));
    char buf[64];
    std::snprintf(buf, sizeof buf, "seq_%05d_%s.mseq", i, archetype_name(kind));
    d.names.emplace_back(buf);
    d.tags.emplace_back(i >= n_sequences - n_val ? "val" : "train");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Sequence file format: magic "MSEQ", version u32, fps f64, F u64, J u64,
// topology id (u32 length + bytes), row-major f64 coords.
// ---------------------------------------------------------------------------

inline void write_sequence(const MotionSequence& s, const std::string& topology_id,
                           const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write("MSEQ", 4);
  detail::put_u32(os, 1);
  detail::put_f64(os, s.fps);
  detail::put_u64(os, static_cast<std::uint64_t>(s.frames));
  detail::put_u64(os, static_cast<std::uint64_t>(s.joints));
  detail::put_u32(os, static_cast<std::uint32_t>(topology_id.size()));
  os.write(topology_id.data(), static_cast<std::streamsize>(topology_id.size()));
  for (double v : s.coords) detail::put_f64(os, v);
  if (!os) throw FormatError("write failed for '" + path + "'");
}

inline MotionSequence read_sequence(const std::string& path, std::string* topology_id = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MSEQ", 4) != 0)
    throw FormatError("bad magic in '" + path + "' (expected MSEQ)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1) throw FormatError("unsupported sequence version");
  const double fps = detail::get_f64(is);
  const std::uint64_t F = detail::get_u64(is);
  const std::uint64_t J = detail::get_u64(is);
  if (F < 2 || F > (1u << 24) || J == 0 || J > (1u << 16))
    throw FormatError("implausible sequence extents");
  const std::uint32_t id_len = detail::get_u32(is);
  if (id_len > 256) throw FormatError("implausible topology id length");
  std::string id(id_len, '\0');
  is.read(id.data(), id_len);
  if (!is) throw FormatError("truncated topology id");
  MotionSequence s(static_cast<int>(F), static_cast<int>(J), fps);
  for (auto& v : s.coords) v = detail::get_f64(is);
  if (topology_id) *topology_id = id;
  return s;
}

// Mask file: magic "MMSK", version u32, F u64, J u64, u8 bits.
inline void write_mask(const OcclusionMask& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write("MMSK", 4);
  detail::put_u32(os, 1);
  detail::put_u64(os, static_cast<std::uint64_t>(m.frames));
  detail::put_u64(os, static_cast<std::uint64_t>(m.joints));
  os.write(reinterpret_cast<const char*>(m.bits.data()),
           static_cast<std::streamsize>(m.bits.size()));
  if (!os) throw FormatError("write failed for '" + path + "'");
}

inline OcclusionMask read_mask(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MMSK", 4) != 0)
    throw FormatError("bad magic in '" + path + "' (expected MMSK)");
  if (detail::get_u32(is) != 1) throw FormatError("unsupported mask version");
  const std::uint64_t F = detail::get_u64(is);
  const std::uint64_t J = detail::get_u64(is);
  if (F == 0 || F > (1u << 24) || J == 0 || J > (1u << 16))
    throw FormatError("implausible mask extents");
  OcclusionMask m(static_cast<int>(F), static_cast<int>(J), 0);
  is.read(reinterpret_cast<char*>(m.bits.data()), static_cast<std::streamsize>(m.bits.size()));
  if (!is) throw FormatError("truncated mask payload");
  for (auto b : m.bits)
    if (b > 1) throw FormatError("mask bits must be 0 or 1");
  return m;
}

// ---------------------------------------------------------------------------
// Dataset directory: sequences + line-oriented manifest
// "<relative-path> <train|val>" and a topology id header line.
// ---------------------------------------------------------------------------

inline void write_dataset(const MotionDataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in '" + dir + "'");
  manifest << "# topology " << d.topology.id << "\n";
  for (int i = 0; i < d.size(); ++i) {
    const std::string& name = d.names[static_cast<size_t>(i)];
    write_sequence(d.sequences[static_cast<size_t>(i)], d.topology.id,
                   (fs::path(dir) / name).string());
    manifest << name << " " << d.tags[static_cast<size_t>(i)] << "\n";
  }
  if (!manifest) throw FormatError("manifest write failed");
}

/// Load a dataset directory. `tag_filter` keeps only one split ("train" or
/// "val"); empty keeps everything.
inline MotionDataset read_dataset(const std::string& dir, const std::string& tag_filter = "",
                                  const SkeletonTopology& topo = SkeletonTopology::default17()) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw FormatError("missing manifest '" + manifest_path.string() + "'");
  MotionDataset d;
  d.topology = topo;
  d.split_tag = tag_filter.empty() ? "all" : tag_filter;
  std::string line;
  struct Entry { std::string name, tag; };
  std::vector<Entry> entries;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key, value;
      hs >> key >> value;
      if (key == "topology" && value != topo.id)
        throw FormatError("dataset topology '" + value + "' does not match '" + topo.id + "'");
      continue;
    }
    std::istringstream ls(line);
    Entry e;
    if (!(ls >> e.name >> e.tag) || (e.tag != "train" && e.tag != "val"))
      throw FormatError("bad manifest line: '" + line + "'");
    if (!tag_filter.empty() && e.tag != tag_filter) continue;
    entries.push_back(std::move(e));
  }
  d.sequences.resize(entries.size());
  d.names.resize(entries.size());
  d.tags.resize(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(static_cast<int>(entries.size()), [&](int i) {
    try {
      std::string id;
      MotionSequence s = read_sequence((fs::path(dir) / entries[static_cast<size_t>(i)].name).string(), &id);
      if (s.joints != topo.joints || (!id.empty() && id != topo.id))
        throw FormatError("sequence '" + entries[static_cast<size_t>(i)].name + "' does not match topology");
      d.sequences[static_cast<size_t>(i)] = std::move(s);
      d.names[static_cast<size_t>(i)] = entries[static_cast<size_t>(i)].name;
      d.tags[static_cast<size_t>(i)] = entries[static_cast<size_t>(i)].tag;
    } catch (const Error& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw FormatError(e);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// CSV interop: one row per frame, 3J columns (x0,y0,z0,x1,...).
// ---------------------------------------------------------------------------

inline void write_sequence_csv(const MotionSequence& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  for (int f = 0; f < s.frames; ++f) {
    for (int j = 0; j < s.joints; ++j)
      for (int c = 0; c < 3; ++c) {
        if (j || c) os << ",";
        os << fmt_g17(s.at(f, j, c));
      }
    os << "\n";
  }
}

inline MotionSequence read_sequence_csv(const std::string& path, double fps) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("bad CSV cell '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw FormatError("ragged CSV rows");
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) throw FormatError("CSV needs at least 2 frames");
  if (rows[0].empty() || rows[0].size() % 3 != 0)
    throw FormatError("CSV column count must be a multiple of 3");
  MotionSequence s(static_cast<int>(rows.size()), static_cast<int>(rows[0].size() / 3), fps);
  for (int f = 0; f < s.frames; ++f)
    for (size_t k = 0; k < rows[static_cast<size_t>(f)].size(); ++k)
      s.coords[static_cast<size_t>(f) * rows[0].size() + k] = rows[static_cast<size_t>(f)][k];
  return s;
}

}  // namespace stmi
