#pragma once

// GAN training loop, ablation grid, occlusion experiment and the
// noise-injection sensitivity probe.

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stmi/baselines.hpp"
#include "stmi/core.hpp"
#include "stmi/losses.hpp"
#include "stmi/motion.hpp"
#include "stmi/networks.hpp"
#include "stmi/params.hpp"
#include "stmi/spectral.hpp"

namespace stmi {

enum class Variant { NoGan, BaseDisc, PlusEdm, PlusMotion, StmiGan };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::NoGan: return "nogan";
    case Variant::BaseDisc: return "base";
    case Variant::PlusEdm: return "edm";
    case Variant::PlusMotion: return "motion";
    case Variant::StmiGan: return "stmi";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::NoGan, Variant::BaseDisc, Variant::PlusEdm, Variant::PlusMotion,
                    Variant::StmiGan})
    if (name == variant_name(v)) return v;
  throw FormatError("unknown variant '" + name + "'");
}

enum class MaskPattern { Future, Joints, Limbs, Frames, Transmission };

inline const char* mask_pattern_name(MaskPattern p) {
  switch (p) {
    case MaskPattern::Future: return "future";
    case MaskPattern::Joints: return "joints";
    case MaskPattern::Limbs: return "limbs";
    case MaskPattern::Frames: return "frames";
    case MaskPattern::Transmission: return "transmission";
  }
  return "?";
}

inline MaskPattern mask_pattern_from_name(const std::string& name) {
  for (MaskPattern p : {MaskPattern::Future, MaskPattern::Joints, MaskPattern::Limbs,
                        MaskPattern::Frames, MaskPattern::Transmission})
    if (name == mask_pattern_name(p)) return p;
  throw FormatError("unknown mask pattern '" + name + "'");
}

struct MaskRecipe {
  MaskPattern pattern = MaskPattern::Future;
  double rate = 0.8;        // occlusion rate for the random patterns
  int visible_frames = -1;  // future pattern; -1 means half the crop
};

inline OcclusionMask make_mask(const MaskRecipe& r, int frames, int joints,
                               const SkeletonTopology& topo, std::uint64_t seed) {
  switch (r.pattern) {
    case MaskPattern::Future: {
      const int visible = r.visible_frames > 0 ? r.visible_frames : frames / 2;
      return mask_future(frames, joints, visible);
    }
    case MaskPattern::Joints: return mask_random_joints(frames, joints, r.rate, seed);
    case MaskPattern::Limbs: return mask_random_limbs(frames, joints, topo, r.rate, seed);
    case MaskPattern::Frames: return mask_missing_frames(frames, joints, r.rate, seed);
    case MaskPattern::Transmission:
      return mask_noisy_transmission(frames, joints, r.rate, seed);
  }
  throw ContractError("unknown mask pattern");
}

/// Everything the paper leaves open, pinned as explicit desk-scale defaults.
struct ModelConfig {
  FrameCodecConfig codec{};
  GeneratorConfig gen{};
  DiscriminatorConfig disc{};
  LossWeights weights{};
  Variant variant = Variant::StmiGan;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 16;
  int steps = 2000;
  std::uint64_t seed = 1;
  int crop_frames = 32;  // training crop length; -1 trains on full sequences
  int eval_every = 500;  // validation snapshot period; 0 disables
  MaskRecipe mask{};

  bool adversarial() const { return variant != Variant::NoGan; }

  DiscBranches branches() const {
    switch (variant) {
      case Variant::NoGan: return {false, false, false};
      case Variant::BaseDisc: return {true, false, false};
      case Variant::PlusEdm: return {true, true, false};
      case Variant::PlusMotion: return {true, false, true};
      case Variant::StmiGan: return {true, true, true};
    }
    return {};
  }

  /// Weights actually applied: the NoGAN ablation forces the adversarial
  /// terms off.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!adversarial()) {
      w.disc = 0.0;
      w.gen = 0.0;
    }
    return w;
  }

  void validate() const {
    codec.validate();
    gen.validate();
    disc.validate();
    weights.validate();
    if (batch_size < 1 || steps < 0) throw ContractError("bad batch size or step count");
    if (lr <= 0) throw ContractError("learning rate must be positive");
  }
};

struct MetricSnapshot {
  int step = 0;
  std::vector<MetricReport> reports;
};

struct TrainLog {
  std::vector<LossReport> rows;
  std::vector<MetricSnapshot> snapshots;
  double wall_seconds = 0.0;  // not serialized: log files stay bit-stable
};

struct TrainResult {
  ParameterStore store;
  TrainLog log;
};

// ---------------------------------------------------------------------------
// Prediction helpers
// ---------------------------------------------------------------------------

/// Future-prediction outputs for every sequence of a set (visible prefix =
/// half the frames unless the recipe pins it).
inline MotionDataset predict_dataset(const MotionDataset& data, ParameterStore& store,
                                     const ModelConfig& cfg, std::uint64_t noise_salt,
                                     const MaskRecipe* recipe = nullptr) {
  MotionDataset out;
  out.topology = data.topology;
  out.split_tag = data.split_tag;
  MaskRecipe r = recipe ? *recipe : MaskRecipe{};
  for (int i = 0; i < data.size(); ++i) {
    const MotionSequence& s = data.sequences[static_cast<size_t>(i)];
    OcclusionMask m = make_mask(r, s.frames, s.joints, data.topology,
                                mix_seed(cfg.seed, 0xE7A1, static_cast<std::uint64_t>(i)));
    MotionSequence gen = stmi_forward(s, m, store, cfg.codec, cfg.gen, data.topology,
                                      mix_seed(cfg.seed, noise_salt, static_cast<std::uint64_t>(i)));
    gen.fps = s.fps;
    out.sequences.push_back(std::move(gen));
    out.names.push_back(data.names[static_cast<size_t>(i)]);
    out.tags.push_back(data.tags[static_cast<size_t>(i)]);
  }
  return out;
}

inline std::vector<Window> windows_for_duration(double duration_s) {
  if (duration_s >= 4.0) return default_windows();
  return {{0.0, duration_s}};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

struct BatchSample {
  MotionSequence crop;
  OcclusionMask mask;
  std::uint64_t noise_seed = 0;
};

inline MotionSequence crop_sequence(const MotionSequence& s, int start, int len) {
  MotionSequence out(len, s.joints, s.fps);
  std::copy(s.frame(start), s.frame(start + len - 1) + s.joints * 3, out.coords.data());
  return out;
}

inline std::vector<BatchSample> assemble_batch(const ModelConfig& cfg,
                                               const MotionDataset& train_set, int step) {
  const int F_data = train_set.sequences[0].frames;
  const int F = cfg.crop_frames > 0 ? std::min(cfg.crop_frames, F_data) : F_data;
  Rng rng(mix_seed(cfg.seed, 0xBA7C4, static_cast<std::uint64_t>(step)));
  std::vector<BatchSample> batch;
  batch.reserve(static_cast<size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    const int idx = rng.uniform_int(train_set.size());
    const int start = F_data > F ? rng.uniform_int(F_data - F + 1) : 0;
    BatchSample b;
    b.crop = crop_sequence(train_set.sequences[static_cast<size_t>(idx)], start, F);
    b.mask = make_mask(cfg.mask, F, b.crop.joints, train_set.topology,
                       mix_seed(cfg.seed, 0x3A5C, static_cast<std::uint64_t>(step),
                                static_cast<std::uint64_t>(i)));
    b.noise_seed = mix_seed(cfg.seed, 0x4015E, static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(i));
    batch.push_back(std::move(b));
  }
  return batch;
}

inline void accumulate_grads(GradMap& into, const GradMap& from, double scale) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      auto& slot = into[name];
      slot.assign(g.size(), 0.0);
      it = into.find(name);
    }
    for (size_t i = 0; i < g.size(); ++i) it->second[i] += scale * g[i];
  }
}

inline void check_term_finite(double v, const char* term, int step) {
  if (!std::isfinite(v))
    throw NumericError(std::string("loss term '") + term + "' is not finite at step " +
                       std::to_string(step));
}

}  // namespace detail

/// Alternating minimax optimization: one discriminator step (on the enabled
/// branches, with the R1 penalty on real samples) then one generator step
/// (adversarial plus reconstruction terms) per iteration. Deterministic
/// given the config seed. Aborts with a NumericError naming the offending
/// term if any loss leaves the finite range.
inline TrainResult train(const ModelConfig& cfg, const MotionDataset& data) {
  cfg.validate();
  if (data.sequences.empty()) throw ContractError("dataset is empty");
  MotionDataset train_set = data.subset("train");
  if (train_set.sequences.empty()) train_set = data;
  MotionDataset val_set = data.subset("val");

  const auto t_start = std::chrono::steady_clock::now();
  const SkeletonTopology& topo = data.topology;
  const LossWeights w = cfg.effective_weights();
  const DiscBranches branches = cfg.branches();

  TrainResult result;
  result.store.rng_seed = cfg.seed;
  {
    Rng init_rng(mix_seed(cfg.seed, 0x1217));
    init_generator_params(result.store, init_rng, cfg.codec, cfg.gen, topo.joints);
    init_discriminator_params(result.store, init_rng, cfg.codec, cfg.disc, topo.joints);
  }
  ParameterStore& store = result.store;
  Adam adam_g(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
  Adam adam_d(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

  for (int step = 0; step < cfg.steps; ++step) {
    auto batch = detail::assemble_batch(cfg, train_set, step);
    const double inv_b = 1.0 / cfg.batch_size;
    double mean_disc = 0.0, mean_r1 = 0.0;

    if (cfg.adversarial()) {
      GradMap dgrads;
      for (const auto& sample : batch) {
        // fake conditioned on the masked crop; constant for the D update
        MotionSequence fake = stmi_forward(sample.crop, sample.mask, store, cfg.codec,
                                           cfg.gen, topo, sample.noise_seed);
        Graph g;
        DiffTensor x_real = g.constant(Shape{sample.crop.frames, topo.joints, 3},
                                       sample.crop.coords);
        DiffTensor d_real = discriminate(g, x_real, store, cfg.codec, cfg.disc, branches,
                                         topo.joints);
        DiffTensor gx = g.grad_of(d_real, x_real);
        DiffTensor r1 = g.sum_all(g.square(gx));
        DiffTensor x_fake = g.constant(Shape{fake.frames, fake.joints, 3}, fake.coords);
        DiffTensor d_fake = discriminate(g, x_fake, store, cfg.codec, cfg.disc, branches,
                                         topo.joints);
        DiffTensor loss = disc_loss(g, d_real, d_fake, r1, w.gamma);
        detail::check_term_finite(loss.scalar(), "disc", step);
        mean_disc += inv_b * loss.scalar();
        mean_r1 += inv_b * 0.5 * w.gamma * r1.scalar();
        g.backward(loss);
        detail::accumulate_grads(dgrads, g.param_grads(), inv_b);
      }
      adam_d.step(store, dgrads);
    }

    GradMap ggrads;
    double mean_rec = 0.0, mean_limb = 0.0, mean_bone = 0.0, mean_gen = 0.0;
    const OcclusionMask full_mask(batch[0].crop.frames, topo.joints, 1);
    for (const auto& sample : batch) {
      Graph g;
      g.freeze_prefix("disc.");
      DiffTensor out = stmi_forward_node(g, sample.crop, sample.mask, store, cfg.codec,
                                         cfg.gen, topo, sample.noise_seed);
      // NoGAN supervises the whole sequence; adversarial variants only the
      // visible part, leaving the completion to the discriminators.
      const OcclusionMask& loss_mask = cfg.adversarial() ? sample.mask : full_mask;
      DiffTensor rec = rec_loss(g, out, sample.crop, loss_mask);
      DiffTensor limb = limb_loss(g, out, sample.crop, loss_mask, topo);
      DiffTensor bone = bone_loss(g, out, sample.crop, loss_mask, topo,
                                  BonePolicy::kSkipUndefinedBones);
      DiffTensor total = g.add(g.affine(rec, w.rec, 0.0),
                               g.add(g.affine(limb, w.limb, 0.0), g.affine(bone, w.bone, 0.0)));
      double gen_val = 0.0;
      if (cfg.adversarial()) {
        DiffTensor d_fake = discriminate(g, out, store, cfg.codec, cfg.disc, branches,
                                         topo.joints);
        DiffTensor lg = gen_loss(g, d_fake);
        gen_val = lg.scalar();
        total = g.add(total, g.affine(lg, w.gen, 0.0));
      }
      detail::check_term_finite(rec.scalar(), "rec", step);
      detail::check_term_finite(limb.scalar(), "limb", step);
      detail::check_term_finite(bone.scalar(), "bone", step);
      detail::check_term_finite(gen_val, "gen", step);
      mean_rec += inv_b * rec.scalar();
      mean_limb += inv_b * limb.scalar();
      mean_bone += inv_b * bone.scalar();
      mean_gen += inv_b * gen_val;
      g.backward(g.affine(total, inv_b, 0.0));
      detail::accumulate_grads(ggrads, g.param_grads(), 1.0);
    }
    adam_g.step(store, ggrads);

    LossReport row = full_loss(mean_rec, mean_limb, mean_bone, mean_disc, mean_gen, mean_r1, w);
    if (!row.finite()) throw NumericError("loss row not finite at step " + std::to_string(step));
    result.log.rows.push_back(row);

    if (cfg.eval_every > 0 && !val_set.sequences.empty() && (step + 1) % cfg.eval_every == 0) {
      MotionDataset gen_val = predict_dataset(val_set, store, cfg, 0x5EED);
      MetricSnapshot snap;
      snap.step = step + 1;
      snap.reports = windowed_report(val_set, gen_val,
                                     windows_for_duration(val_set.sequences[0].duration_s()));
      result.log.snapshots.push_back(std::move(snap));
    }
  }

  if (!store.all_parameters_finite())
    throw NumericError("non-finite parameter after training");
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

struct AblationRow {
  Variant variant;
  std::vector<MetricReport> reports;
};

/// Train all five discriminator configurations with a shared seed and data,
/// then evaluate windowed spectral metrics on future predictions of the
/// validation split.
inline std::vector<AblationRow> ablation_grid(const MotionDataset& data,
                                              const ModelConfig& base_cfg) {
  MotionDataset val_set = data.subset("val");
  if (val_set.sequences.empty()) throw ContractError("ablation grid needs a validation split");
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::NoGan, Variant::BaseDisc, Variant::PlusEdm, Variant::PlusMotion,
                    Variant::StmiGan}) {
    ModelConfig cfg = base_cfg;
    cfg.variant = v;
    TrainResult r = train(cfg, data);
    MotionDataset gen_val = predict_dataset(val_set, r.store, cfg, 0x5EED);
    AblationRow row;
    row.variant = v;
    row.reports = windowed_report(val_set, gen_val,
                                  windows_for_duration(val_set.sequences[0].duration_s()));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "variant,window_start_s,window_end_s,psent,pskl_gt_gen,pskl_gen_gt,l2_mm\n";
  for (const auto& row : rows)
    for (const auto& r : row.reports)
      os << variant_name(row.variant) << "," << fmt_g17(r.window.start_s) << ","
         << fmt_g17(r.window.end_s) << "," << fmt_g17(r.psent) << ","
         << fmt_g17(r.pskl_gt_gen) << "," << fmt_g17(r.pskl_gen_gt) << ","
         << fmt_g17(r.l2_mm) << "\n";
}

inline std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant   window    PSEnt      PSKL(GT,Gen)  PSKL(Gen,GT)\n";
  for (const auto& row : rows)
    for (const auto& r : row.reports) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-9s %3.1f-%-4.1f %-10.5f %-13.5f %-12.5f\n",
                    variant_name(row.variant), r.window.start_s, r.window.end_s, r.psent,
                    r.pskl_gt_gen, r.pskl_gen_gt);
      os << buf;
    }
  return os.str();
}

struct OcclusionRow {
  MaskPattern pattern;
  std::map<std::string, double> l2_by_method;  // "linint", "nogan", "stmi"
};

/// For each occlusion pattern: train NoGAN and STMI-GAN with that mask
/// recipe, then report L2 over the occluded entries of the validation split
/// against linear interpolation.
inline std::vector<OcclusionRow> occlusion_experiment(
    const MotionDataset& data, const ModelConfig& base_cfg,
    const std::vector<MaskPattern>& patterns = {MaskPattern::Joints, MaskPattern::Limbs,
                                                MaskPattern::Frames, MaskPattern::Transmission},
    double rate = 0.8) {
  MotionDataset val_set = data.subset("val");
  if (val_set.sequences.empty()) throw ContractError("occlusion experiment needs a validation split");
  std::vector<OcclusionRow> rows;
  for (MaskPattern pattern : patterns) {
    ModelConfig cfg = base_cfg;
    cfg.mask.pattern = pattern;
    cfg.mask.rate = rate;
    cfg.variant = Variant::NoGan;
    TrainResult nogan = train(cfg, data);
    cfg.variant = Variant::StmiGan;
    TrainResult stmi = train(cfg, data);

    OcclusionRow row;
    row.pattern = pattern;
    double l2_lin = 0.0, l2_nogan = 0.0, l2_stmi = 0.0;
    for (int i = 0; i < val_set.size(); ++i) {
      const MotionSequence& s = val_set.sequences[static_cast<size_t>(i)];
      MaskRecipe recipe{pattern, rate, -1};
      OcclusionMask m = make_mask(recipe, s.frames, s.joints, data.topology,
                                  mix_seed(cfg.seed, 0x0CC1, static_cast<std::uint64_t>(i)));
      l2_lin += l2_coords_occluded(s, linear_interpolate_lenient(s, m), m);
      MotionSequence out_n = stmi_forward(s, m, nogan.store, cfg.codec, cfg.gen,
                                          data.topology, mix_seed(cfg.seed, 1, static_cast<std::uint64_t>(i)));
      MotionSequence out_s = stmi_forward(s, m, stmi.store, cfg.codec, cfg.gen,
                                          data.topology, mix_seed(cfg.seed, 2, static_cast<std::uint64_t>(i)));
      l2_nogan += l2_coords_occluded(s, out_n, m);
      l2_stmi += l2_coords_occluded(s, out_s, m);
    }
    row.l2_by_method["linint"] = l2_lin / val_set.size();
    row.l2_by_method["nogan"] = l2_nogan / val_set.size();
    row.l2_by_method["stmi"] = l2_stmi / val_set.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_occlusion_csv(const std::vector<OcclusionRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "pattern,linint,nogan,stmi\n";
  for (const auto& r : rows)
    os << mask_pattern_name(r.pattern) << "," << fmt_g17(r.l2_by_method.at("linint")) << ","
       << fmt_g17(r.l2_by_method.at("nogan")) << "," << fmt_g17(r.l2_by_method.at("stmi"))
       << "\n";
}

/// Mean pairwise per-joint distance between noise-seeded predictions as a
/// function of the predicted-frame offset; averaged over sequences, joints
/// and seed pairs.
inline std::vector<double> noise_sensitivity(ParameterStore& store, const ModelConfig& cfg,
                                             const MotionDataset& data, int n_seeds) {
  if (n_seeds < 2) throw ContractError("need at least 2 noise seeds");
  if (data.sequences.empty()) throw ContractError("empty dataset");
  const int F = data.sequences[0].frames;
  const int visible = cfg.mask.visible_frames > 0 ? cfg.mask.visible_frames : F / 2;
  const int horizon = F - visible;
  if (horizon < 1) throw ContractError("no predicted frames under this recipe");
  std::vector<double> sum(static_cast<size_t>(horizon), 0.0);
  std::int64_t pairs = 0;
  for (int i = 0; i < data.size(); ++i) {
    const MotionSequence& s = data.sequences[static_cast<size_t>(i)];
    OcclusionMask m = mask_future(F, s.joints, visible);
    std::vector<MotionSequence> outs;
    for (int k = 0; k < n_seeds; ++k)
      outs.push_back(stmi_forward(s, m, store, cfg.codec, cfg.gen, data.topology,
                                  mix_seed(cfg.seed, 0xD1FF, static_cast<std::uint64_t>(i),
                                           static_cast<std::uint64_t>(k))));
    for (int a = 0; a < n_seeds; ++a)
      for (int b = a + 1; b < n_seeds; ++b) {
        ++pairs;
        for (int k = 0; k < horizon; ++k) {
          double acc = 0.0;
          for (int j = 0; j < s.joints; ++j) {
            const int f = visible + k;
            const double dx = outs[static_cast<size_t>(a)].at(f, j, 0) - outs[static_cast<size_t>(b)].at(f, j, 0);
            const double dy = outs[static_cast<size_t>(a)].at(f, j, 1) - outs[static_cast<size_t>(b)].at(f, j, 1);
            const double dz = outs[static_cast<size_t>(a)].at(f, j, 2) - outs[static_cast<size_t>(b)].at(f, j, 2);
            acc += std::sqrt(dx * dx + dy * dy + dz * dz);
          }
          sum[static_cast<size_t>(k)] += acc / s.joints;
        }
      }
  }
  for (auto& v : sum) v /= static_cast<double>(pairs);
  return sum;
}

/// Single inpainted/predicted sequence: the seed sequence is extended by
/// `predict_seconds` of occluded frames and completed by the model.
inline MotionSequence generate(ParameterStore& store, const ModelConfig& cfg,
                               const SkeletonTopology& topo, const MotionSequence& seed_seq,
                               double predict_seconds, std::uint64_t noise_seed) {
  const int extra = static_cast<int>(std::lround(predict_seconds * seed_seq.fps));
  if (extra < 1) throw ContractError("prediction horizon shorter than one frame");
  const int F = seed_seq.frames + extra;
  MotionSequence full(F, seed_seq.joints, seed_seq.fps);
  std::copy(seed_seq.coords.begin(), seed_seq.coords.end(), full.coords.begin());
  OcclusionMask m = mask_future(F, seed_seq.joints, seed_seq.frames);
  return stmi_forward(full, m, store, cfg.codec, cfg.gen, topo, noise_seed);
}

// ---------------------------------------------------------------------------
// Rank statistics (trend checks on the noise probe)
// ---------------------------------------------------------------------------

inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ContractError("need paired samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    for (size_t i = 0; i < v.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&v](int a, int b) { return v[static_cast<size_t>(a)] < v[static_cast<size_t>(b)]; });
    std::vector<double> r(v.size());
    // ties get the average of their positions
    size_t pos = 0;
    while (pos < idx.size()) {
      size_t end = pos;
      while (end + 1 < idx.size() &&
             v[static_cast<size_t>(idx[end + 1])] == v[static_cast<size_t>(idx[pos])])
        ++end;
      const double avg = 0.5 * (static_cast<double>(pos) + static_cast<double>(end));
      for (size_t k = pos; k <= end; ++k) r[static_cast<size_t>(idx[k])] = avg;
      pos = end + 1;
    }
    return r;
  };
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

// ---------------------------------------------------------------------------
// Log serialization
// ---------------------------------------------------------------------------

inline void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_loss_csv_header(os);
  for (size_t i = 0; i < log.rows.size(); ++i)
    write_loss_csv_row(os, static_cast<int>(i), log.rows[i]);
}

inline void write_snapshots_csv(const TrainLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "step,window_start_s,window_end_s,psent,pskl_gt_gen,pskl_gen_gt,l2_mm\n";
  for (const auto& snap : log.snapshots)
    for (const auto& r : snap.reports)
      os << snap.step << "," << fmt_g17(r.window.start_s) << "," << fmt_g17(r.window.end_s)
         << "," << fmt_g17(r.psent) << "," << fmt_g17(r.pskl_gt_gen) << ","
         << fmt_g17(r.pskl_gen_gt) << "," << fmt_g17(r.l2_mm) << "\n";
}

}  // namespace stmi
