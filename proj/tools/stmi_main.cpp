// Command-line entry point: synthetic data generation, masking, training,
// generation, baselines and evaluation as reproducible seeded runs.
//
// Exit codes: 0 ok, 2 usage, 3 format error, 4 numeric failure, 1 other
// contract violations. Errors print one machine-parseable line to stderr:
//   error[<kind>]: <message>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stmi/stmi.hpp"

namespace fs = std::filesystem;
using namespace stmi;

namespace {

int fail(const char* kind, const std::string& what, int code) {
  std::cerr << "error[" << kind << "]: " << what << "\n";
  return code;
}

Archetype archetype_from_name(const std::string& name) {
  for (Archetype a : {Archetype::Walk, Archetype::Turn, Archetype::StopAndGo,
                      Archetype::StandStill})
    if (name == archetype_name(a)) return a;
  throw FormatError("unknown archetype '" + name + "'");
}

struct CheckpointBundle {
  ParameterStore store;
  ModelConfig cfg;
};

CheckpointBundle load_checkpoint(const std::string& path) {
  CheckpointBundle b;
  b.store = load_store(path);
  const std::string sidecar = path + ".json";
  if (!fs::exists(sidecar))
    throw FormatError("missing checkpoint sidecar '" + sidecar + "'");
  b.cfg = read_model_sidecar(sidecar);
  return b;
}

void save_checkpoint(const ParameterStore& store, const ModelConfig& cfg,
                     const std::string& path) {
  save_store(store, path);
  write_model_sidecar(cfg, path + ".json");
}

// ---- subcommand bodies -----------------------------------------------------

int run_synth(int n_sequences, int frames, double fps, std::uint64_t seed,
              const std::string& out_dir, const std::vector<std::string>& archetype_names,
              double val_fraction) {
  const SkeletonTopology topo = SkeletonTopology::default17();
  std::vector<Archetype> archetypes;
  for (const auto& name : archetype_names) archetypes.push_back(archetype_from_name(name));
  MotionDataset d = synth_dataset(n_sequences, frames, topo, archetypes, seed, fps, val_fraction);
  write_dataset(d, out_dir);
  std::cout << "wrote " << d.size() << " sequences to " << out_dir << "\n";
  return 0;
}

int run_mask(const std::string& pattern, double rate, int visible, std::uint64_t seed,
             const std::string& in_dir, const std::string& out_dir) {
  const SkeletonTopology topo = SkeletonTopology::default17();
  MotionDataset d = read_dataset(in_dir, "", topo);
  MaskRecipe recipe{mask_pattern_from_name(pattern), rate, visible};
  fs::create_directories(out_dir);
  for (int i = 0; i < d.size(); ++i) {
    const MotionSequence& s = d.sequences[static_cast<size_t>(i)];
    OcclusionMask m = make_mask(recipe, s.frames, s.joints, topo,
                                mix_seed(seed, static_cast<std::uint64_t>(i)));
    fs::path name = fs::path(d.names[static_cast<size_t>(i)]).replace_extension(".mmsk");
    write_mask(m, (fs::path(out_dir) / name).string());
  }
  std::cout << "wrote " << d.size() << " masks to " << out_dir << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  ModelConfig cfg = config_path.empty() ? ModelConfig{} : parse_model_config(config_path);
  const SkeletonTopology topo = SkeletonTopology::default17();
  MotionDataset data = read_dataset(data_dir, "", topo);
  fs::create_directories(out_dir);
  TrainResult r = train(cfg, data);
  save_checkpoint(r.store, cfg, (fs::path(out_dir) / "checkpoint.stmi").string());
  write_train_log_csv(r.log, (fs::path(out_dir) / "train_log.csv").string());
  if (!r.log.snapshots.empty())
    write_snapshots_csv(r.log, (fs::path(out_dir) / "eval_snapshots.csv").string());
  std::cout << "trained " << cfg.steps << " steps (" << variant_name(cfg.variant) << ") in "
            << fmt_g17(r.log.wall_seconds) << " s; checkpoint in " << out_dir << "\n";
  return 0;
}

int run_eval_metrics(const std::string& gt_dir, const std::string& gen_dir,
                     const std::string& windows_spec, const std::string& out_path) {
  const SkeletonTopology topo = SkeletonTopology::default17();
  MotionDataset gt = read_dataset(gt_dir, "", topo);
  MotionDataset gen = read_dataset(gen_dir, "", topo);
  auto windows = parse_windows(windows_spec);
  auto reports = windowed_report(gt, gen, windows);
  write_metrics_csv(reports, gt.sequences[0].fps, 1e-8, out_path);
  std::cout << "window      PSEnt      PSKL(GT,Gen)  PSKL(Gen,GT)  L2(mm)\n";
  for (const auto& r : reports) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%3.1f-%-6.1f %-10.5f %-13.5f %-13.5f %-10.3f\n",
                  r.window.start_s, r.window.end_s, r.psent, r.pskl_gt_gen, r.pskl_gen_gt,
                  r.l2_mm);
    std::cout << buf;
  }
  std::cout << "csv: " << out_path << "\n";
  return 0;
}

int run_eval_occlusion(const std::string& data_dir, double rate,
                       const std::string& methods_spec, const std::string& nogan_ckpt,
                       const std::string& stmi_ckpt, const std::string& out_path,
                       std::uint64_t seed) {
  const SkeletonTopology topo = SkeletonTopology::default17();
  MotionDataset data = read_dataset(data_dir, "", topo);
  MotionDataset val = data.subset("val");
  if (val.sequences.empty()) val = data;

  std::vector<std::string> methods;
  {
    std::istringstream is(methods_spec);
    std::string tok;
    while (std::getline(is, tok, ',')) methods.push_back(tok);
  }
  std::map<std::string, CheckpointBundle> models;
  for (const auto& m : methods) {
    if (m == "linint") continue;
    if (m == "nogan") {
      if (nogan_ckpt.empty()) throw ContractError("method nogan needs --nogan-checkpoint");
      models["nogan"] = load_checkpoint(nogan_ckpt);
    } else if (m == "stmi") {
      if (stmi_ckpt.empty()) throw ContractError("method stmi needs --stmi-checkpoint");
      models["stmi"] = load_checkpoint(stmi_ckpt);
    } else {
      throw FormatError("unknown method '" + m + "'");
    }
  }

  std::ofstream os(out_path);
  if (!os) throw FormatError("cannot open '" + out_path + "' for writing");
  os << "pattern";
  for (const auto& m : methods) os << "," << m;
  os << "\n";
  std::cout << "pattern       ";
  for (const auto& m : methods) std::cout << m << "  ";
  std::cout << "\n";
  for (MaskPattern pattern : {MaskPattern::Joints, MaskPattern::Limbs, MaskPattern::Frames,
                              MaskPattern::Transmission}) {
    std::map<std::string, double> l2;
    for (int i = 0; i < val.size(); ++i) {
      const MotionSequence& s = val.sequences[static_cast<size_t>(i)];
      MaskRecipe recipe{pattern, rate, -1};
      OcclusionMask m = make_mask(recipe, s.frames, s.joints, topo,
                                  mix_seed(seed, 0x0CC1, static_cast<std::uint64_t>(i)));
      for (const auto& method : methods) {
        MotionSequence out(2, s.joints, s.fps);
        if (method == "linint") {
          out = linear_interpolate_lenient(s, m);
        } else {
          CheckpointBundle& b = models.at(method);
          out = stmi_forward(s, m, b.store, b.cfg.codec, b.cfg.gen, topo,
                             mix_seed(seed, 0xF0, static_cast<std::uint64_t>(i)));
        }
        l2[method] += l2_coords_occluded(s, out, m) / val.size();
      }
    }
    os << mask_pattern_name(pattern);
    std::cout << mask_pattern_name(pattern);
    for (size_t pad = std::string(mask_pattern_name(pattern)).size(); pad < 14; ++pad)
      std::cout << " ";
    for (const auto& method : methods) {
      os << "," << fmt_g17(l2[method]);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f  ", l2[method]);
      std::cout << buf;
    }
    os << "\n";
    std::cout << "\n";
  }
  std::cout << "csv: " << out_path << "\n";
  return 0;
}

int run_baseline(const std::string& method, const std::string& data_dir,
                 const std::string& mask_dir, const std::string& out_dir) {
  const SkeletonTopology topo = SkeletonTopology::default17();
  MotionDataset d = read_dataset(data_dir, "", topo);
  MotionDataset out = d;
  for (int i = 0; i < d.size(); ++i) {
    fs::path mask_name = fs::path(d.names[static_cast<size_t>(i)]).replace_extension(".mmsk");
    OcclusionMask m = read_mask((fs::path(mask_dir) / mask_name).string());
    const MotionSequence& s = d.sequences[static_cast<size_t>(i)];
    if (method == "zerovel") out.sequences[static_cast<size_t>(i)] = zero_velocity(s, m);
    else if (method == "linint") out.sequences[static_cast<size_t>(i)] = linear_interpolate(s, m);
    else throw FormatError("unknown baseline method '" + method + "'");
  }
  write_dataset(out, out_dir);
  std::cout << "wrote " << out.size() << " completed sequences to " << out_dir << "\n";
  return 0;
}

int run_generate(const std::string& checkpoint, const std::string& seed_seq_path,
                 double predict_seconds, std::uint64_t noise_seed, const std::string& out_path) {
  CheckpointBundle b = load_checkpoint(checkpoint);
  const SkeletonTopology topo = SkeletonTopology::default17();
  std::string topo_id;
  MotionSequence seed_seq = read_sequence(seed_seq_path, &topo_id);
  if (seed_seq.joints != topo.joints)
    throw FormatError("seed sequence joint count does not match topology");
  MotionSequence out = generate(b.store, b.cfg, topo, seed_seq, predict_seconds, noise_seed);
  write_sequence(out, topo.id, out_path);
  std::cout << "wrote " << out.frames << "-frame sequence (" << seed_seq.frames << " seed + "
            << out.frames - seed_seq.frames << " predicted) to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STMI motion inpainting toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic motion dataset");
  int synth_n = 24, synth_frames = 50;
  double synth_fps = 12.5, synth_val_fraction = 0.2;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  std::vector<std::string> synth_archetypes = {"walk", "turn", "stopandgo", "standstill"};
  synth->add_option("--sequences", synth_n, "number of sequences");
  synth->add_option("--frames", synth_frames, "frames per sequence");
  synth->add_option("--fps", synth_fps, "frames per second");
  synth->add_option("--seed", synth_seed, "rng seed");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--archetypes", synth_archetypes,
                    "motion archetypes (walk turn stopandgo standstill)");
  synth->add_option("--val-fraction", synth_val_fraction, "fraction tagged as validation");

  // mask
  auto* mask = app.add_subcommand("mask", "write occlusion masks for a dataset");
  std::string mask_pattern = "future", mask_in, mask_out;
  double mask_rate = 0.8;
  int mask_visible = -1;
  std::uint64_t mask_seed = 1;
  mask->add_option("--pattern", mask_pattern, "joints|limbs|frames|transmission|future");
  mask->add_option("--rate", mask_rate, "occlusion rate");
  mask->add_option("--visible-frames", mask_visible, "visible prefix for the future pattern");
  mask->add_option("--seed", mask_seed, "rng seed");
  mask->add_option("--in", mask_in, "input dataset directory")->required();
  mask->add_option("--out", mask_out, "output mask directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_config, train_data, train_out;
  train_cmd->add_option("--config", train_config, "key=value config file (defaults if omitted)");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  // eval-metrics
  auto* evalm = app.add_subcommand("eval-metrics", "windowed spectral metrics");
  std::string evalm_gt, evalm_gen, evalm_windows = "0-1,1-2,2-3,3-4,0-4",
              evalm_out = "metrics.csv";
  evalm->add_option("--gt", evalm_gt, "ground-truth dataset directory")->required();
  evalm->add_option("--gen", evalm_gen, "generated dataset directory")->required();
  evalm->add_option("--windows", evalm_windows, "comma-separated second ranges");
  evalm->add_option("--out", evalm_out, "output CSV path");

  // eval-occlusion
  auto* evalo = app.add_subcommand("eval-occlusion", "occlusion-completion L2 table");
  std::string evalo_data, evalo_methods = "linint", evalo_nogan, evalo_stmi,
              evalo_out = "occlusion.csv";
  double evalo_rate = 0.8;
  std::uint64_t evalo_seed = 1;
  evalo->add_option("--data", evalo_data, "dataset directory")->required();
  evalo->add_option("--rate", evalo_rate, "occlusion rate");
  evalo->add_option("--methods", evalo_methods, "comma list of linint,nogan,stmi");
  evalo->add_option("--nogan-checkpoint", evalo_nogan, "checkpoint for the nogan method");
  evalo->add_option("--stmi-checkpoint", evalo_stmi, "checkpoint for the stmi method");
  evalo->add_option("--seed", evalo_seed, "mask seed");
  evalo->add_option("--out", evalo_out, "output CSV path");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "run a deterministic completion baseline");
  std::string base_method, base_data, base_mask, base_out;
  baseline->add_option("--method", base_method, "zerovel|linint")->required();
  baseline->add_option("--data", base_data, "dataset directory")->required();
  baseline->add_option("--mask", base_mask, "mask directory")->required();
  baseline->add_option("--out", base_out, "output dataset directory")->required();

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "predict a single sequence");
  std::string gen_ckpt, gen_seed_seq, gen_out = "generated.mseq";
  double gen_predict_seconds = 2.0;
  std::uint64_t gen_noise_seed = 1;
  gen_cmd->add_option("--checkpoint", gen_ckpt, "checkpoint path")->required();
  gen_cmd->add_option("--seed-seq", gen_seed_seq, "seed sequence file")->required();
  gen_cmd->add_option("--predict-seconds", gen_predict_seconds, "prediction horizon");
  gen_cmd->add_option("--noise-seed", gen_noise_seed, "noise seed");
  gen_cmd->add_option("--out", gen_out, "output sequence file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed())
      return run_synth(synth_n, synth_frames, synth_fps, synth_seed, synth_out,
                       synth_archetypes, synth_val_fraction);
    if (mask->parsed())
      return run_mask(mask_pattern, mask_rate, mask_visible, mask_seed, mask_in, mask_out);
    if (train_cmd->parsed()) return run_train(train_config, train_data, train_out);
    if (evalm->parsed()) return run_eval_metrics(evalm_gt, evalm_gen, evalm_windows, evalm_out);
    if (evalo->parsed())
      return run_eval_occlusion(evalo_data, evalo_rate, evalo_methods, evalo_nogan, evalo_stmi,
                                evalo_out, evalo_seed);
    if (baseline->parsed()) return run_baseline(base_method, base_data, base_mask, base_out);
    if (gen_cmd->parsed())
      return run_generate(gen_ckpt, gen_seed_seq, gen_predict_seconds, gen_noise_seed, gen_out);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 3);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 4);
  } catch (const ContractError& e) {
    return fail("contract", e.what(), 1);
  } catch (const Error& e) {
    return fail("internal", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 2;
}
