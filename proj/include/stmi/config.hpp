#pragma once

// ModelConfig file formats: a flat key=value run config for the CLI and a
// JSON sidecar stored next to checkpoints with all dimensions and seeds.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "stmi/core.hpp"
#include "stmi/training.hpp"

namespace stmi {

namespace detail {

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    const auto end = line.find_last_not_of(" \t\r");
    line = line.substr(begin, end - begin + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) + " is not key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto kend = key.find_last_not_of(" \t");
    key = key.substr(0, kend + 1);
    const auto vbegin = value.find_first_not_of(" \t");
    value = vbegin == std::string::npos ? "" : value.substr(vbegin);
    kv[key] = value;
  }
  return kv;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out;
  if (!(is >> out)) throw FormatError("config value for '" + key + "' is not numeric");
  return out;
}

}  // namespace detail

/// Flat key=value run configuration. Unknown keys are format errors so typos
/// fail loudly. Missing keys keep the desk-scale defaults.
inline ModelConfig parse_model_config(const std::string& path) {
  ModelConfig cfg;
  for (const auto& [key, value] : detail::read_kv_file(path)) {
    if (key == "h") cfg.codec.h = detail::parse_number<int>(key, value);
    else if (key == "codec_blocks") cfg.codec.blocks = detail::parse_number<int>(key, value);
    else if (key == "codec_width") cfg.codec.width = detail::parse_number<int>(key, value);
    else if (key == "ublocks") cfg.gen.ublocks = detail::parse_number<int>(key, value);
    else if (key == "ublock_depth") cfg.gen.depth = detail::parse_number<int>(key, value);
    else if (key == "gen_channels") cfg.gen.channels = detail::parse_number<int>(key, value);
    else if (key == "disc_blocks") cfg.disc.res_blocks = detail::parse_number<int>(key, value);
    else if (key == "disc_channels") cfg.disc.channels = detail::parse_number<int>(key, value);
    else if (key == "feature_width") cfg.disc.feature_width = detail::parse_number<int>(key, value);
    else if (key == "head_width") cfg.disc.head_width = detail::parse_number<int>(key, value);
    else if (key == "lambda_rec") cfg.weights.rec = detail::parse_number<double>(key, value);
    else if (key == "lambda_limb") cfg.weights.limb = detail::parse_number<double>(key, value);
    else if (key == "lambda_bone") cfg.weights.bone = detail::parse_number<double>(key, value);
    else if (key == "lambda_disc") cfg.weights.disc = detail::parse_number<double>(key, value);
    else if (key == "lambda_gen") cfg.weights.gen = detail::parse_number<double>(key, value);
    else if (key == "gamma_r1") cfg.weights.gamma = detail::parse_number<double>(key, value);
    else if (key == "variant") cfg.variant = variant_from_name(value);
    else if (key == "lr") cfg.lr = detail::parse_number<double>(key, value);
    else if (key == "beta1") cfg.beta1 = detail::parse_number<double>(key, value);
    else if (key == "beta2") cfg.beta2 = detail::parse_number<double>(key, value);
    else if (key == "epsilon") cfg.eps = detail::parse_number<double>(key, value);
    else if (key == "batch_size") cfg.batch_size = detail::parse_number<int>(key, value);
    else if (key == "steps") cfg.steps = detail::parse_number<int>(key, value);
    else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(key, value);
    else if (key == "crop_frames") cfg.crop_frames = detail::parse_number<int>(key, value);
    else if (key == "eval_every") cfg.eval_every = detail::parse_number<int>(key, value);
    else if (key == "mask_pattern") cfg.mask.pattern = mask_pattern_from_name(value);
    else if (key == "mask_rate") cfg.mask.rate = detail::parse_number<double>(key, value);
    else if (key == "visible_frames") cfg.mask.visible_frames = detail::parse_number<int>(key, value);
    else throw FormatError("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

inline void write_model_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "h=" << cfg.codec.h << "\ncodec_blocks=" << cfg.codec.blocks
     << "\ncodec_width=" << cfg.codec.width << "\nublocks=" << cfg.gen.ublocks
     << "\nublock_depth=" << cfg.gen.depth << "\ngen_channels=" << cfg.gen.channels
     << "\ndisc_blocks=" << cfg.disc.res_blocks << "\ndisc_channels=" << cfg.disc.channels
     << "\nfeature_width=" << cfg.disc.feature_width << "\nhead_width=" << cfg.disc.head_width
     << "\nlambda_rec=" << fmt_g17(cfg.weights.rec) << "\nlambda_limb=" << fmt_g17(cfg.weights.limb)
     << "\nlambda_bone=" << fmt_g17(cfg.weights.bone) << "\nlambda_disc=" << fmt_g17(cfg.weights.disc)
     << "\nlambda_gen=" << fmt_g17(cfg.weights.gen) << "\ngamma_r1=" << fmt_g17(cfg.weights.gamma)
     << "\nvariant=" << variant_name(cfg.variant) << "\nlr=" << fmt_g17(cfg.lr)
     << "\nbeta1=" << fmt_g17(cfg.beta1) << "\nbeta2=" << fmt_g17(cfg.beta2)
     << "\nepsilon=" << fmt_g17(cfg.eps) << "\nbatch_size=" << cfg.batch_size
     << "\nsteps=" << cfg.steps << "\nseed=" << cfg.seed
     << "\ncrop_frames=" << cfg.crop_frames << "\neval_every=" << cfg.eval_every
     << "\nmask_pattern=" << mask_pattern_name(cfg.mask.pattern)
     << "\nmask_rate=" << fmt_g17(cfg.mask.rate)
     << "\nvisible_frames=" << cfg.mask.visible_frames << "\n";
}

/// Checkpoint sidecar: every dimension and seed needed to rebuild the model
/// that a parameter store belongs to.
inline void write_model_sidecar(const ModelConfig& cfg, const std::string& path) {
  nlohmann::json j;
  j["format"] = "stmi-checkpoint";
  j["version"] = 1;
  j["codec"] = {{"h", cfg.codec.h}, {"blocks", cfg.codec.blocks}, {"width", cfg.codec.width}};
  j["generator"] = {{"ublocks", cfg.gen.ublocks}, {"depth", cfg.gen.depth},
                    {"channels", cfg.gen.channels}};
  j["discriminator"] = {{"res_blocks", cfg.disc.res_blocks},
                        {"channels", cfg.disc.channels},
                        {"feature_width", cfg.disc.feature_width},
                        {"head_width", cfg.disc.head_width}};
  j["weights"] = {{"rec", cfg.weights.rec},   {"limb", cfg.weights.limb},
                  {"bone", cfg.weights.bone}, {"disc", cfg.weights.disc},
                  {"gen", cfg.weights.gen},   {"gamma", cfg.weights.gamma}};
  j["variant"] = variant_name(cfg.variant);
  j["optimizer"] = {{"lr", cfg.lr}, {"beta1", cfg.beta1}, {"beta2", cfg.beta2},
                    {"epsilon", cfg.eps}};
  j["batch_size"] = cfg.batch_size;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["crop_frames"] = cfg.crop_frames;
  j["eval_every"] = cfg.eval_every;
  j["mask"] = {{"pattern", mask_pattern_name(cfg.mask.pattern)}, {"rate", cfg.mask.rate},
               {"visible_frames", cfg.mask.visible_frames}};
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
}

inline ModelConfig read_model_sidecar(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint sidecar: " + std::string(e.what()));
  }
  if (j.value("format", "") != "stmi-checkpoint")
    throw FormatError("'" + path + "' is not a checkpoint sidecar");
  ModelConfig cfg;
  try {
    cfg.codec.h = j["codec"]["h"];
    cfg.codec.blocks = j["codec"]["blocks"];
    cfg.codec.width = j["codec"]["width"];
    cfg.gen.ublocks = j["generator"]["ublocks"];
    cfg.gen.depth = j["generator"]["depth"];
    cfg.gen.channels = j["generator"]["channels"];
    cfg.disc.res_blocks = j["discriminator"]["res_blocks"];
    cfg.disc.channels = j["discriminator"]["channels"];
    cfg.disc.feature_width = j["discriminator"]["feature_width"];
    cfg.disc.head_width = j["discriminator"]["head_width"];
    cfg.weights.rec = j["weights"]["rec"];
    cfg.weights.limb = j["weights"]["limb"];
    cfg.weights.bone = j["weights"]["bone"];
    cfg.weights.disc = j["weights"]["disc"];
    cfg.weights.gen = j["weights"]["gen"];
    cfg.weights.gamma = j["weights"]["gamma"];
    cfg.variant = variant_from_name(j["variant"]);
    cfg.lr = j["optimizer"]["lr"];
    cfg.beta1 = j["optimizer"]["beta1"];
    cfg.beta2 = j["optimizer"]["beta2"];
    cfg.eps = j["optimizer"]["epsilon"];
    cfg.batch_size = j["batch_size"];
    cfg.steps = j["steps"];
    cfg.seed = j["seed"];
    cfg.crop_frames = j["crop_frames"];
    cfg.eval_every = j["eval_every"];
    cfg.mask.pattern = mask_pattern_from_name(j["mask"]["pattern"]);
    cfg.mask.rate = j["mask"]["rate"];
    cfg.mask.visible_frames = j["mask"]["visible_frames"];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint sidecar: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

}  // namespace stmi
