#include <gtest/gtest.h>

#include <filesystem>

#include "stmi/config.hpp"
#include "stmi/training.hpp"

using namespace stmi;

namespace {

const SkeletonTopology kTopo = SkeletonTopology::default17();

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.codec.h = 4;
  cfg.codec.blocks = 1;
  cfg.gen.ublocks = 1;
  cfg.gen.depth = 1;
  cfg.gen.channels = 2;
  cfg.disc.res_blocks = 1;
  cfg.disc.channels = 2;
  cfg.disc.feature_width = 2;
  cfg.disc.head_width = 4;
  cfg.batch_size = 2;
  cfg.steps = 3;
  cfg.seed = 11;
  cfg.crop_frames = 8;
  cfg.eval_every = 0;
  return cfg;
}

MotionDataset tiny_dataset(int n = 6, int frames = 16) {
  return synth_dataset(n, frames, kTopo,
                       {Archetype::Walk, Archetype::Turn, Archetype::StopAndGo}, 101);
}

}  // namespace

TEST(Train, RunsAndLogsEveryStep) {
  ModelConfig cfg = tiny_config();
  MotionDataset data = tiny_dataset();
  TrainResult r = train(cfg, data);
  ASSERT_EQ(r.log.rows.size(), 3u);
  for (const auto& row : r.log.rows) EXPECT_TRUE(row.finite());
  EXPECT_TRUE(r.store.all_parameters_finite());
  EXPECT_GT(r.log.wall_seconds, 0.0);
}

TEST(Train, DeterministicGivenSeed) {
  ModelConfig cfg = tiny_config();
  MotionDataset data = tiny_dataset();
  TrainResult a = train(cfg, data);
  TrainResult b = train(cfg, data);
  ASSERT_EQ(a.store.params.size(), b.store.params.size());
  for (const auto& [name, p] : a.store.params)
    ASSERT_EQ(p.data, b.store.at(name).data) << name;
  ASSERT_EQ(a.log.rows.size(), b.log.rows.size());
  for (size_t i = 0; i < a.log.rows.size(); ++i) {
    EXPECT_EQ(a.log.rows[i].rec, b.log.rows[i].rec);
    EXPECT_EQ(a.log.rows[i].disc, b.log.rows[i].disc);
    EXPECT_EQ(a.log.rows[i].total, b.log.rows[i].total);
  }
}

TEST(Train, NoGanNeverTouchesDiscriminatorParameters) {
  ModelConfig cfg = tiny_config();
  cfg.variant = Variant::NoGan;
  MotionDataset data = tiny_dataset();

  // reference: freshly initialized parameters with the same seed
  ParameterStore init;
  Rng rng(mix_seed(cfg.seed, 0x1217));
  init_generator_params(init, rng, cfg.codec, cfg.gen, kTopo.joints);
  init_discriminator_params(init, rng, cfg.codec, cfg.disc, kTopo.joints);

  TrainResult r = train(cfg, data);
  for (const auto& [name, p] : r.store.params) {
    if (name.rfind("disc.", 0) == 0) {
      EXPECT_EQ(p.data, init.at(name).data) << name << " changed in NoGAN";
    }
  }
  // adversarial log terms stay identically zero
  for (const auto& row : r.log.rows) {
    EXPECT_EQ(row.disc, 0.0);
    EXPECT_EQ(row.gen, 0.0);
    EXPECT_EQ(row.r1, 0.0);
  }
  // generator parameters did move
  EXPECT_NE(r.store.at("enc.in.w").data, init.at("enc.in.w").data);
}

TEST(Train, EffectiveWeightsForceAdversarialZeroInNoGan) {
  ModelConfig cfg = tiny_config();
  cfg.variant = Variant::NoGan;
  cfg.weights.disc = 7.0;
  cfg.weights.gen = 9.0;
  const LossWeights w = cfg.effective_weights();
  EXPECT_EQ(w.disc, 0.0);
  EXPECT_EQ(w.gen, 0.0);
  EXPECT_EQ(cfg.branches().count(), 0);
}

TEST(Train, VariantBranchMap) {
  ModelConfig cfg;
  cfg.variant = Variant::BaseDisc;
  EXPECT_TRUE(cfg.branches().base);
  EXPECT_FALSE(cfg.branches().edm);
  EXPECT_FALSE(cfg.branches().motion);
  cfg.variant = Variant::PlusEdm;
  EXPECT_TRUE(cfg.branches().base && cfg.branches().edm);
  EXPECT_FALSE(cfg.branches().motion);
  cfg.variant = Variant::PlusMotion;
  EXPECT_TRUE(cfg.branches().base && cfg.branches().motion);
  EXPECT_FALSE(cfg.branches().edm);
  cfg.variant = Variant::StmiGan;
  EXPECT_EQ(cfg.branches().count(), 3);
}

TEST(Train, SnapshotsOnValidationSplit) {
  ModelConfig cfg = tiny_config();
  cfg.steps = 4;
  cfg.eval_every = 2;
  MotionDataset data = tiny_dataset(8, 16);
  TrainResult r = train(cfg, data);
  ASSERT_EQ(r.log.snapshots.size(), 2u);
  EXPECT_EQ(r.log.snapshots[0].step, 2);
  EXPECT_EQ(r.log.snapshots[1].step, 4);
  for (const auto& rep : r.log.snapshots[0].reports) {
    EXPECT_GE(rep.psent, 0.0);
    EXPECT_GE(rep.pskl_gt_gen, 0.0);
  }
}

TEST(Train, LogCsvRoundTripShape) {
  namespace fs = std::filesystem;
  ModelConfig cfg = tiny_config();
  MotionDataset data = tiny_dataset();
  TrainResult r = train(cfg, data);
  const std::string path = (fs::temp_directory_path() / "stmi_train_log.csv").string();
  write_train_log_csv(r.log, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,rec,limb,bone,disc,gen,r1,total");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 3);
  fs::remove(path);
}

TEST(NoiseSensitivity, PositiveDifferencesWithTrainedScales) {
  ModelConfig cfg = tiny_config();
  MotionDataset data = tiny_dataset();
  TrainResult r = train(cfg, data);
  // force a visibly nonzero noise scale (training only nudges it)
  r.store.at("gen.u0.d1.noise").data[0] = 0.3;
  auto curve = noise_sensitivity(r.store, cfg, data.subset("val"), 3);
  ASSERT_EQ(curve.size(), 8u);  // F=16, visible=8
  double total = 0;
  for (double v : curve) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_GT(total, 0.0);
}

TEST(Generate, ExtendsSeedSequenceByRequestedHorizon) {
  ModelConfig cfg = tiny_config();
  MotionDataset data = tiny_dataset();
  TrainResult r = train(cfg, data);
  MotionSequence seed_seq = detail::crop_sequence(data.sequences[0], 0, 8);
  MotionSequence out = generate(r.store, cfg, kTopo, seed_seq, 0.64, 5);
  EXPECT_EQ(out.frames, 8 + 8);  // 0.64 s at 12.5 fps
  EXPECT_EQ(out.joints, 17);
}

TEST(SpearmanRho, RankCorrelationBasics) {
  EXPECT_NEAR(spearman_rho({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-12);
  EXPECT_NEAR(spearman_rho({1, 2, 3, 4}, {40, 30, 20, 10}), -1.0, 1e-12);
  EXPECT_NEAR(std::fabs(spearman_rho({1, 2, 3, 4}, {7, 7, 7, 7})), 0.0, 1e-12);
}

TEST(ConfigFile, KeyValueRoundTrip) {
  namespace fs = std::filesystem;
  ModelConfig cfg = tiny_config();
  cfg.variant = Variant::PlusEdm;
  cfg.mask.pattern = MaskPattern::Limbs;
  cfg.mask.rate = 0.65;
  const std::string path = (fs::temp_directory_path() / "stmi_cfg.txt").string();
  write_model_config(cfg, path);
  ModelConfig back = parse_model_config(path);
  EXPECT_EQ(back.codec.h, cfg.codec.h);
  EXPECT_EQ(back.variant, cfg.variant);
  EXPECT_EQ(back.mask.pattern, cfg.mask.pattern);
  EXPECT_DOUBLE_EQ(back.mask.rate, cfg.mask.rate);
  EXPECT_EQ(back.steps, cfg.steps);
  fs::remove(path);
}

TEST(ConfigFile, UnknownKeyThrows) {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "stmi_badcfg.txt").string();
  std::ofstream os(path);
  os << "h=8\nnot_a_key=3\n";
  os.close();
  EXPECT_THROW(parse_model_config(path), FormatError);
  fs::remove(path);
}

TEST(Sidecar, JsonRoundTrip) {
  namespace fs = std::filesystem;
  ModelConfig cfg = tiny_config();
  cfg.variant = Variant::PlusMotion;
  const std::string path = (fs::temp_directory_path() / "stmi_sidecar.json").string();
  write_model_sidecar(cfg, path);
  ModelConfig back = read_model_sidecar(path);
  EXPECT_EQ(back.codec.h, cfg.codec.h);
  EXPECT_EQ(back.gen.channels, cfg.gen.channels);
  EXPECT_EQ(back.variant, cfg.variant);
  EXPECT_EQ(back.seed, cfg.seed);
  fs::remove(path);
}

TEST(OcclusionExperiment, TableShapeAndLinintColumn) {
  ModelConfig cfg = tiny_config();
  cfg.steps = 2;
  MotionDataset data = tiny_dataset(6, 16);
  auto rows = occlusion_experiment(data, cfg, {MaskPattern::Frames, MaskPattern::Transmission},
                                   0.5);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    EXPECT_TRUE(row.l2_by_method.count("linint"));
    EXPECT_TRUE(row.l2_by_method.count("nogan"));
    EXPECT_TRUE(row.l2_by_method.count("stmi"));
    EXPECT_GE(row.l2_by_method.at("linint"), 0.0);
  }
  // linint column matches a direct recomputation
  MotionDataset val = data.subset("val");
  double expect = 0;
  for (int i = 0; i < val.size(); ++i) {
    const MotionSequence& s = val.sequences[static_cast<size_t>(i)];
    MaskRecipe recipe{MaskPattern::Frames, 0.5, -1};
    OcclusionMask m = make_mask(recipe, s.frames, s.joints, kTopo,
                                mix_seed(cfg.seed, 0x0CC1, static_cast<std::uint64_t>(i)));
    expect += l2_coords_occluded(s, linear_interpolate(s, m), m);
  }
  expect /= val.size();
  EXPECT_NEAR(rows[0].l2_by_method.at("linint"), expect, 1e-12);
}

TEST(AblationGrid, FiveVariantsProduceReports) {
  ModelConfig cfg = tiny_config();
  cfg.steps = 1;
  MotionDataset data = tiny_dataset(6, 16);
  auto rows = ablation_grid(data, cfg);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].variant, Variant::NoGan);
  EXPECT_EQ(rows[4].variant, Variant::StmiGan);
  for (const auto& row : rows) EXPECT_FALSE(row.reports.empty());
  // renders and serializes
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "stmi_ablation.csv").string();
  write_ablation_csv(rows, path);
  EXPECT_FALSE(render_ablation_table(rows).empty());
  fs::remove(path);
}
