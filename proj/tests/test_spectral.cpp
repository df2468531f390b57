#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "stmi/spectral.hpp"

using namespace stmi;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Brute-force O(n^2) DFT, the independent oracle for every FFT-based value.
std::vector<double> dft_power(const std::vector<double>& x, int padded) {
  std::vector<double> ps(static_cast<size_t>(padded));
  for (int k = 0; k < padded; ++k) {
    std::complex<double> acc(0, 0);
    for (int t = 0; t < static_cast<int>(x.size()); ++t)
      acc += x[static_cast<size_t>(t)] *
             std::exp(std::complex<double>(0, -2.0 * kPi * k * t / padded));
    ps[static_cast<size_t>(k)] = std::norm(acc);
  }
  return ps;
}

double entropy_of_normalized(std::vector<double> ps) {
  double total = 0;
  for (double v : ps) total += v;
  double h = 0;
  for (double v : ps) {
    if (v <= 0) continue;
    const double p = v / total;
    h -= p * std::log(p);
  }
  return h;
}

/// Dataset where every feature carries the given per-frame signal generator.
MotionDataset signal_dataset(int n_seq, int frames, int joints,
                             const std::function<double(int seq, int feature, int frame)>& f) {
  MotionDataset d;
  d.topology = SkeletonTopology::default17();
  d.topology.joints = joints;
  d.topology.bones.clear();
  for (int j = 1; j < joints; ++j) d.topology.bones.emplace_back(j - 1, j);
  d.topology.extremity_pairs = {{0, joints - 1}};
  d.topology.hip = 0;
  d.topology.left_hip = 0;
  d.topology.right_hip = joints - 1;
  d.topology.id = "line" + std::to_string(joints);
  for (int i = 0; i < n_seq; ++i) {
    MotionSequence s(frames, joints, 12.5);
    for (int fr = 0; fr < frames; ++fr)
      for (int j = 0; j < joints; ++j)
        for (int c = 0; c < 3; ++c) s.at(fr, j, c) = f(i, j * 3 + c, fr);
    d.sequences.push_back(std::move(s));
    d.names.push_back("s" + std::to_string(i));
    d.tags.emplace_back("train");
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// power_spectrum
// ---------------------------------------------------------------------------

TEST(PowerSpectrum, ConstantSignalAllEnergyAtDc) {
  // power-of-two length so no zero-padding leakage
  std::vector<double> x(16, 3.0);
  auto ps = power_spectrum(x);
  ASSERT_EQ(ps.size(), 16u);
  EXPECT_NEAR(ps[0], 16.0 * 16.0 * 9.0, 1e-9);
  for (size_t e = 1; e < ps.size(); ++e) EXPECT_NEAR(ps[e], 0.0, 1e-9);
}

TEST(PowerSpectrum, UnitImpulseFlatSpectrum) {
  std::vector<double> x(12, 0.0);
  x[4] = 1.0;
  auto ps = power_spectrum(x);  // padded to 16
  ASSERT_EQ(ps.size(), 16u);
  for (double v : ps) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(PowerSpectrum, IntegerFrequencySineExactlyTwoBins) {
  const int n = 32;
  std::vector<double> x(static_cast<size_t>(n));
  const int k0 = 5;
  for (int t = 0; t < n; ++t) x[static_cast<size_t>(t)] = std::sin(2.0 * kPi * k0 * t / n);
  auto ps = power_spectrum(x);
  for (int e = 0; e < n; ++e) {
    if (e == k0 || e == n - k0) EXPECT_NEAR(ps[static_cast<size_t>(e)], n * n / 4.0, 1e-9);
    else EXPECT_NEAR(ps[static_cast<size_t>(e)], 0.0, 1e-9);
  }
}

TEST(PowerSpectrum, MatchesBruteForceDft) {
  Rng rng(3);
  for (int len : {5, 8, 13, 32}) {
    std::vector<double> x(static_cast<size_t>(len));
    for (auto& v : x) v = rng.normal();
    auto fast = power_spectrum(x);
    auto slow = dft_power(x, static_cast<int>(fast.size()));
    for (size_t e = 0; e < fast.size(); ++e)
      ASSERT_NEAR(fast[e], slow[e], 1e-9 * std::max(1.0, slow[e]));
  }
}

TEST(PowerSpectrum, ParsevalIdentityOnThousandRandomSignals) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const int len = 4 + static_cast<int>(seed % 29);
    std::vector<double> x(static_cast<size_t>(len));
    for (auto& v : x) v = rng.normal();
    auto ps = power_spectrum(x);
    double time_energy = 0;
    for (double v : x) time_energy += v * v;
    double freq_energy = 0;
    for (double v : ps) freq_energy += v;
    freq_energy /= static_cast<double>(ps.size());
    ASSERT_NEAR(freq_energy / time_energy, 1.0, 1e-9) << "seed " << seed;
  }
}

// ---------------------------------------------------------------------------
// psent
// ---------------------------------------------------------------------------

TEST(Psent, ImpulseDatasetEqualsLogUniform) {
  // every feature an impulse -> flat spectrum -> entropy of the uniform
  // distribution over E = 16 bins
  auto d = signal_dataset(4, 12, 3, [](int, int, int fr) { return fr == 3 ? 1.0 : 0.0; });
  const double h = psent(d, {0.0, 12 / 12.5});
  EXPECT_NEAR(h, std::log(16.0), 1e-9);
}

TEST(Psent, ConstantDatasetIsZero) {
  // power-of-two window keeps a constant signal leakage-free
  auto d = signal_dataset(3, 16, 3, [](int, int f, int) { return 2.0 + f; });
  EXPECT_NEAR(psent(d, {0.0, 16 / 12.5}), 0.0, 1e-12);
}

TEST(Psent, SineDatasetMatchesBruteForceOracle) {
  auto gen = [](int seq, int feature, int fr) {
    return std::sin(2.0 * kPi * (0.07 * (feature + 1)) * fr + 0.3 * seq) + 0.1 * feature;
  };
  auto d = signal_dataset(5, 20, 4, gen);
  const Window w{0.0, 20 / 12.5};
  const double got = psent(d, w);
  // oracle: brute-force DFT + entropy, averaged over sequences and features
  double expect = 0.0;
  const int E = 32;
  for (int i = 0; i < 5; ++i) {
    double per_seq = 0.0;
    for (int f = 0; f < 12; ++f) {
      std::vector<double> x(20);
      for (int t = 0; t < 20; ++t) x[static_cast<size_t>(t)] = gen(i, f, t);
      per_seq += entropy_of_normalized(dft_power(x, E));
    }
    expect += per_seq / 12.0;
  }
  expect /= 5.0;
  EXPECT_NEAR(got, expect, 1e-9);
}

TEST(Psent, InvariantToUniformAmplitudeScaling) {
  auto gen = [](int seq, int f, int fr) { return std::sin(0.4 * fr + f + seq); };
  auto a = signal_dataset(3, 16, 3, gen);
  auto b = signal_dataset(3, 16, 3, [&gen](int s, int f, int fr) { return 37.5 * gen(s, f, fr); });
  const Window w{0.0, 16 / 12.5};
  EXPECT_NEAR(psent(a, w), psent(b, w), 1e-12);
}

TEST(Psent, InvariantToCircularTimeShift) {
  auto gen = [](int seq, int f, int fr) { return std::sin(0.9 * fr + 0.2 * f) + 0.01 * seq * fr; };
  auto a = signal_dataset(3, 16, 3, gen);
  auto b = signal_dataset(3, 16, 3,
                          [&gen](int s, int f, int fr) { return gen(s, f, (fr + 5) % 16); });
  const Window w{0.0, 16 / 12.5};
  EXPECT_NEAR(psent(a, w), psent(b, w), 1e-9);
}

TEST(Psent, StandStillArchetypeConcentratedAtDc) {
  const SkeletonTopology topo = SkeletonTopology::default17();
  MotionDataset d;
  d.topology = topo;
  for (int i = 0; i < 3; ++i) {
    d.sequences.push_back(synth_sequence(Archetype::StandStill, 32, 12.5, topo, 50 + i));
    d.names.push_back("s" + std::to_string(i));
    d.tags.emplace_back("train");
  }
  EXPECT_NEAR(psent(d, {0.0, 32 / 12.5}), 0.0, 1e-12);
}

// ---------------------------------------------------------------------------
// pskl
// ---------------------------------------------------------------------------

TEST(Pskl, SameDatasetIsZero) {
  auto d = signal_dataset(4, 20, 3,
                          [](int s, int f, int fr) { return std::sin(0.3 * fr + f) + 0.2 * s; });
  const Window w{0.0, 20 / 12.5};
  EXPECT_NEAR(pskl(d, d, w), 0.0, 1e-9);
}

TEST(Pskl, NonNegativeBothDirections) {
  Rng rng(9);
  auto a = signal_dataset(4, 20, 3, [&rng](int, int, int) { return rng.normal(); });
  auto b = signal_dataset(4, 20, 3,
                          [](int s, int f, int fr) { return std::sin(0.5 * fr + f + s); });
  const Window w{0.0, 20 / 12.5};
  EXPECT_GE(pskl(a, b, w), 0.0);
  EXPECT_GE(pskl(b, a, w), 0.0);
  EXPECT_GT(pskl(a, b, w), 1e-4);  // genuinely different spectra
}

TEST(Pskl, DisjointHalvesOfOneGeneratorSmallAndNearSymmetric) {
  auto gen = [](int seq, int f, int fr) {
    return std::sin(2.0 * kPi * 0.11 * fr + 0.77 * seq + f) +
           0.3 * std::sin(2.0 * kPi * 0.23 * fr + seq);
  };
  auto a = signal_dataset(12, 32, 3, gen);
  auto b = signal_dataset(12, 32, 3, [&gen](int s, int f, int fr) { return gen(s + 12, f, fr); });
  const Window w{0.0, 32 / 12.5};
  const double ab = pskl(a, b, w);
  const double ba = pskl(b, a, w);
  EXPECT_LT(ab, 0.5);
  EXPECT_LT(std::fabs(ab - ba) / std::max(ab, ba), 0.6);  // near-symmetric
}

TEST(Pskl, ProfileRowsAreDistributions) {
  auto d = signal_dataset(3, 20, 3, [](int s, int f, int fr) { return std::sin(fr + f + s); });
  SpectrumProfile p = spectrum_profile(d, {0.0, 20 / 12.5});
  for (int f = 0; f < p.features; ++f) {
    double total = 0;
    for (int e = 0; e < p.bins; ++e) {
      const double v = p.row(f)[e];
      EXPECT_GT(v, 0.0);  // smoothing removes zeros
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

// ---------------------------------------------------------------------------
// l2 metric
// ---------------------------------------------------------------------------

TEST(L2Coords, IdenticalSequencesZero) {
  Rng rng(4);
  MotionSequence s(6, 5, 12.5);
  for (auto& v : s.coords) v = rng.normal();
  EXPECT_DOUBLE_EQ(l2_coords(s, s), 0.0);
}

TEST(L2Coords, UniformTenMillimeterOffset) {
  MotionSequence a(6, 5, 12.5);
  MotionSequence b = a;
  for (int f = 0; f < 6; ++f)
    for (int j = 0; j < 5; ++j) b.at(f, j, 0) += 10.0;
  EXPECT_NEAR(l2_coords(a, b), 10.0, 1e-12);
}

TEST(L2Coords, MatchesDoubleLoopOracle) {
  Rng rng(6);
  MotionSequence a(7, 4, 12.5), b(7, 4, 12.5);
  for (auto& v : a.coords) v = 100 * rng.normal();
  for (auto& v : b.coords) v = 100 * rng.normal();
  double expect = 0.0;
  for (int f = 2; f < 6; ++f)
    for (int j = 0; j < 4; ++j) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(f, j, c) - b.at(f, j, c);
        d2 += d * d;
      }
      expect += std::sqrt(d2);
    }
  expect /= 4.0 * 4.0;
  EXPECT_DOUBLE_EQ(l2_coords(a, b, 2, 6), expect);
}

TEST(L2CoordsOccluded, OnlyOccludedCellsCounted) {
  MotionSequence a(4, 3, 12.5);
  MotionSequence b = a;
  OcclusionMask m(4, 3, 1);
  m.set_joint(1, 2, 0);
  b.at(1, 2, 0) += 5.0;   // occluded cell differs
  b.at(0, 0, 0) += 999.0;  // visible cell differs, must not count
  EXPECT_NEAR(l2_coords_occluded(a, b, m), 5.0, 1e-12);
}

// ---------------------------------------------------------------------------
// windows and reports
// ---------------------------------------------------------------------------

TEST(Windows, ParseAndFrameConversion) {
  auto ws = parse_windows("0-1,1-2,2-3,3-4,0-4");
  ASSERT_EQ(ws.size(), 5u);
  EXPECT_DOUBLE_EQ(ws[4].end_s, 4.0);
  const auto [f0, f1] = window_frames(ws[1], 12.5, 50);
  EXPECT_EQ(f0, 13);  // llround(1 * 12.5)
  EXPECT_EQ(f1, 25);
  EXPECT_THROW(parse_windows("nonsense"), FormatError);
}

TEST(Windows, ReportAndCsv) {
  namespace fs = std::filesystem;
  auto gt = signal_dataset(4, 50, 3,
                           [](int s, int f, int fr) { return std::sin(0.4 * fr + f + s); });
  auto gen = signal_dataset(4, 50, 3,
                            [](int s, int f, int fr) { return std::sin(0.4 * fr + f + s + 0.1); });
  auto reports = windowed_report(gt, gen, default_windows());
  ASSERT_EQ(reports.size(), 5u);
  for (const auto& r : reports) {
    EXPECT_GE(r.psent, 0.0);
    EXPECT_GE(r.pskl_gt_gen, 0.0);
    EXPECT_GE(r.pskl_gen_gt, 0.0);
    EXPECT_GE(r.l2_mm, 0.0);
  }
  const std::string path = (fs::temp_directory_path() / "stmi_metrics.csv").string();
  write_metrics_csv(reports, 12.5, 1e-8, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("# fps=12.5", 0), 0u);
  std::getline(is, line);
  EXPECT_EQ(line, "window_start_s,window_end_s,psent,pskl_gt_gen,pskl_gen_gt,l2_mm");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 5);
  fs::remove(path);
}
