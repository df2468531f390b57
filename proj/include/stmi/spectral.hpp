#pragma once

// Frequency-domain evaluation: power spectra, spectral entropy (PSEnt),
// spectral KL divergence in both directions (PSKL), coordinate L2, and the
// windowed evaluation protocol.

#include <complex>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stmi/core.hpp"
#include "stmi/motion.hpp"

namespace stmi {

namespace detail {

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Iterative radix-2 FFT, in place. Size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const int n = static_cast<int>(a.size());
  if (n & (n - 1)) throw ContractError("fft size must be a power of two");
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / len;
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[static_cast<size_t>(i + k)];
        const std::complex<double> v = a[static_cast<size_t>(i + k + len / 2)] * w;
        a[static_cast<size_t>(i + k)] = u + v;
        a[static_cast<size_t>(i + k + len / 2)] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace detail

/// |FFT|^2 of a real signal zero-padded to the next power of two; the full
/// two-sided spectrum is returned (E = padded length bins).
inline std::vector<double> power_spectrum(const double* signal, int len) {
  if (len < 2) throw ContractError("power_spectrum needs at least 2 samples");
  const int E = detail::next_pow2(len);
  std::vector<std::complex<double>> a(static_cast<size_t>(E), {0.0, 0.0});
  for (int i = 0; i < len; ++i) a[static_cast<size_t>(i)] = {signal[i], 0.0};
  detail::fft_radix2(a);
  std::vector<double> ps(static_cast<size_t>(E));
  for (int e = 0; e < E; ++e) ps[static_cast<size_t>(e)] = std::norm(a[static_cast<size_t>(e)]);
  return ps;
}

inline std::vector<double> power_spectrum(const std::vector<double>& signal) {
  return power_spectrum(signal.data(), static_cast<int>(signal.size()));
}

/// Evaluation window in seconds, start-inclusive end-exclusive once
/// converted to frames.
struct Window {
  double start_s = 0.0;
  double end_s = 0.0;
};

inline std::pair<int, int> window_frames(const Window& w, double fps, int frames) {
  int f0 = static_cast<int>(std::llround(w.start_s * fps));
  int f1 = static_cast<int>(std::llround(w.end_s * fps));
  f0 = std::max(0, std::min(f0, frames));
  f1 = std::max(0, std::min(f1, frames));
  if (f1 - f0 < 2) throw ContractError("window shorter than 2 frames");
  return {f0, f1};
}

namespace detail {

/// Per-feature spectrum normalized to a probability distribution. An
/// all-zero spectrum (identically zero signal) becomes a DC point mass,
/// the limit of a constant signal of vanishing amplitude.
inline void normalize_spectrum(std::vector<double>& ps) {
  double total = 0.0;
  for (double v : ps) total += v;
  if (total <= 0.0) {
    std::fill(ps.begin(), ps.end(), 0.0);
    ps[0] = 1.0;
    return;
  }
  for (double& v : ps) v /= total;
}

inline std::vector<double> feature_signal(const MotionSequence& s, int feature, int f0, int f1) {
  const int j = feature / 3;
  const int c = feature % 3;
  std::vector<double> x(static_cast<size_t>(f1 - f0));
  for (int f = f0; f < f1; ++f) x[static_cast<size_t>(f - f0)] = s.at(f, j, c);
  return x;
}

}  // namespace detail

/// Per-feature dataset spectrum distribution: mean of per-sequence
/// normalized spectra, smoothed by eps and renormalized so PSKL is finite.
struct SpectrumProfile {
  int features = 0;
  int bins = 0;
  std::vector<double> table;  // features x bins, rows sum to 1

  const double* row(int f) const { return table.data() + static_cast<size_t>(f) * bins; }
};

inline SpectrumProfile spectrum_profile(const MotionDataset& d, const Window& w,
                                        double eps = 1e-8) {
  if (d.sequences.empty()) throw ContractError("empty dataset");
  const double fps = d.sequences[0].fps;
  const auto [f0, f1] = window_frames(w, fps, d.sequences[0].frames);
  const int E = detail::next_pow2(f1 - f0);
  const int features = d.topology.joints * 3;
  SpectrumProfile p;
  p.features = features;
  p.bins = E;
  p.table.assign(static_cast<size_t>(features) * E, 0.0);

  const int n = d.size();
  std::vector<std::vector<double>> partial(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    const MotionSequence& s = d.sequences[static_cast<size_t>(i)];
    std::vector<double> acc(static_cast<size_t>(features) * E, 0.0);
    for (int f = 0; f < features; ++f) {
      auto sig = detail::feature_signal(s, f, f0, f1);
      auto ps = power_spectrum(sig);
      detail::normalize_spectrum(ps);
      for (int e = 0; e < E; ++e) acc[static_cast<size_t>(f) * E + e] += ps[static_cast<size_t>(e)];
    }
    partial[static_cast<size_t>(i)] = std::move(acc);
  });
  // deterministic fold in sequence order
  for (int i = 0; i < n; ++i)
    for (size_t k = 0; k < p.table.size(); ++k) p.table[k] += partial[static_cast<size_t>(i)][k];
  for (double& v : p.table) v /= n;
  // smooth and renormalize rows
  for (int f = 0; f < features; ++f) {
    double total = 0.0;
    for (int e = 0; e < E; ++e) total += (p.table[static_cast<size_t>(f) * E + e] += eps);
    for (int e = 0; e < E; ++e) p.table[static_cast<size_t>(f) * E + e] /= total;
  }
  return p;
}

/// Mean spectral entropy (natural log) over sequences and features of the
/// per-sequence normalized power spectrum. ln(E) for flat spectra, 0 when
/// all mass sits in one bin.
inline double psent(const MotionDataset& d, const Window& w) {
  if (d.sequences.empty()) throw ContractError("empty dataset");
  const double fps = d.sequences[0].fps;
  const auto [f0, f1] = window_frames(w, fps, d.sequences[0].frames);
  const int features = d.topology.joints * 3;
  const int n = d.size();
  std::vector<double> per_seq(static_cast<size_t>(n), 0.0);
  parallel_for(n, [&](int i) {
    const MotionSequence& s = d.sequences[static_cast<size_t>(i)];
    double acc = 0.0;
    for (int f = 0; f < features; ++f) {
      auto sig = detail::feature_signal(s, f, f0, f1);
      auto ps = power_spectrum(sig);
      detail::normalize_spectrum(ps);
      double h = 0.0;
      for (double pv : ps)
        if (pv > 0.0) h -= pv * std::log(pv);
      acc += h;
    }
    per_seq[static_cast<size_t>(i)] = acc / features;
  });
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += per_seq[static_cast<size_t>(i)];
  return total / n;
}

/// Mean over features of KL(profile_c || profile_d). Asymmetric; callers
/// report both directions.
inline double pskl(const MotionDataset& c, const MotionDataset& d, const Window& w,
                   double eps = 1e-8) {
  if (c.topology.joints != d.topology.joints)
    throw ContractError("datasets must share topology");
  if (!c.sequences.empty() && !d.sequences.empty() &&
      c.sequences[0].fps != d.sequences[0].fps)
    throw ContractError("datasets must share fps");
  const SpectrumProfile pc = spectrum_profile(c, w, eps);
  const SpectrumProfile pd = spectrum_profile(d, w, eps);
  if (pc.bins != pd.bins) throw ContractError("window lengths differ between datasets");
  double total = 0.0;
  for (int f = 0; f < pc.features; ++f) {
    const double* a = pc.row(f);
    const double* b = pd.row(f);
    for (int e = 0; e < pc.bins; ++e) total += a[e] * std::log(a[e] / b[e]);
  }
  return total / pc.features;
}

/// Mean per-joint Euclidean distance (mm) over a frame range.
inline double l2_coords(const MotionSequence& gt, const MotionSequence& gen, int f0, int f1) {
  if (gt.frames != gen.frames || gt.joints != gen.joints)
    throw ShapeError("sequences must have equal extents");
  if (f0 < 0 || f1 > gt.frames || f1 - f0 < 1) throw ContractError("bad frame range");
  double total = 0.0;
  for (int f = f0; f < f1; ++f)
    for (int j = 0; j < gt.joints; ++j) {
      const double dx = gt.at(f, j, 0) - gen.at(f, j, 0);
      const double dy = gt.at(f, j, 1) - gen.at(f, j, 1);
      const double dz = gt.at(f, j, 2) - gen.at(f, j, 2);
      total += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  return total / (static_cast<double>(f1 - f0) * gt.joints);
}

inline double l2_coords(const MotionSequence& gt, const MotionSequence& gen) {
  return l2_coords(gt, gen, 0, gt.frames);
}

/// L2 over the occluded region only: per-joint distance averaged over
/// (frame, joint) cells with at least one occluded coordinate.
inline double l2_coords_occluded(const MotionSequence& gt, const MotionSequence& gen,
                                 const OcclusionMask& m) {
  if (gt.frames != gen.frames || gt.joints != gen.joints)
    throw ShapeError("sequences must have equal extents");
  if (m.frames != gt.frames || m.joints != gt.joints)
    throw ShapeError("mask shape does not match sequences");
  double total = 0.0;
  std::int64_t count = 0;
  for (int f = 0; f < gt.frames; ++f)
    for (int j = 0; j < gt.joints; ++j) {
      if (m.joint_visible(f, j)) continue;
      const double dx = gt.at(f, j, 0) - gen.at(f, j, 0);
      const double dy = gt.at(f, j, 1) - gen.at(f, j, 1);
      const double dz = gt.at(f, j, 2) - gen.at(f, j, 2);
      total += std::sqrt(dx * dx + dy * dy + dz * dz);
      ++count;
    }
  if (count == 0) throw ContractError("mask has no occluded joints");
  return total / static_cast<double>(count);
}

struct MetricReport {
  double psent = 0.0;
  double pskl_gt_gen = 0.0;
  double pskl_gen_gt = 0.0;
  double l2_mm = 0.0;
  Window window;
};

inline std::vector<Window> default_windows() {
  return {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}};
}

/// One report per window: spectral entropy of the generated set, KL
/// divergence in both directions against ground truth, and coordinate L2
/// over paired sequences.
inline std::vector<MetricReport> windowed_report(const MotionDataset& gt,
                                                 const MotionDataset& gen,
                                                 const std::vector<Window>& windows) {
  if (gt.size() != gen.size() || gt.size() == 0)
    throw ContractError("ground-truth and generated sets must pair up");
  std::vector<MetricReport> out;
  for (const Window& w : windows) {
    MetricReport r;
    r.window = w;
    r.psent = psent(gen, w);
    r.pskl_gt_gen = pskl(gt, gen, w);
    r.pskl_gen_gt = pskl(gen, gt, w);
    const auto [f0, f1] = window_frames(w, gt.sequences[0].fps, gt.sequences[0].frames);
    double l2 = 0.0;
    for (int i = 0; i < gt.size(); ++i)
      l2 += l2_coords(gt.sequences[static_cast<size_t>(i)], gen.sequences[static_cast<size_t>(i)], f0, f1);
    r.l2_mm = l2 / gt.size();
    out.push_back(r);
  }
  return out;
}

inline std::vector<Window> parse_windows(const std::string& spec) {
  std::vector<Window> out;
  std::istringstream is(spec);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos) throw FormatError("bad window '" + tok + "'");
    try {
      out.push_back({std::stod(tok.substr(0, dash)), std::stod(tok.substr(dash + 1))});
    } catch (const std::exception&) {
      throw FormatError("bad window '" + tok + "'");
    }
  }
  if (out.empty()) throw FormatError("no windows given");
  return out;
}

/// CSV with a metadata header line, then one row per window.
inline void write_metrics_csv(const std::vector<MetricReport>& reports, double fps,
                              double eps, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "# fps=" << fmt_g17(fps) << " eps=" << fmt_g17(eps) << " log_base=e fft_len=";
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto [f0, f1] = window_frames(reports[i].window, fps, 1 << 24);
    if (i) os << ";";
    os << detail::next_pow2(f1 - f0);
  }
  os << "\n";
  os << "window_start_s,window_end_s,psent,pskl_gt_gen,pskl_gen_gt,l2_mm\n";
  for (const auto& r : reports)
    os << fmt_g17(r.window.start_s) << "," << fmt_g17(r.window.end_s) << ","
       << fmt_g17(r.psent) << "," << fmt_g17(r.pskl_gt_gen) << ","
       << fmt_g17(r.pskl_gen_gt) << "," << fmt_g17(r.l2_mm) << "\n";
}

}  // namespace stmi
