#pragma once

// Adam optimizer and the flat binary parameter-store format.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stmi/core.hpp"
#include "stmi/tensor.hpp"

namespace stmi {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Standard Adam with bias correction. Moment slots are keyed by parameter
/// name; parameters absent from a step's gradient map are left untouched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  void step(ParameterStore& store, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Param& p = store.at(name);
      if (g.size() != p.data.size())
        throw ShapeError("gradient size mismatch for '" + name + "'");
      if (!all_finite(g)) throw NumericError("non-finite gradient for '" + name + "'");
      Slot& s = slots_[name];
      if (s.m.empty()) {
        s.m.assign(g.size(), 0.0);
        s.v.assign(g.size(), 0.0);
      }
      for (size_t i = 0; i < g.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
  std::int64_t t_ = 0;
};

/// One optimizer step as a free function (fresh state per call chain is the
/// caller's responsibility; training keeps an Adam instance per player).
inline void adam_step(ParameterStore& store, const GradMap& grads, Adam& state) {
  state.step(store, grads);
}

// ---------------------------------------------------------------------------
// Binary store format: magic "STMI", version u32, count u32, then per
// parameter: u32 name length, UTF-8 name, u32 rank, u64 dims, f64 payload.
// All integers and doubles little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("truncated file (u32)");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw FormatError("truncated file (u64)");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace detail

inline void save_store(const ParameterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write("STMI", 4);
  detail::put_u32(os, 1);  // version
  detail::put_u32(os, static_cast<std::uint32_t>(store.params.size()));
  for (const auto& [name, p] : store.params) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.shape.rank()));
    for (int d : p.shape.dims) detail::put_u64(os, static_cast<std::uint64_t>(d));
    for (double v : p.data) detail::put_f64(os, v);
  }
  if (!os) throw FormatError("write failed for '" + path + "'");
}

inline ParameterStore load_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "STMI", 4) != 0)
    throw FormatError("bad magic in '" + path + "' (expected STMI)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1) throw FormatError("unsupported store version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is);
  ParameterStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("truncated parameter name");
    const std::uint32_t rank = detail::get_u32(is);
    if (rank == 0 || rank > 8) throw FormatError("implausible rank " + std::to_string(rank));
    std::vector<int> dims(rank);
    for (auto& d : dims) {
      const std::uint64_t e = detail::get_u64(is);
      if (e == 0 || e > (1u << 30)) throw FormatError("implausible extent");
      d = static_cast<int>(e);
    }
    Shape shape(dims);
    std::vector<double> data(static_cast<size_t>(shape.numel()));
    for (auto& v : data) v = detail::get_f64(is);
    store.add(name, std::move(shape), std::move(data));
  }
  return store;
}

}  // namespace stmi
