#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stmi {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor extents do not line up.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

/// Value outside the mathematical domain of an operation (log of <= 0, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what) {}
};

/// Malformed or truncated file content.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

/// Non-finite value where one is not allowed (NaN abort in training).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

struct Shape {
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) { validate(); }
  explicit Shape(std::vector<int> d) : dims(std::move(d)) { validate(); }

  int rank() const { return static_cast<int>(dims.size()); }
  int operator[](int i) const { return dims[static_cast<size_t>(i)]; }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  bool is_scalar() const { return numel() == 1; }

  std::string str() const {
    std::string s = "[";
    for (size_t i = 0; i < dims.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims[i]);
    }
    return s + "]";
  }

  void validate() const {
    if (dims.empty()) throw ShapeError("empty shape");
    for (int d : dims)
      if (d <= 0) throw ShapeError("non-positive extent in " + str());
  }
};

inline Shape scalar_shape() { return Shape{1}; }

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the library flows through explicit
// seeds; normals use Box-Muller so the stream does not depend on the
// standard library's distribution implementations.
// ---------------------------------------------------------------------------

/// SplitMix64, used to derive independent seeds from (seed, stream ids).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t x = splitmix64(seed ^ 0xA076'1D64'78BD'642FULL);
  x = splitmix64(x ^ splitmix64(a));
  x = splitmix64(x ^ splitmix64(b));
  x = splitmix64(x ^ splitmix64(c));
  return x;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x853C'49E6'748F'EA9BULL)) {
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  std::uint64_t next_u64() {
    // xorshift64*
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// ---------------------------------------------------------------------------
// Misc utilities
// ---------------------------------------------------------------------------

/// Shortest decimal form that round-trips an f64; used for all CSV output so
/// identical runs produce byte-identical files.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Worker-thread cap: min(STMI_THREADS, hardware). Defaults to 1 so runs are
/// reproducible without configuration.
inline int worker_thread_count() {
  const char* env = std::getenv("STMI_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  if (n <= 1) return 1;
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  return std::min(n, std::max(1, hw));
}

/// Parallel map over [0, n) with index-addressed results. The fold order is
/// up to the caller, so results are bit-stable for any thread count.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int threads = std::min(worker_thread_count(), std::max(1, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([t, n, threads, &fn] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace stmi
