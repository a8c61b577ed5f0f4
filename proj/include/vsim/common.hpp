#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vsim {

// Error classes map to distinct CLI exit codes (see tools/vsim.cpp).
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ModelMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Dense row-major 2-D table. Count tables and multinomial rows live here so
// rows are contiguous for the kernels.
template <typename T>
class Grid {
 public:
  Grid() : rows_(0), cols_(0) {}
  Grid(size_t rows, size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& flat() { return data_; }
  const std::vector<T>& flat() const { return data_; }

  void fill(T v) { data_.assign(data_.size(), v); }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  size_t rows_, cols_;
  std::vector<T> data_;
};

// Deterministic random source. The engine is std::mt19937_64 (its output
// sequence is pinned by the standard); every distribution on top of it is
// implemented here rather than via <random> distribution objects, whose
// algorithms are implementation-defined. Identical seed => identical stream
// on every platform this builds on.
//
// Substreams: all randomness in a run flows from one root seed. A substream
// is addressed by a path of tags, folded into the root with splitmix64:
//   seed(root, [a, b]) = splitmix64(splitmix64(root ^ golden*a) ^ golden*b)
// Per-image streams use {kStreamImage, image_index}, per-replicate streams
// {kStreamImage, image_index, kStreamReplicate, rep} and so on, which is what
// makes worker-count-independent scheduling reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  static uint64_t derive(uint64_t root, std::initializer_list<uint64_t> path) {
    uint64_t s = root;
    for (uint64_t p : path) {
      s = splitmix64(s ^ (0x9e3779b97f4a7c15ULL * (p + 1)));
    }
    return s;
  }
  static Rng substream(uint64_t root, std::initializer_list<uint64_t> path) {
    return Rng(derive(root, path));
  }

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection-free multiply-shift is fine here;
  // the bias at 64-bit range is far below anything observable.
  uint64_t uniform_below(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Marsaglia-Tsang; the shape<1 case is boosted via Gamma(shape+1) * U^(1/shape).
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  void dirichlet(std::span<const double> alpha, std::span<double> out) {
    double total = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) {
      out[i] = gamma(alpha[i]);
      total += out[i];
    }
    if (total <= 0.0) {
      // All-gamma underflow; fall back to the mean of the Dirichlet.
      double asum = 0.0;
      for (double a : alpha) asum += a;
      for (size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] / asum;
      return;
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] /= total;
  }

  // Draw an index proportional to nonnegative weights (need not be normalized).
  size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    size_t last_positive = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] > 0.0) last_positive = i;
      acc += weights[i];
      if (u < acc) return i;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 eng_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Substream purpose tags (documented in README).
enum StreamTag : uint64_t {
  kStreamPamTrain = 1,
  kStreamNnldaTrain = 2,
  kStreamImage = 3,
  kStreamReplicate = 4,
  kStreamSynth = 5,
  kStreamInit = 6,
  kStreamChain = 7,
};

inline size_t argmax_lowest(std::span<const double> v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double total_variation(std::span<const double> p,
                              std::span<const double> q) {
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace vsim
