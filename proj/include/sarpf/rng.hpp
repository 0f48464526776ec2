#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "sarpf/tensor.hpp"

namespace sarpf {

/// Counter-based splittable generator.
///
/// The i-th 64-bit output for key k is splitmix64_finalize(k + i * 0x9E3779B97F4A7C15),
/// i = 1, 2, ... which is SplitMix64 written in counter form. split(stream)
/// derives an independent key by finalizing (key ^ finalize(stream)), so a
/// child stream never depends on how many values the parent has drawn.
/// Uniforms use the top 53 bits; normals use Box-Muller on pairs of uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) {}

  std::uint64_t seed() const noexcept { return key_; }

  static constexpr std::uint64_t finalize(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return finalize(key_ + counter_ * kGamma);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) noexcept { return mean + sigma * normal(); }

  Rng split(std::uint64_t stream) const noexcept { return Rng(finalize(key_ ^ finalize(stream + kGamma))); }

  Rng split(std::string_view name) const noexcept {
    // FNV-1a over the name selects the stream.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : name) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return split(h);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor4 random_normal(Rng& rng, Shape4 shape, double sigma = 1.0) {
  Tensor4 t(shape);
  for (double& v : t.data()) v = sigma * rng.normal();
  return t;
}

inline Tensor4 random_uniform(Rng& rng, Shape4 shape, double lo, double hi) {
  Tensor4 t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double sigma = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = sigma * rng.normal();
  return m;
}

}  // namespace sarpf
