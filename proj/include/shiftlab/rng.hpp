#pragma once

#include "shiftlab/core.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace shiftlab {

/// SplitMix64 finalizer; used only to derive stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over raw bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return mix64(seed ^ mix64(value));
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::string_view tag) {
  return mix64(seed ^ fnv1a64(tag));
}

/// Stable per-trial seed. The purpose tags used by the harness are
/// "gen-noise", "stage1-eps", "stage2-xi" and "null-calib".
inline std::uint64_t derive_trial_seed(std::uint64_t master_seed, std::string_view scheme_id,
                                       std::uint64_t trial_id, std::string_view purpose) {
  std::uint64_t h = hash_combine(mix64(master_seed), scheme_id);
  h = hash_combine(h, trial_id);
  return hash_combine(h, purpose);
}

/// Reproducible Gaussian stream keyed by (master_seed, stream_tag).
///
/// Draws come from std::mt19937_64 seeded with the derived key; normals use
/// the Box-Muller cosine branch on two 53-bit uniforms, so sequences are
/// identical across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::string_view stream_tag)
      : master_seed_(master_seed),
        tag_(stream_tag),
        engine_(hash_combine(mix64(master_seed), stream_tag)) {}

  std::uint64_t master_seed() const { return master_seed_; }
  const std::string& stream_tag() const { return tag_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return engine_();
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename Scalar = double>
  Vector<Scalar> normal_vector(int n) {
    Vector<Scalar> v(n);
    for (int i = 0; i < n; ++i) v[i] = static_cast<Scalar>(normal());
    return v;
  }

  template <typename Scalar = double>
  Latent<Scalar> normal_latent(const Shape& shape) {
    return Latent<Scalar>(shape, normal_vector<Scalar>(shape.size()));
  }

  /// Independent child stream; children with equal index are identical.
  RngStream substream(std::uint64_t index) const {
    return RngStream(hash_combine(hash_combine(mix64(master_seed_), tag_), index),
                     tag_ + "/" + std::to_string(index));
  }

 private:
  std::uint64_t master_seed_;
  std::string tag_;
  std::mt19937_64 engine_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates permutation of 0..n-1 driven by the stream.
inline std::vector<int> random_permutation(int n, RngStream& rng) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

}  // namespace shiftlab
