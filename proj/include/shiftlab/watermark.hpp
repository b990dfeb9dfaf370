#pragma once

#include "shiftlab/codec.hpp"
#include "shiftlab/core.hpp"
#include "shiftlab/dft.hpp"
#include "shiftlab/parallel.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/sampler.hpp"
#include "shiftlab/schedule.hpp"
#include "shiftlab/score.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace shiftlab {

enum class SchemeId { RingMark, SignMark };

inline const char* scheme_name(SchemeId id) { return id == SchemeId::RingMark ? "ring" : "sign"; }

struct WatermarkKey {
  std::uint64_t key_seed = 0;
  SchemeId scheme = SchemeId::SignMark;
};

struct Message {
  std::vector<int> bits;

  int size() const { return static_cast<int>(bits.size()); }

  static Message random(int length, std::uint64_t seed) {
    RngStream rng(seed, "message");
    Message m;
    m.bits.resize(static_cast<std::size_t>(length));
    for (auto& b : m.bits) b = static_cast<int>(rng.next_u64() >> 63);
    return m;
  }
};

enum class Decision { Clean, Watermarked };

inline const char* to_string(Decision d) { return d == Decision::Watermarked ? "watermarked" : "clean"; }

struct VerifyResult {
  double statistic = 0.0;
  std::optional<double> bit_accuracy;
  Decision decision = Decision::Clean;
  double threshold = 0.0;
};

/// Fourier-ring analog: a key pattern is written into the DFT bins of
/// channel 0 whose radius lies in [r_in, r_out].
struct RingMark {
  WatermarkKey key{0, SchemeId::RingMark};
  double r_in = 3.0;
  double r_out = 5.0;
};

/// Sign-coding analog: message bits become the signs of key-selected
/// coordinates of the initial noise.
struct SignMark {
  WatermarkKey key{0, SchemeId::SignMark};
  Message message;
};

using WatermarkScheme = std::variant<RingMark, SignMark>;

inline SchemeId scheme_id(const WatermarkScheme& s) {
  return std::holds_alternative<RingMark>(s) ? SchemeId::RingMark : SchemeId::SignMark;
}

// ---------------------------------------------------------------------------
// RingMark

inline void require_ring_shape(const Shape& shape) {
  if (shape.height != shape.width || shape.height % 2 != 0 || shape.height < 2) {
    throw Error(ErrorKind::InvalidShape, "ring watermark needs an even square grid, got " + to_string(shape));
  }
}

/// (row, col) DFT bins on the ring, row-major order.
inline std::vector<std::pair<int, int>> ring_bins(const RingMark& scheme, const Shape& shape) {
  require_ring_shape(shape);
  std::vector<std::pair<int, int>> bins;
  for (int u = 0; u < shape.height; ++u) {
    for (int v = 0; v < shape.width; ++v) {
      const double fu = signed_frequency(u, shape.height);
      const double fv = signed_frequency(v, shape.width);
      const double r = std::sqrt(fu * fu + fv * fv);
      if (r >= scheme.r_in && r <= scheme.r_out) bins.emplace_back(u, v);
    }
  }
  return bins;
}

/// Key pattern on the ring (zero elsewhere). Values follow the law of DFT
/// coefficients of white noise: complex normal with E|K|^2 = h w, and
/// K(-k) = conj(K(k)) so the inverse transform is real.
template <typename Scalar = double>
ComplexMatrix<Scalar> ring_pattern(const RingMark& scheme, const Shape& shape) {
  const auto bins = ring_bins(scheme, shape);
  const int h = shape.height;
  const int w = shape.width;
  const Scalar n = Scalar(h * w);
  ComplexMatrix<Scalar> pattern = ComplexMatrix<Scalar>::Zero(h, w);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> set = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(h, w, false);
  RngStream rng(scheme.key.key_seed, "ring-key");
  for (const auto& [u, v] : bins) {
    if (set(u, v)) continue;
    const int pu = (h - u) % h;
    const int pv = (w - v) % w;
    if (pu == u && pv == v) {
      pattern(u, v) = std::complex<Scalar>(std::sqrt(n) * static_cast<Scalar>(rng.normal()), Scalar(0));
    } else {
      const Scalar re = std::sqrt(n / 2) * static_cast<Scalar>(rng.normal());
      const Scalar im = std::sqrt(n / 2) * static_cast<Scalar>(rng.normal());
      pattern(u, v) = std::complex<Scalar>(re, im);
      pattern(pu, pv) = std::conj(pattern(u, v));
      set(pu, pv) = true;
    }
    set(u, v) = true;
  }
  return pattern;
}

/// Draws eps ~ N(0, I), overwrites the ring bins of channel 0 with the key
/// pattern and transforms back. `max_imag_residue` receives the largest
/// imaginary part discarded by the inverse transform.
template <typename Scalar = double>
Latent<Scalar> embed_ring(const RingMark& scheme, const Shape& shape, RngStream& rng,
                          Scalar* max_imag_residue = nullptr) {
  require_ring_shape(shape);
  Latent<Scalar> eps = rng.normal_latent<Scalar>(shape);
  const auto bins = ring_bins(scheme, shape);
  const ComplexMatrix<Scalar> pattern = ring_pattern<Scalar>(scheme, shape);
  ComplexMatrix<Scalar> f = dft2<Scalar>(channel_view(eps, 0));
  for (const auto& [u, v] : bins) f(u, v) = pattern(u, v);
  const ComplexMatrix<Scalar> back = idft2(f);
  if (max_imag_residue) *max_imag_residue = back.imag().cwiseAbs().maxCoeff();
  channel_view(eps, 0) = back.real();
  return eps;
}

/// Mean |F_hat(k) - K(k)| / sqrt(h w) over the ring bins.
template <typename Scalar>
Scalar ring_statistic(const RingMark& scheme, const Latent<Scalar>& eps_hat) {
  const auto bins = ring_bins(scheme, eps_hat.shape);
  const ComplexMatrix<Scalar> pattern = ring_pattern<Scalar>(scheme, eps_hat.shape);
  const ComplexMatrix<Scalar> f = dft2<Scalar>(channel_view(eps_hat, 0));
  Scalar total = Scalar(0);
  for (const auto& [u, v] : bins) total += std::abs(f(u, v) - pattern(u, v));
  const Scalar norm = std::sqrt(Scalar(eps_hat.shape.height * eps_hat.shape.width));
  return bins.empty() ? Scalar(0) : total / (norm * Scalar(bins.size()));
}

// ---------------------------------------------------------------------------
// SignMark

/// Key-selected coordinates carrying message bit j at position j.
inline std::vector<int> sign_positions(const SignMark& scheme, int dim) {
  if (scheme.message.size() > dim) {
    throw Error(ErrorKind::MessageTooLong, "message of " + std::to_string(scheme.message.size()) +
                                               " bits exceeds d=" + std::to_string(dim));
  }
  RngStream rng(scheme.key.key_seed, "sign-permutation");
  std::vector<int> perm = random_permutation(dim, rng);
  perm.resize(static_cast<std::size_t>(scheme.message.size()));
  return perm;
}

template <typename Scalar = double>
Latent<Scalar> embed_sign(const SignMark& scheme, const Shape& shape, RngStream& rng) {
  const auto positions = sign_positions(scheme, shape.size());
  Latent<Scalar> eps = rng.normal_latent<Scalar>(shape);
  for (std::size_t j = 0; j < positions.size(); ++j) {
    Scalar& x = eps.values[positions[j]];
    x = std::abs(x) * Scalar(2 * scheme.message.bits[j] - 1);
  }
  return eps;
}

template <typename Scalar>
Scalar bit_accuracy(const SignMark& scheme, const Latent<Scalar>& eps_hat) {
  const auto positions = sign_positions(scheme, eps_hat.dim());
  if (positions.empty()) return Scalar(1);
  int hits = 0;
  for (std::size_t j = 0; j < positions.size(); ++j) {
    const int bit = eps_hat.values[positions[j]] > Scalar(0) ? 1 : 0;
    hits += bit == scheme.message.bits[j] ? 1 : 0;
  }
  return Scalar(hits) / Scalar(positions.size());
}

// ---------------------------------------------------------------------------
// Scheme-generic operations

template <typename Scalar = double>
Latent<Scalar> embed(const WatermarkScheme& scheme, const Shape& shape, RngStream& rng) {
  if (const auto* ring = std::get_if<RingMark>(&scheme)) return embed_ring<Scalar>(*ring, shape, rng);
  return embed_sign<Scalar>(std::get<SignMark>(scheme), shape, rng);
}

/// Detection statistic on a recovered noise: ring distance or bit accuracy.
template <typename Scalar>
Scalar detection_statistic(const WatermarkScheme& scheme, const Latent<Scalar>& eps_hat) {
  if (const auto* ring = std::get_if<RingMark>(&scheme)) return ring_statistic(*ring, eps_hat);
  return bit_accuracy(std::get<SignMark>(scheme), eps_hat);
}

/// RingMark accepts small distances, SignMark large bit accuracies.
inline bool accepts(SchemeId id, double statistic, double threshold) {
  return id == SchemeId::RingMark ? statistic <= threshold : statistic >= threshold;
}

/// Deterministic DDIM generation from eps_w followed by decoding.
template <typename Scalar, typename Model>
Latent<Scalar> generate_watermarked(const Latent<Scalar>& eps_w, const Model& score,
                                    const NoiseSchedule<Scalar>& sched, const ToyCodec<Scalar>& codec) {
  return codec.decode(ddim_generate(eps_w, score, sched));
}

/// The verifier's recovered noise: DDIM inversion of E(x_query).
template <typename Scalar, typename Model>
Latent<Scalar> recover_noise(const Latent<Scalar>& x_query, const Model& score,
                             const NoiseSchedule<Scalar>& sched, const ToyCodec<Scalar>& codec,
                             int depth = 0, InversionOptions opts = {}) {
  return invert_ddim(codec.encode(x_query), depth > 0 ? depth : sched.steps(), score, sched, opts);
}

template <typename Scalar>
VerifyResult verify_recovered(const Latent<Scalar>& eps_hat, const WatermarkScheme& scheme, double threshold) {
  VerifyResult r;
  r.statistic = static_cast<double>(detection_statistic(scheme, eps_hat));
  if (std::holds_alternative<SignMark>(scheme)) r.bit_accuracy = r.statistic;
  r.threshold = threshold;
  r.decision = accepts(scheme_id(scheme), r.statistic, threshold) ? Decision::Watermarked : Decision::Clean;
  return r;
}

template <typename Scalar, typename Model>
VerifyResult verify(const Latent<Scalar>& x_query, const WatermarkScheme& scheme,
                    const ToyCodec<Scalar>& codec, const Model& score,
                    const NoiseSchedule<Scalar>& sched, double threshold, int depth = 0) {
  return verify_recovered(recover_noise(x_query, score, sched, codec, depth), scheme, threshold);
}

/// Threshold from null statistics at a target false-positive rate.
///
/// SignMark: the smallest tau such that at most floor(fpr n) null values
/// reach it; ties at the boundary push tau up so the empirical FPR never
/// exceeds the target. RingMark mirrors this on the lower tail. fpr >= 1
/// yields a threshold that accepts every input.
inline double threshold_from_null(SchemeId id, std::span<const double> null_stats, double fpr_target) {
  if (null_stats.empty()) throw Error(ErrorKind::InsufficientSamples, "no null statistics");
  if (!(fpr_target > 0.0 && fpr_target <= 1.0)) {
    throw Error(ErrorKind::InvalidRange, "fpr_target must lie in (0,1]");
  }
  const bool upper = id == SchemeId::SignMark;
  if (fpr_target >= 1.0) {
    return upper ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  }
  std::vector<double> v(null_stats.begin(), null_stats.end());
  // order so that v[0] is the most watermark-like value
  if (upper) {
    std::sort(v.begin(), v.end(), std::greater<>());
  } else {
    std::sort(v.begin(), v.end());
  }
  const auto allowed = static_cast<std::size_t>(std::floor(fpr_target * static_cast<double>(v.size()) + 1e-9));
  // Candidate tau = v[allowed - 1] accepts every value at least as extreme;
  // walk back while ties would admit more than `allowed` null samples.
  std::size_t i = allowed;
  while (i > 0 && i < v.size() && v[i] == v[i - 1]) --i;
  if (i == 0) {
    const double inf = std::numeric_limits<double>::infinity();
    return upper ? std::nextafter(v[0], inf) : std::nextafter(v[0], -inf);
  }
  return v[i - 1];
}

/// Detection statistic for n_null unwatermarked generations (plain N(0, I)
/// initial noise), one stream per null index.
template <typename Scalar, typename Model>
std::vector<double> null_statistics(const WatermarkScheme& scheme, const Shape& shape, const Model& score,
                                    const NoiseSchedule<Scalar>& sched, const ToyCodec<Scalar>& codec,
                                    int n_null, std::uint64_t master_seed, int workers = 1,
                                    std::uint64_t first_index = 0) {
  std::vector<double> stats(static_cast<std::size_t>(n_null));
  const char* name = scheme_name(scheme_id(scheme));
  parallel_for(n_null, workers, [&](int i) {
    RngStream rng(derive_trial_seed(master_seed, name, first_index + static_cast<std::uint64_t>(i), "null-calib"),
                  "null-calib");
    const Latent<Scalar> eps = rng.normal_latent<Scalar>(shape);
    const Latent<Scalar> x = generate_watermarked(eps, score, sched, codec);
    stats[static_cast<std::size_t>(i)] =
        static_cast<double>(detection_statistic(scheme, recover_noise(x, score, sched, codec)));
  });
  return stats;
}

template <typename Scalar, typename Model>
double calibrate_threshold(const WatermarkScheme& scheme, const Shape& shape, const Model& score,
                           const NoiseSchedule<Scalar>& sched, const ToyCodec<Scalar>& codec, int n_null,
                           double fpr_target, std::uint64_t master_seed, int workers = 1) {
  if (n_null < 100) {
    throw Error(ErrorKind::InsufficientSamples, "calibration needs n_null >= 100, got " + std::to_string(n_null));
  }
  const auto stats = null_statistics(scheme, shape, score, sched, codec, n_null, master_seed, workers);
  return threshold_from_null(scheme_id(scheme), stats, fpr_target);
}

}  // namespace shiftlab
