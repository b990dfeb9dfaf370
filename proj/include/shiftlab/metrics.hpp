#pragma once

#include "shiftlab/codec.hpp"
#include "shiftlab/core.hpp"
#include "shiftlab/score.hpp"
#include "shiftlab/watermark.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shiftlab {

struct NoiseDistance {
  double l1 = 0.0;  ///< (1/d) sum |a - b|
  double l2 = 0.0;  ///< sqrt((1/d) sum (a - b)^2)
};

template <typename Scalar>
NoiseDistance noise_distance(const Latent<Scalar>& eps_hat, const Latent<Scalar>& eps_w) {
  require_same_shape(eps_hat, eps_w, "noise_distance");
  const Vector<double> diff = (eps_hat.values - eps_w.values).template cast<double>();
  const double d = static_cast<double>(diff.size());
  return {diff.cwiseAbs().sum() / d, std::sqrt(diff.squaredNorm() / d)};
}

struct TrialRecord {
  int trial_id = 0;
  double lambda = 0.0;
  double eta = 0.0;
  SchemeId scheme = SchemeId::SignMark;
  VerifyResult verify_clean;
  VerifyResult verify_attacked;
  double l1_dist = 0.0;
  double l2_dist = 0.0;
  double latent_mse = 0.0;
  std::optional<int> mode_clean;
  std::optional<int> mode_attacked;

  std::optional<bool> mode_retained() const {
    if (!mode_clean || !mode_attacked) return std::nullopt;
    return *mode_clean == *mode_attacked;
  }
};

/// Fraction of attacked verifications declared Clean among trials whose
/// unattacked image was detected.
inline double attack_success_rate(std::span<const TrialRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "attack_success_rate over no records");
  int eligible = 0;
  int evaded = 0;
  for (const auto& r : records) {
    if (r.verify_clean.decision != Decision::Watermarked) continue;
    ++eligible;
    if (r.verify_attacked.decision == Decision::Clean) ++evaded;
  }
  return eligible == 0 ? 0.0 : static_cast<double>(evaded) / static_cast<double>(eligible);
}

/// ASR of the unattacked pipeline: detections of x_w that already fail.
inline double clean_evasion_rate(std::span<const TrialRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "clean_evasion_rate over no records");
  int missed = 0;
  for (const auto& r : records) missed += r.verify_clean.decision == Decision::Clean ? 1 : 0;
  return static_cast<double>(missed) / static_cast<double>(records.size());
}

struct SemanticProxy {
  double latent_mse = 0.0;
  std::optional<int> mode_clean;
  std::optional<int> mode_attacked;

  std::optional<bool> mode_retained() const {
    if (!mode_clean || !mode_attacked) return std::nullopt;
    return *mode_clean == *mode_attacked;
  }
};

/// Latent MSE between E(x_a) and E(x_w) plus, for mixture data, whether the
/// most probable component survives the attack.
template <typename Scalar>
SemanticProxy semantic_proxy(const Latent<Scalar>& x_a, const Latent<Scalar>& x_w, const ToyCodec<Scalar>& codec,
                             const MixtureScore<Scalar>* mixture = nullptr) {
  const Latent<Scalar> za = codec.encode(x_a);
  const Latent<Scalar> zw = codec.encode(x_w);
  SemanticProxy p;
  p.latent_mse = static_cast<double>(mean_squared_difference(za, zw));
  if (mixture) {
    p.mode_clean = mixture->mode(zw.values);
    p.mode_attacked = mixture->mode(za.values);
  }
  return p;
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Sample mean and its standard error (0 for a single value).
inline MeanStderr mean_and_stderr(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorKind::EmptyInput, "mean of no values");
  const double n = static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1) / n)};
}

/// Count of adjacent decreases in a sequence that should be non-decreasing.
inline int adjacent_inversions(std::span<const double> xs, double slack = 0.0) {
  int n = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) n += xs[i] < xs[i - 1] - slack ? 1 : 0;
  return n;
}

}  // namespace shiftlab
