#pragma once

#include "shiftlab/core.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/schedule.hpp"
#include "shiftlab/score.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace shiftlab {

/// sqrt(ab) z0 + sqrt(1 - ab) eps for an explicit alpha_bar in [0, 1].
template <typename Scalar>
Latent<Scalar> forward_noise(const Latent<Scalar>& z0, const Latent<Scalar>& eps, Scalar alpha_bar) {
  require_same_shape(z0, eps, "forward_noise");
  if (!(alpha_bar >= Scalar(0) && alpha_bar <= Scalar(1))) {
    throw Error(ErrorKind::InvalidRange, "alpha_bar must lie in [0,1]");
  }
  return Latent<Scalar>(z0.shape, std::sqrt(alpha_bar) * z0.values +
                                      std::sqrt(Scalar(1) - alpha_bar) * eps.values);
}

/// Closed-form forward process q(z_t | z_0) with the given noise draw.
template <typename Scalar>
Latent<Scalar> forward_noise(const Latent<Scalar>& z0, int t, const Latent<Scalar>& eps,
                             const NoiseSchedule<Scalar>& sched) {
  return forward_noise(z0, eps, sched.alpha_bar(t));
}

inline constexpr double kMinAlphaBar = 1e-12;

namespace detail {

template <typename Scalar>
void require_invertible(Scalar ab, int t) {
  if (ab < static_cast<Scalar>(kMinAlphaBar)) {
    throw Error(ErrorKind::DegenerateSchedule,
                "alpha_bar_" + std::to_string(t) + " below 1e-12; cannot predict z0");
  }
}

template <typename Scalar>
Vector<Scalar> predict_clean_from(const Vector<Scalar>& z, const Vector<Scalar>& eps, Scalar ab) {
  return (z - std::sqrt(Scalar(1) - ab) * eps) / std::sqrt(ab);
}

}  // namespace detail

/// z0_hat = (z_t - sqrt(1 - ab_t) eps_theta(z_t, t)) / sqrt(ab_t).
template <typename Scalar, typename Model>
Latent<Scalar> predict_clean(const Latent<Scalar>& z_t, int t, const Model& score,
                             const NoiseSchedule<Scalar>& sched) {
  sched.check_step(t);
  const Scalar ab = sched.alpha_bar(t);
  detail::require_invertible(ab, t);
  const Vector<Scalar> eps = predict_noise(score, z_t.values, t, sched);
  return Latent<Scalar>(z_t.shape, detail::predict_clean_from(z_t.values, eps, ab));
}

/// One reverse step t -> t-1:
///   z_{t-1} = sqrt(ab_{t-1}) z0_hat + sqrt(1 - ab_{t-1} - sigma^2) eps_theta + sigma xi.
/// sigma = 0 is the deterministic DDIM step.
template <typename Scalar, typename Model>
Latent<Scalar> ancestral_step(const Latent<Scalar>& z_t, int t, const Latent<Scalar>& xi, Scalar sigma,
                              const Model& score, const NoiseSchedule<Scalar>& sched) {
  require_same_shape(z_t, xi, "ancestral_step");
  sched.check_step(t);
  const Scalar ab = sched.alpha_bar(t);
  const Scalar ab_prev = sched.alpha_bar(t - 1);
  if (!(sigma >= Scalar(0)) || sigma * sigma > Scalar(1) - ab_prev) {
    throw Error(ErrorKind::SigmaTooLarge, "sigma_" + std::to_string(t) + " violates sigma^2 <= 1 - ab_{t-1}");
  }
  detail::require_invertible(ab, t);
  const Vector<Scalar> eps = predict_noise(score, z_t.values, t, sched);
  const Vector<Scalar> z0_hat = detail::predict_clean_from(z_t.values, eps, ab);
  const Scalar direction = std::sqrt(std::max(Scalar(0), Scalar(1) - ab_prev - sigma * sigma));
  return Latent<Scalar>(z_t.shape, std::sqrt(ab_prev) * z0_hat + direction * eps + sigma * xi.values);
}

template <typename Scalar, typename Model>
Latent<Scalar> ddim_step(const Latent<Scalar>& z_t, int t, const Model& score,
                         const NoiseSchedule<Scalar>& sched) {
  return ancestral_step(z_t, t, Latent<Scalar>::zeros(z_t.shape), Scalar(0), score, sched);
}

template <typename Scalar>
struct ReverseResult {
  Latent<Scalar> z0;
  /// z_{t_start}, ..., z_0 when a trace was requested, empty otherwise.
  std::vector<Latent<Scalar>> trace;
};

/// Runs ancestral steps from t_start down to 1. The noise for step t is the
/// first draw of rng.substream(t), so chains of different depth driven by
/// the same stream share xi_t at every common step.
template <typename Scalar, typename Model>
ReverseResult<Scalar> sample_reverse(const Latent<Scalar>& z_start, int t_start,
                                     const SigmaSchedule<Scalar>& sigma, const Model& score,
                                     const NoiseSchedule<Scalar>& sched, const RngStream& rng,
                                     bool keep_trace = false) {
  sched.check_step(t_start);
  if (sigma.steps() != sched.steps()) {
    throw Error(ErrorKind::InvalidRange, "sigma schedule length differs from T");
  }
  ReverseResult<Scalar> out;
  Latent<Scalar> z = z_start;
  if (keep_trace) out.trace.push_back(z);
  for (int t = t_start; t >= 1; --t) {
    const Scalar s = sigma.sigma(t);
    if (s > Scalar(0)) {
      RngStream step_rng = rng.substream(static_cast<std::uint64_t>(t));
      z = ancestral_step(z, t, step_rng.normal_latent<Scalar>(z.shape), s, score, sched);
    } else {
      z = ddim_step(z, t, score, sched);
    }
    if (keep_trace) out.trace.push_back(z);
  }
  out.z0 = std::move(z);
  return out;
}

/// Deterministic DDIM chain from z_T to z_0.
template <typename Scalar, typename Model>
Latent<Scalar> ddim_generate(const Latent<Scalar>& z_T, const Model& score,
                             const NoiseSchedule<Scalar>& sched) {
  Latent<Scalar> z = z_T;
  for (int t = sched.steps(); t >= 1; --t) z = ddim_step(z, t, score, sched);
  return z;
}

struct InversionOptions {
  /// Fixed-point sweeps solving ddim_step(z_{t+1}) = z_t exactly; 0 keeps the
  /// plain first-order recursion.
  int refine_iterations = 0;
};

/// DDIM inversion from a clean latent up to depth n_steps.
///
/// First-order recursion with eps_theta evaluated at the current (lower)
/// timestep: z_{t+1} = sqrt(ab_{t+1}) z0_hat(z_t, t) + sqrt(1 - ab_{t+1}) eps_theta(z_t, t).
template <typename Scalar, typename Model>
Latent<Scalar> invert_ddim(const Latent<Scalar>& z0, int n_steps, const Model& score,
                           const NoiseSchedule<Scalar>& sched, InversionOptions opts = {}) {
  if (n_steps < 1 || n_steps > sched.steps()) {
    throw Error(ErrorKind::TimestepOutOfRange, "inversion depth " + std::to_string(n_steps) +
                                                   " not in [1," + std::to_string(sched.steps()) + "]");
  }
  Vector<Scalar> z = z0.values;
  for (int t = 0; t < n_steps; ++t) {
    const Scalar ab = sched.alpha_bar(t);
    const Scalar ab_next = sched.alpha_bar(t + 1);
    const Vector<Scalar> eps = predict_noise(score, z, t, sched);
    const Vector<Scalar> z0_hat = detail::predict_clean_from(z, eps, ab);
    Vector<Scalar> next = std::sqrt(ab_next) * z0_hat + std::sqrt(Scalar(1) - ab_next) * eps;
    if (opts.refine_iterations > 0) {
      // ddim_step(x, t+1) = a x + b eps_theta(x, t+1)
      const Scalar a = std::sqrt(ab / ab_next);
      const Scalar b = std::sqrt(Scalar(1) - ab) - std::sqrt(ab * (Scalar(1) - ab_next) / ab_next);
      for (int k = 0; k < opts.refine_iterations; ++k) {
        next = (z - b * predict_noise(score, next, t + 1, sched)) / a;
      }
    }
    z = std::move(next);
  }
  return Latent<Scalar>(z0.shape, std::move(z));
}

}  // namespace shiftlab
