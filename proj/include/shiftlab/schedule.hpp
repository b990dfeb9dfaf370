#pragma once

#include "shiftlab/core.hpp"

#include <cmath>
#include <string>

namespace shiftlab {

/// Discrete diffusion chain: betas b_1..b_T and cumulative products
/// alpha_bar_0..alpha_bar_T with alpha_bar_0 = 1.
template <typename Scalar>
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule from_betas(const Vector<Scalar>& betas) {
    if (betas.size() < 1) throw Error(ErrorKind::InvalidRange, "schedule needs T >= 1");
    NoiseSchedule s;
    s.betas_ = betas;
    s.alpha_bars_.resize(betas.size() + 1);
    s.alpha_bars_[0] = Scalar(1);
    for (Eigen::Index i = 0; i < betas.size(); ++i) {
      const Scalar b = betas[i];
      if (!(b > Scalar(0) && b < Scalar(1))) {
        throw Error(ErrorKind::InvalidRange, "beta_" + std::to_string(i + 1) + " outside (0,1)");
      }
      s.alpha_bars_[i + 1] = s.alpha_bars_[i] * (Scalar(1) - b);
    }
    if (!(s.alpha_bars_[betas.size()] > Scalar(0))) {
      throw Error(ErrorKind::DegenerateSchedule, "alpha_bar_T underflowed to zero");
    }
    return s;
  }

  int steps() const { return static_cast<int>(betas_.size()); }

  /// 1-based, t in [1, T].
  Scalar beta(int t) const {
    check_step(t);
    return betas_[t - 1];
  }

  /// t in [0, T].
  Scalar alpha_bar(int t) const {
    check_timestep(t);
    return alpha_bars_[t];
  }

  const Vector<Scalar>& betas() const { return betas_; }
  const Vector<Scalar>& alpha_bars() const { return alpha_bars_; }

  void check_timestep(int t) const {
    if (t < 0 || t > steps()) {
      throw Error(ErrorKind::TimestepOutOfRange,
                  "t=" + std::to_string(t) + " not in [0," + std::to_string(steps()) + "]");
    }
  }

  void check_step(int t) const {
    if (t < 1 || t > steps()) {
      throw Error(ErrorKind::TimestepOutOfRange,
                  "t=" + std::to_string(t) + " not in [1," + std::to_string(steps()) + "]");
    }
  }

 private:
  Vector<Scalar> betas_;
  Vector<Scalar> alpha_bars_;
};

/// Betas linearly spaced from beta_start to beta_end inclusive.
template <typename Scalar = double>
NoiseSchedule<Scalar> build_linear_schedule(int steps, Scalar beta_start, Scalar beta_end) {
  if (steps < 1) throw Error(ErrorKind::InvalidRange, "T must be >= 1");
  if (!(beta_start > Scalar(0) && beta_start <= beta_end && beta_end < Scalar(1))) {
    throw Error(ErrorKind::InvalidRange, "need 0 < beta_start <= beta_end < 1");
  }
  Vector<Scalar> betas(steps);
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    for (int i = 0; i < steps; ++i) {
      betas[i] = beta_start + (beta_end - beta_start) * Scalar(i) / Scalar(steps - 1);
    }
  }
  return NoiseSchedule<Scalar>::from_betas(betas);
}

/// Per-step ancestral noise scales sigma_1..sigma_T.
template <typename Scalar>
struct SigmaSchedule {
  Vector<Scalar> sigmas;
  Scalar eta = Scalar(0);

  int steps() const { return static_cast<int>(sigmas.size()); }
  Scalar sigma(int t) const { return sigmas[t - 1]; }

  static SigmaSchedule zeros(int steps) { return {Vector<Scalar>::Zero(steps), Scalar(0)}; }
};

template <typename Scalar>
void validate(const SigmaSchedule<Scalar>& sigma, const NoiseSchedule<Scalar>& sched) {
  if (sigma.steps() != sched.steps()) {
    throw Error(ErrorKind::InvalidRange, "sigma schedule length differs from T");
  }
  for (int t = 1; t <= sched.steps(); ++t) {
    const Scalar s = sigma.sigma(t);
    if (!(s >= Scalar(0))) throw Error(ErrorKind::InvalidRange, "negative sigma");
    if (s * s > Scalar(1) - sched.alpha_bar(t - 1)) {
      throw Error(ErrorKind::SigmaTooLarge, "sigma_" + std::to_string(t) + "^2 > 1 - alpha_bar_" +
                                                std::to_string(t - 1));
    }
  }
}

/// DDIM-eta family: sigma_t = eta * sqrt((1-ab_{t-1})/(1-ab_t)) * sqrt(1 - ab_t/ab_{t-1}).
/// eta = 0 is deterministic DDIM, eta = 1 the DDPM posterior variance.
template <typename Scalar>
SigmaSchedule<Scalar> ddim_eta_sigmas(const NoiseSchedule<Scalar>& sched, Scalar eta) {
  if (!(eta >= Scalar(0) && eta <= Scalar(1))) {
    throw Error(ErrorKind::InvalidRange, "eta must lie in [0,1]");
  }
  SigmaSchedule<Scalar> out{Vector<Scalar>(sched.steps()), eta};
  for (int t = 1; t <= sched.steps(); ++t) {
    const Scalar prev = sched.alpha_bar(t - 1);
    const Scalar cur = sched.alpha_bar(t);
    out.sigmas[t - 1] =
        eta * std::sqrt((Scalar(1) - prev) / (Scalar(1) - cur)) * std::sqrt(Scalar(1) - cur / prev);
  }
  validate(out, sched);
  return out;
}

/// Attack depth ceil(lambda * T) clamped to [1, T]. The 1e-9 guard keeps
/// products such as 0.3 * 100 from rounding up a whole step.
inline int attack_depth(double lambda, int steps) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw Error(ErrorKind::InvalidRange, "lambda must lie in (0,1]");
  }
  int t = static_cast<int>(std::ceil(lambda * steps - 1e-9));
  if (t < 1) t = 1;
  if (t > steps) t = steps;
  return t;
}

}  // namespace shiftlab
