#pragma once

#include "shiftlab/attack.hpp"
#include "shiftlab/core.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/sampler.hpp"
#include "shiftlab/schedule.hpp"
#include "shiftlab/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace shiftlab {

/// Relative slack allowed before a measured ratio counts as a violation;
/// covers rounding in the step arithmetic only.
inline constexpr double kRatioTolerance = 1e-9;

/// Per-step stability constants of the reverse map
///   z_{t-1} = A_t z_t + B_t eps_theta(z_t, t) + sigma_t xi_t
/// and the decoupling bound built from them. Cumulative quantities are kept
/// in log space; C_n and Delta overflow double for the mixture regime.
template <typename Scalar>
struct TheoryBound {
  Vector<Scalar> A;      ///< A_1..A_T
  Vector<Scalar> B;      ///< B_1..B_T
  Vector<Scalar> rho;    ///< rho_t = A_t + |B_t| L_t
  Vector<Scalar> log_C;  ///< log C_n, n = 1..T
  Vector<Scalar> alpha_bars;
  Scalar log_L_Q = Scalar(0);
  Scalar e_z0_sq = Scalar(0);

  int steps() const { return static_cast<int>(A.size()); }
  Scalar C(int n) const { return std::exp(log_C[n - 1]); }
  Scalar L_Q() const { return std::exp(log_L_Q); }

  /// Delta_t = L_Q^2 C_t^2 ab_t E||z0||^2.
  Scalar delta(int t) const { return delta_with(t, e_z0_sq); }

  Scalar delta_with(int t, Scalar e_sq) const {
    if (!(e_sq > Scalar(0))) return Scalar(0);
    return std::exp(Scalar(2) * log_L_Q + Scalar(2) * log_C[t - 1] + std::log(alpha_bars[t]) + std::log(e_sq));
  }

  /// L_Q C_t sqrt(ab_t) ||z0||.
  Scalar pathwise_bound(int t, Scalar z0_norm) const {
    if (!(z0_norm > Scalar(0))) return Scalar(0);
    return std::exp(log_L_Q + log_C[t - 1] + Scalar(0.5) * std::log(alpha_bars[t]) + std::log(z0_norm));
  }
};

template <typename Scalar>
Scalar reverse_coefficient_a(const NoiseSchedule<Scalar>& sched, int t) {
  return std::sqrt(sched.alpha_bar(t - 1) / sched.alpha_bar(t));
}

template <typename Scalar>
Scalar reverse_coefficient_b(const NoiseSchedule<Scalar>& sched, int t, Scalar sigma) {
  const Scalar prev = sched.alpha_bar(t - 1);
  const Scalar cur = sched.alpha_bar(t);
  return std::sqrt(std::max(Scalar(0), Scalar(1) - prev - sigma * sigma)) -
         std::sqrt(prev * (Scalar(1) - cur) / cur);
}

/// log of the Lipschitz bound of Q = invert_ddim o E o D at the given depth:
/// the codec round trip contributes 1 and each first-order inversion step
/// z -> A'_t z + B'_t eps_theta(z, t) contributes A'_t + |B'_t| L_t.
template <typename Scalar>
Scalar log_pipeline_lipschitz(const NoiseSchedule<Scalar>& sched, const LipschitzProfile<Scalar>& lip,
                              int depth = 0) {
  if (depth <= 0) depth = sched.steps();
  Scalar total = Scalar(0);
  for (int t = 0; t < depth; ++t) {
    const Scalar ab = sched.alpha_bar(t);
    const Scalar next = sched.alpha_bar(t + 1);
    const Scalar a = std::sqrt(next / ab);
    const Scalar b = std::sqrt(Scalar(1) - next) - std::sqrt(next * (Scalar(1) - ab) / ab);
    total += std::log(a + std::abs(b) * lip.at(t));
  }
  return total;
}

template <typename Scalar>
Scalar pipeline_lipschitz(const NoiseSchedule<Scalar>& sched, const LipschitzProfile<Scalar>& lip,
                          int depth = 0) {
  return std::exp(log_pipeline_lipschitz(sched, lip, depth));
}

template <typename Scalar>
TheoryBound<Scalar> compute_bounds(const NoiseSchedule<Scalar>& sched, const SigmaSchedule<Scalar>& sigma,
                                   const LipschitzProfile<Scalar>& lip, Scalar L_Q, Scalar e_z0_sq) {
  validate(sigma, sched);
  if (lip.steps() != sched.steps()) throw Error(ErrorKind::InvalidRange, "Lipschitz profile length differs from T");
  if (!(L_Q > Scalar(0)) || !std::isfinite(static_cast<double>(L_Q))) {
    throw Error(ErrorKind::InvalidRange, "L_Q must be finite and positive");
  }
  if (!(e_z0_sq >= Scalar(0))) throw Error(ErrorKind::InvalidRange, "E||z0||^2 must be >= 0");
  return compute_bounds_log(sched, sigma, lip, std::log(L_Q), e_z0_sq);
}

/// As compute_bounds, with L_Q given as its logarithm.
template <typename Scalar>
TheoryBound<Scalar> compute_bounds_log(const NoiseSchedule<Scalar>& sched, const SigmaSchedule<Scalar>& sigma,
                                       const LipschitzProfile<Scalar>& lip, Scalar log_L_Q, Scalar e_z0_sq) {
  validate(sigma, sched);
  const int T = sched.steps();
  TheoryBound<Scalar> b;
  b.A.resize(T);
  b.B.resize(T);
  b.rho.resize(T);
  b.log_C.resize(T);
  b.alpha_bars = sched.alpha_bars();
  b.log_L_Q = log_L_Q;
  b.e_z0_sq = e_z0_sq;
  Scalar acc = Scalar(0);
  for (int t = 1; t <= T; ++t) {
    b.A[t - 1] = reverse_coefficient_a(sched, t);
    b.B[t - 1] = reverse_coefficient_b(sched, t, sigma.sigma(t));
    b.rho[t - 1] = b.A[t - 1] + std::abs(b.B[t - 1]) * lip.at(t);
    acc += std::log(b.rho[t - 1]);
    b.log_C[t - 1] = acc;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Pathwise stability checks

struct StabilityReport {
  int step = 0;  ///< t for one-step checks, n for multi-step
  int pairs = 0;
  double bound = 0.0;
  double max_ratio = 0.0;
  int violations = 0;
};

/// ||step(u) - step(v)|| <= rho_t ||u - v|| for probe pairs sharing xi.
template <typename Scalar, typename Model>
StabilityReport check_one_step(const Model& score, const NoiseSchedule<Scalar>& sched,
                               const SigmaSchedule<Scalar>& sigma, const TheoryBound<Scalar>& bound,
                               const Shape& shape, int t, int trials, RngStream& rng) {
  StabilityReport r;
  r.step = t;
  r.bound = static_cast<double>(bound.rho[t - 1]);
  for (int i = 0; i < trials; ++i) {
    auto [u, v] = probe_pair(score, t, sched, rng, shape.size());
    const Latent<Scalar> xi = rng.normal_latent<Scalar>(shape);
    const Scalar gap = (u - v).norm();
    const auto a = ancestral_step(Latent<Scalar>(shape, std::move(u)), t, xi, sigma.sigma(t), score, sched);
    const auto b = ancestral_step(Latent<Scalar>(shape, std::move(v)), t, xi, sigma.sigma(t), score, sched);
    const double out_gap = static_cast<double>((a.values - b.values).norm());
    ++r.pairs;
    if (!(gap > Scalar(0))) {
      if (out_gap > 0.0) ++r.violations;
      continue;
    }
    const double ratio = out_gap / static_cast<double>(gap);
    r.max_ratio = std::max(r.max_ratio, ratio);
    if (ratio > r.bound * (1.0 + kRatioTolerance)) ++r.violations;
  }
  return r;
}

/// ||F_n(u) - F_n(v)|| <= C_n ||u - v|| with shared xi_{1:n}.
template <typename Scalar, typename Model>
StabilityReport check_multistep(const Model& score, const NoiseSchedule<Scalar>& sched,
                                const SigmaSchedule<Scalar>& sigma, const TheoryBound<Scalar>& bound,
                                const Shape& shape, int n, int trials, RngStream& rng) {
  StabilityReport r;
  r.step = n;
  r.bound = static_cast<double>(bound.C(n));
  const double log_bound = static_cast<double>(bound.log_C[n - 1]);
  for (int i = 0; i < trials; ++i) {
    auto [u, v] = probe_pair(score, n, sched, rng, shape.size());
    const RngStream xi = rng.substream(static_cast<std::uint64_t>(i));
    const Scalar gap = (u - v).norm();
    const auto a = sample_reverse(Latent<Scalar>(shape, std::move(u)), n, sigma, score, sched, xi).z0;
    const auto b = sample_reverse(Latent<Scalar>(shape, std::move(v)), n, sigma, score, sched, xi).z0;
    const double out_gap = static_cast<double>((a.values - b.values).norm());
    ++r.pairs;
    if (!(gap > Scalar(0))) {
      if (out_gap > 0.0) ++r.violations;
      continue;
    }
    const double ratio = out_gap / static_cast<double>(gap);
    r.max_ratio = std::max(r.max_ratio, ratio);
    if (ratio > 0.0 && std::log(ratio) > log_bound + std::log1p(kRatioTolerance)) ++r.violations;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Decoupling

struct DecouplingReport {
  int t_lambda = 0;
  int trials = 0;
  std::vector<int> violating_trials;
  double mean_sq_gap = 0.0;      ///< empirical E||eps_hat_a - eps_tilde||^2
  double e_z0_sq = 0.0;          ///< empirical E||z0||^2 over the same trials
  double delta = 0.0;            ///< Delta_{t_lambda} with that E||z0||^2
  double max_pathwise_ratio = 0.0;  ///< max over trials of lhs / rhs
  bool mean_bound_holds = false;

  double w2_bound() const { return 2.0 * std::sqrt(delta); }
};

/// Pathwise ||eps_hat_a - eps_tilde|| <= L_Q C sqrt(ab) ||z0|| per trial and
/// the mean-square bound E||eps_hat_a - eps_tilde||^2 <= Delta.
template <typename Scalar>
DecouplingReport check_decoupling(std::span<const CoupledSample<Scalar>> samples, const TheoryBound<Scalar>& bound,
                                  int t_lambda) {
  DecouplingReport r;
  r.t_lambda = t_lambda;
  r.trials = static_cast<int>(samples.size());
  if (samples.empty()) throw Error(ErrorKind::EmptyInput, "check_decoupling needs samples");
  double sum_gap = 0.0;
  double sum_z0 = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const double gap = static_cast<double>((s.eps_hat_a.values - s.eps_tilde.values).norm());
    const double rhs = static_cast<double>(bound.pathwise_bound(t_lambda, s.z0_norm));
    sum_gap += gap * gap;
    sum_z0 += static_cast<double>(s.z0_norm * s.z0_norm);
    if (gap > rhs * (1.0 + kRatioTolerance)) r.violating_trials.push_back(static_cast<int>(i));
    if (rhs > 0.0) r.max_pathwise_ratio = std::max(r.max_pathwise_ratio, gap / rhs);
  }
  const double n = static_cast<double>(samples.size());
  r.mean_sq_gap = sum_gap / n;
  r.e_z0_sq = sum_z0 / n;
  r.delta = static_cast<double>(bound.delta_with(t_lambda, static_cast<Scalar>(r.e_z0_sq)));
  r.mean_bound_holds = r.mean_sq_gap <= r.delta * (1.0 + kRatioTolerance);
  return r;
}

// ---------------------------------------------------------------------------
// Independence proxy

struct IndependenceReport {
  int samples = 0;
  int coordinates = 0;
  double band = 0.0;  ///< 3 / sqrt(N)
  double max_abs_corr = 0.0;
  double exceed_fraction = 0.0;
};

/// Per-coordinate sample correlation between eps_hat and eps_w across
/// trials. `coordinates` restricts the scan (empty = all).
template <typename Scalar>
IndependenceReport check_independence(std::span<const Latent<Scalar>> eps_hat, std::span<const Latent<Scalar>> eps_w,
                                      std::span<const int> coordinates = {}) {
  if (eps_hat.size() != eps_w.size() || eps_hat.empty()) {
    throw Error(ErrorKind::EmptyInput, "check_independence needs equally many non-empty samples");
  }
  const int n = static_cast<int>(eps_hat.size());
  const int d = eps_hat.front().dim();
  std::vector<int> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    coords.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) coords[static_cast<std::size_t>(i)] = i;
  }
  Matrix<double> x(n, d), y(n, d);
  for (int i = 0; i < n; ++i) {
    require_same_shape(eps_hat[static_cast<std::size_t>(i)], eps_w[static_cast<std::size_t>(i)], "check_independence");
    x.row(i) = eps_hat[static_cast<std::size_t>(i)].values.template cast<double>().transpose();
    y.row(i) = eps_w[static_cast<std::size_t>(i)].values.template cast<double>().transpose();
  }
  IndependenceReport r;
  r.samples = n;
  r.coordinates = static_cast<int>(coords.size());
  r.band = 3.0 / std::sqrt(static_cast<double>(n));
  int exceed = 0;
  for (int c : coords) {
    const Vector<double> xc = x.col(c).array() - x.col(c).mean();
    const Vector<double> yc = y.col(c).array() - y.col(c).mean();
    const double denom = xc.norm() * yc.norm();
    const double corr = denom > 0.0 ? xc.dot(yc) / denom : 0.0;
    r.max_abs_corr = std::max(r.max_abs_corr, std::abs(corr));
    if (std::abs(corr) > r.band) ++exceed;
  }
  r.exceed_fraction = static_cast<double>(exceed) / static_cast<double>(coords.size());
  return r;
}

/// Negative control: pairs eps_hat[i] with eps_w[(i + 1) mod N].
template <typename Scalar>
std::vector<Latent<Scalar>> shifted_pairing(std::span<const Latent<Scalar>> eps_w) {
  std::vector<Latent<Scalar>> out;
  out.reserve(eps_w.size());
  for (std::size_t i = 0; i < eps_w.size(); ++i) out.push_back(eps_w[(i + 1) % eps_w.size()]);
  return out;
}

// ---------------------------------------------------------------------------
// Terminal random baseline

struct TerminalReport {
  int samples = 0;
  double mse_per_coord = 0.0;  ///< E||eps_hat - eps_w||^2 / d, target 2
  double l1 = 0.0;             ///< per-element mean |.|, target 2/sqrt(pi)
  double l2 = 0.0;             ///< per-element RMS, target sqrt(2)
  double corollary_slack = 0.0;  ///< (Delta_T + 2 sqrt(2 d Delta_T)) / d
  double monte_carlo_se = 0.0;
  double tolerance = 0.0;
  double eps_tilde_variance = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
};

template <typename Scalar>
TerminalReport check_terminal_baseline(std::span<const Latent<Scalar>> eps_hat, std::span<const Latent<Scalar>> eps_w,
                                       double delta_T, std::span<const Latent<Scalar>> eps_tilde = {}) {
  if (eps_hat.size() != eps_w.size() || eps_hat.empty()) {
    throw Error(ErrorKind::EmptyInput, "check_terminal_baseline needs equally many non-empty samples");
  }
  const double n = static_cast<double>(eps_hat.size());
  const double d = static_cast<double>(eps_hat.front().dim());
  TerminalReport r;
  r.samples = static_cast<int>(eps_hat.size());
  double sum = 0.0, sum_sq = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    require_same_shape(eps_hat[i], eps_w[i], "check_terminal_baseline");
    const Vector<double> diff = (eps_hat[i].values - eps_w[i].values).template cast<double>();
    const double per = diff.squaredNorm() / d;
    sum += per;
    sum_sq += per * per;
    l1 += diff.cwiseAbs().sum() / d;
  }
  r.mse_per_coord = sum / n;
  r.l1 = l1 / n;
  r.l2 = std::sqrt(r.mse_per_coord);
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * r.mse_per_coord * r.mse_per_coord) / (n - 1)) : 0.0;
  r.monte_carlo_se = std::sqrt(var / n);
  r.corollary_slack = (delta_T + 2.0 * std::sqrt(2.0 * d * delta_T)) / d;
  r.tolerance = r.corollary_slack + 3.0 * r.monte_carlo_se;
  r.pass = std::abs(r.mse_per_coord - 2.0) <= r.tolerance;
  if (!eps_tilde.empty()) {
    double s = 0.0, s2 = 0.0, count = 0.0;
    for (const auto& e : eps_tilde) {
      s += static_cast<double>(e.values.sum());
      s2 += static_cast<double>(e.values.squaredNorm());
      count += static_cast<double>(e.dim());
    }
    const double mean = s / count;
    r.eps_tilde_variance = s2 / count - mean * mean;
  }
  return r;
}

/// The two monotone factors of Delta over an ordered depth grid:
/// alpha_bar non-increasing and C non-decreasing.
struct CompetingEffects {
  bool alpha_bar_nonincreasing = true;
  bool c_nondecreasing = true;
};

template <typename Scalar>
CompetingEffects competing_effects(const TheoryBound<Scalar>& bound, std::span<const int> depths) {
  CompetingEffects e;
  for (std::size_t i = 1; i < depths.size(); ++i) {
    if (bound.alpha_bars[depths[i]] > bound.alpha_bars[depths[i - 1]]) e.alpha_bar_nonincreasing = false;
    if (bound.log_C[depths[i] - 1] < bound.log_C[depths[i - 1] - 1]) e.c_nondecreasing = false;
  }
  return e;
}

}  // namespace shiftlab
