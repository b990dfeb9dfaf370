#pragma once

#include "shiftlab/codec.hpp"
#include "shiftlab/core.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/sampler.hpp"
#include "shiftlab/schedule.hpp"
#include "shiftlab/score.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace shiftlab {

inline constexpr const char* kStage1Tag = "stage1-eps";
inline constexpr const char* kStage2Tag = "stage2-xi";

struct AttackConfig {
  double lambda = 0.5;
  /// sigma-schedule strength; 0 is the deterministic regeneration baseline.
  double eta = 1.0;
  std::uint64_t seed = 0;

  int t_lambda(int steps) const { return attack_depth(lambda, steps); }
};

template <typename Scalar>
struct AttackOutcome {
  Latent<Scalar> x_a;
  Latent<Scalar> z0_prime;
  Latent<Scalar> eps_used;
  /// ξ_t for step t is RngStream(xi_seed, xi_stream).substream(t).
  std::string xi_stream = kStage2Tag;
  std::uint64_t xi_seed = 0;
  int t_lambda = 0;
  std::vector<Latent<Scalar>> trace;
};

/// Partial forward diffusion to t_lambda = ceil(lambda T), ancestral
/// resampling back to 0 with DDIM-eta sigmas, then decoding.
template <typename Scalar, typename Model>
AttackOutcome<Scalar> shift_attack(const Latent<Scalar>& x_w, const AttackConfig& cfg,
                                   const ToyCodec<Scalar>& codec, const Model& score,
                                   const NoiseSchedule<Scalar>& sched, bool keep_trace = false) {
  const int t = cfg.t_lambda(sched.steps());
  const SigmaSchedule<Scalar> sigma = ddim_eta_sigmas(sched, static_cast<Scalar>(cfg.eta));

  AttackOutcome<Scalar> out;
  out.t_lambda = t;
  out.xi_seed = cfg.seed;
  const Latent<Scalar> z0 = codec.encode(x_w);
  RngStream stage1(cfg.seed, kStage1Tag);
  out.eps_used = stage1.normal_latent<Scalar>(z0.shape);
  const Latent<Scalar> z_t = forward_noise(z0, t, out.eps_used, sched);
  auto reverse = sample_reverse(z_t, t, sigma, score, sched, RngStream(cfg.seed, kStage2Tag), keep_trace);
  out.z0_prime = std::move(reverse.z0);
  out.trace = std::move(reverse.trace);
  out.x_a = codec.decode(out.z0_prime);
  return out;
}

/// Same Stage I, deterministic DDIM reverse. Shares the Stage-I draw with
/// shift_attack for equal seeds.
template <typename Scalar, typename Model>
AttackOutcome<Scalar> ddim_regen_baseline(const Latent<Scalar>& x_w, AttackConfig cfg,
                                          const ToyCodec<Scalar>& codec, const Model& score,
                                          const NoiseSchedule<Scalar>& sched, bool keep_trace = false) {
  cfg.eta = 0.0;
  return shift_attack(x_w, cfg, codec, score, sched, keep_trace);
}

template <typename Scalar>
struct CoupledSample {
  Latent<Scalar> eps_hat_a;  ///< Q(F(sqrt(ab) z0 + sqrt(1-ab) eps))
  Latent<Scalar> eps_tilde;  ///< Q(F(sqrt(1-ab) eps)), source latent removed
  Scalar z0_norm = Scalar(0);
};

/// Runs the reverse map from the attacked start and from the start with the
/// source latent removed, with shared (eps, xi), and recovers both noises
/// through Q = invert_ddim o E o D.
template <typename Scalar, typename Model>
CoupledSample<Scalar> coupled_pair(const Latent<Scalar>& x_w, const AttackConfig& cfg,
                                   const ToyCodec<Scalar>& codec, const Model& score,
                                   const NoiseSchedule<Scalar>& sched, int inversion_depth = 0) {
  const int t = cfg.t_lambda(sched.steps());
  const SigmaSchedule<Scalar> sigma = ddim_eta_sigmas(sched, static_cast<Scalar>(cfg.eta));
  const int depth = inversion_depth > 0 ? inversion_depth : sched.steps();

  const Latent<Scalar> z0 = codec.encode(x_w);
  RngStream stage1(cfg.seed, kStage1Tag);
  const Latent<Scalar> eps = stage1.normal_latent<Scalar>(z0.shape);
  const Latent<Scalar> u = forward_noise(z0, t, eps, sched);
  const Latent<Scalar> v = forward_noise(Latent<Scalar>::zeros(z0.shape), t, eps, sched);
  const RngStream stage2(cfg.seed, kStage2Tag);

  auto recovered = [&](const Latent<Scalar>& start) {
    const Latent<Scalar> z = sample_reverse(start, t, sigma, score, sched, stage2).z0;
    return invert_ddim(codec.encode(codec.decode(z)), depth, score, sched);
  };
  return {recovered(u), recovered(v), z0.norm()};
}

}  // namespace shiftlab
