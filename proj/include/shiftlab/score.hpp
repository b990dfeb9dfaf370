#pragma once

#include "shiftlab/core.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <variant>

namespace shiftlab {

/// eps_theta == 0. Useful as a stub and as the L_t == 0 limit.
template <typename Scalar>
struct ZeroScore {
  Vector<Scalar> predict(const Vector<Scalar>& z, int t, const NoiseSchedule<Scalar>& sched) const {
    sched.check_timestep(t);
    return Vector<Scalar>::Zero(z.size());
  }
};

/// Exact noise predictor for data ~ N(mean, scale^2 I).
///
/// The marginal at t is N(sqrt(ab_t) mean, v_t I) with v_t = ab_t s^2 + 1 - ab_t,
/// so eps_theta(z, t) = sqrt(1 - ab_t) (z - sqrt(ab_t) mean) / v_t is affine in z.
template <typename Scalar>
class GaussianScore {
 public:
  GaussianScore(Vector<Scalar> mean, Scalar scale) : mean_(std::move(mean)), scale_(scale) {
    if (!(scale_ > Scalar(0))) throw Error(ErrorKind::InvalidRange, "gaussian scale must be > 0");
  }

  static GaussianScore standard(int dim) { return GaussianScore(Vector<Scalar>::Zero(dim), Scalar(1)); }

  const Vector<Scalar>& mean() const { return mean_; }
  Scalar scale() const { return scale_; }
  int dim() const { return static_cast<int>(mean_.size()); }

  Scalar variance_factor(int t, const NoiseSchedule<Scalar>& sched) const {
    const Scalar ab = sched.alpha_bar(t);
    return ab * scale_ * scale_ + Scalar(1) - ab;
  }

  /// d eps / d z; also the exact Lipschitz constant L_t.
  Scalar slope(int t, const NoiseSchedule<Scalar>& sched) const {
    return std::sqrt(Scalar(1) - sched.alpha_bar(t)) / variance_factor(t, sched);
  }

  Vector<Scalar> predict(const Vector<Scalar>& z, int t, const NoiseSchedule<Scalar>& sched) const {
    check_dim(z);
    const Scalar ab = sched.alpha_bar(t);
    return slope(t, sched) * (z - std::sqrt(ab) * mean_);
  }

 private:
  void check_dim(const Vector<Scalar>& z) const {
    if (z.size() != mean_.size()) {
      throw Error(ErrorKind::ShapeMismatch, "gaussian score dim " + std::to_string(mean_.size()) +
                                                " given " + std::to_string(z.size()));
    }
  }

  Vector<Scalar> mean_;
  Scalar scale_;
};

/// Isotropic Gaussian mixture sum_k w_k N(mu_k, s^2 I) with shared scale.
/// eps_theta is -sqrt(1 - ab_t) grad log p_t evaluated exactly, with
/// log-sum-exp normalized responsibilities.
template <typename Scalar>
class MixtureScore {
 public:
  /// means: d x K, one component per column.
  MixtureScore(Vector<Scalar> weights, Matrix<Scalar> means, Scalar scale)
      : weights_(std::move(weights)), means_(std::move(means)), scale_(scale) {
    if (weights_.size() < 1 || weights_.size() != means_.cols()) {
      throw Error(ErrorKind::InvalidRange, "mixture needs one weight per mean");
    }
    if (!(scale_ > Scalar(0))) throw Error(ErrorKind::InvalidRange, "mixture scale must be > 0");
    if ((weights_.array() <= Scalar(0)).any()) {
      throw Error(ErrorKind::InvalidRange, "mixture weights must be positive");
    }
    const Scalar total = weights_.sum();
    if (std::abs(total - Scalar(1)) > Scalar(1e-9)) {
      throw Error(ErrorKind::InvalidRange, "mixture weights must sum to 1");
    }
    log_weights_ = weights_.array().log();
    mean_sq_norms_ = means_.colwise().squaredNorm().transpose();
  }

  /// K means drawn i.i.d. N(0, I_d) (so ||mu_k|| ~ sqrt(d)), uniform weights.
  static MixtureScore seeded(int dim, int components, Scalar scale, std::uint64_t seed) {
    if (components < 1) throw Error(ErrorKind::InvalidRange, "mixture needs K >= 1");
    RngStream rng(seed, "mixture-means");
    Matrix<Scalar> means(dim, components);
    for (int k = 0; k < components; ++k) means.col(k) = rng.normal_vector<Scalar>(dim);
    return MixtureScore(Vector<Scalar>::Constant(components, Scalar(1) / Scalar(components)),
                        std::move(means), scale);
  }

  int components() const { return static_cast<int>(weights_.size()); }
  int dim() const { return static_cast<int>(means_.rows()); }
  const Vector<Scalar>& weights() const { return weights_; }
  const Matrix<Scalar>& means() const { return means_; }
  Scalar scale() const { return scale_; }

  Scalar variance_factor(int t, const NoiseSchedule<Scalar>& sched) const {
    const Scalar ab = sched.alpha_bar(t);
    return ab * scale_ * scale_ + Scalar(1) - ab;
  }

  /// Posterior component probabilities given z_t.
  Vector<Scalar> responsibilities(const Vector<Scalar>& z, int t,
                                  const NoiseSchedule<Scalar>& sched) const {
    check_dim(z);
    const Scalar ab = sched.alpha_bar(t);
    const Scalar v = variance_factor(t, sched);
    // ||z||^2 is common to every component and drops out of the softmax.
    Vector<Scalar> logits =
        log_weights_ +
        ((std::sqrt(ab) * (means_.transpose() * z)).array() - Scalar(0.5) * ab * mean_sq_norms_.array())
                .matrix() /
            v;
    const Scalar top = logits.maxCoeff();
    Vector<Scalar> r = (logits.array() - top).exp();
    return r / r.sum();
  }

  Vector<Scalar> predict(const Vector<Scalar>& z, int t, const NoiseSchedule<Scalar>& sched) const {
    const Scalar ab = sched.alpha_bar(t);
    const Scalar v = variance_factor(t, sched);
    const Vector<Scalar> r = responsibilities(z, t, sched);
    return (std::sqrt(Scalar(1) - ab) / v) * (z - std::sqrt(ab) * (means_ * r));
  }

  /// Most probable component for a clean latent (posterior argmax at t = 0).
  int mode(const Vector<Scalar>& z) const {
    check_dim(z);
    Vector<Scalar> logits(components());
    for (int k = 0; k < components(); ++k) {
      logits[k] = log_weights_[k] - (z - means_.col(k)).squaredNorm() / (Scalar(2) * scale_ * scale_);
    }
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }

 private:
  void check_dim(const Vector<Scalar>& z) const {
    if (z.size() != means_.rows()) {
      throw Error(ErrorKind::ShapeMismatch, "mixture score dim " + std::to_string(means_.rows()) +
                                                " given " + std::to_string(z.size()));
    }
  }

  Vector<Scalar> weights_;
  Vector<Scalar> log_weights_;
  Matrix<Scalar> means_;
  Vector<Scalar> mean_sq_norms_;
  Scalar scale_;
};

template <typename Scalar>
using ScoreModel = std::variant<GaussianScore<Scalar>, MixtureScore<Scalar>, ZeroScore<Scalar>>;

template <typename Scalar>
Vector<Scalar> predict_noise(const ScoreModel<Scalar>& model, const Vector<Scalar>& z, int t,
                             const NoiseSchedule<Scalar>& sched) {
  return std::visit([&](const auto& m) { return m.predict(z, t, sched); }, model);
}

template <typename Scalar, typename Model>
Vector<Scalar> predict_noise(const Model& model, const Vector<Scalar>& z, int t,
                             const NoiseSchedule<Scalar>& sched) {
  return model.predict(z, t, sched);
}

/// Noise prediction eps_theta(z, t). Defined for t in [0, T]; at t = 0
/// (alpha_bar = 1) every model returns zero, which the inversion uses.
template <typename Scalar, typename Model>
Latent<Scalar> eps_theta(const Model& model, const Latent<Scalar>& z, int t,
                         const NoiseSchedule<Scalar>& sched) {
  sched.check_timestep(t);
  return Latent<Scalar>(z.shape, predict_noise(model, z.values, t, sched));
}

// ---------------------------------------------------------------------------
// Lipschitz profiles

enum class LipschitzMethod { Exact, Empirical };

template <typename Scalar>
struct LipschitzProfile {
  Vector<Scalar> L;             ///< L_1..L_T as used by the bounds
  Vector<Scalar> observed_max;  ///< raw sup of probe ratios (empirical mode)
  LipschitzMethod method = LipschitzMethod::Exact;
  int trials = 0;

  int steps() const { return static_cast<int>(L.size()); }

  /// L_t for t in [0, T]; L_0 = 0 because eps_theta(., 0) vanishes.
  Scalar at(int t) const { return t == 0 ? Scalar(0) : L[t - 1]; }

  LipschitzProfile scaled(Scalar factor) const {
    LipschitzProfile out = *this;
    out.L *= factor;
    return out;
  }
};

inline constexpr double kEmpiricalLipschitzSafety = 1.1;

/// Draws one probe pair (u, v) at step t. Mixture probes concentrate on the
/// posterior decision boundary between two components, which is where the
/// Jacobian of eps_theta has its largest eigenvalue.
template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> probe_pair(const MixtureScore<Scalar>& model, int t,
                                                     const NoiseSchedule<Scalar>& sched,
                                                     RngStream& rng) {
  const int d = model.dim();
  const int K = model.components();
  const Scalar ab = sched.alpha_bar(t);
  const Scalar sa = std::sqrt(ab);
  const Scalar v = model.variance_factor(t, sched);

  Vector<Scalar> u;
  Vector<Scalar> dir;
  Scalar delta;
  if (K >= 2 && rng.uniform() < 0.6 && sa > Scalar(0)) {
    const int j = static_cast<int>(rng.uniform_index(K));
    int k = static_cast<int>(rng.uniform_index(K - 1));
    if (k >= j) ++k;
    const Vector<Scalar> diff = model.means().col(k) - model.means().col(j);
    const Scalar gap2 = diff.squaredNorm();
    const Vector<Scalar> unit = diff / std::sqrt(gap2);
    const Scalar lw_j = std::log(model.weights()[j]);
    const Scalar lw_k = std::log(model.weights()[k]);
    const Scalar f_star = Scalar(0.5) + v * (lw_j - lw_k) / (ab * gap2);
    // logistic width of the responsibility transition, in z units
    const Scalar width = v / (sa * std::sqrt(gap2));
    u = sa * (model.means().col(j) + f_star * diff) +
        static_cast<Scalar>(rng.uniform() * 4.0 - 2.0) * width * unit +
        Scalar(0.1) * std::sqrt(v) * rng.normal_vector<Scalar>(d);
    dir = rng.uniform() < 0.5 ? unit : Vector<Scalar>(rng.normal_vector<Scalar>(d).normalized());
    delta = width * static_cast<Scalar>(std::pow(10.0, rng.uniform() * 3.5 - 3.0));
  } else {
    int k = 0;
    double acc = 0.0;
    const double pick = rng.uniform();
    for (; k < K - 1; ++k) {
      acc += static_cast<double>(model.weights()[k]);
      if (pick < acc) break;
    }
    u = sa * model.means().col(k) + std::sqrt(v) * rng.normal_vector<Scalar>(d);
    dir = rng.normal_vector<Scalar>(d).normalized();
    delta = std::sqrt(v) * static_cast<Scalar>(std::pow(10.0, rng.uniform() * 4.0 - 3.0));
  }
  Vector<Scalar> w = u + delta * dir;
  return {std::move(u), std::move(w)};
}

template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> probe_pair(const GaussianScore<Scalar>& model, int t,
                                                     const NoiseSchedule<Scalar>& sched,
                                                     RngStream& rng) {
  const Scalar v = model.variance_factor(t, sched);
  Vector<Scalar> u = std::sqrt(sched.alpha_bar(t)) * model.mean() +
                     std::sqrt(v) * rng.normal_vector<Scalar>(model.dim());
  Vector<Scalar> w = u + std::sqrt(v) * static_cast<Scalar>(std::pow(10.0, rng.uniform() * 4.0 - 3.0)) *
                             rng.normal_vector<Scalar>(model.dim()).normalized();
  return {std::move(u), std::move(w)};
}

template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> probe_pair(const ScoreModel<Scalar>& model, int t,
                                                     const NoiseSchedule<Scalar>& sched,
                                                     RngStream& rng, int dim) {
  if (const auto* g = std::get_if<GaussianScore<Scalar>>(&model)) return probe_pair(*g, t, sched, rng);
  if (const auto* m = std::get_if<MixtureScore<Scalar>>(&model)) return probe_pair(*m, t, sched, rng);
  Vector<Scalar> u = rng.normal_vector<Scalar>(dim);
  Vector<Scalar> w = u + rng.normal_vector<Scalar>(dim);
  return {std::move(u), std::move(w)};
}

template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> probe_pair(const GaussianScore<Scalar>& model, int t,
                                                     const NoiseSchedule<Scalar>& sched, RngStream& rng, int) {
  return probe_pair(model, t, sched, rng);
}

template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> probe_pair(const MixtureScore<Scalar>& model, int t,
                                                     const NoiseSchedule<Scalar>& sched, RngStream& rng, int) {
  return probe_pair(model, t, sched, rng);
}

template <typename Scalar>
LipschitzProfile<Scalar> lipschitz_profile(const GaussianScore<Scalar>& model,
                                           const NoiseSchedule<Scalar>& sched) {
  LipschitzProfile<Scalar> p;
  p.L.resize(sched.steps());
  for (int t = 1; t <= sched.steps(); ++t) p.L[t - 1] = model.slope(t, sched);
  p.observed_max = p.L;
  return p;
}

template <typename Scalar>
LipschitzProfile<Scalar> lipschitz_profile(const ZeroScore<Scalar>&, const NoiseSchedule<Scalar>& sched) {
  LipschitzProfile<Scalar> p;
  p.L = Vector<Scalar>::Zero(sched.steps());
  p.observed_max = p.L;
  return p;
}

/// Empirical sup of ||eps(u,t) - eps(v,t)|| / ||u - v|| over `trials` probe
/// pairs per step, inflated by kEmpiricalLipschitzSafety.
template <typename Scalar>
LipschitzProfile<Scalar> lipschitz_profile(const MixtureScore<Scalar>& model,
                                           const NoiseSchedule<Scalar>& sched, int trials,
                                           std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorKind::InvalidRange, "empirical Lipschitz needs trials >= 1");
  LipschitzProfile<Scalar> p;
  p.method = LipschitzMethod::Empirical;
  p.trials = trials;
  p.L.resize(sched.steps());
  p.observed_max.resize(sched.steps());
  const RngStream root(seed, "lipschitz-probe");
  for (int t = 1; t <= sched.steps(); ++t) {
    RngStream rng = root.substream(static_cast<std::uint64_t>(t));
    Scalar best = Scalar(0);
    for (int i = 0; i < trials; ++i) {
      const auto [u, v] = probe_pair(model, t, sched, rng);
      const Scalar gap = (u - v).norm();
      if (!(gap > Scalar(0))) continue;
      const Scalar ratio = (model.predict(u, t, sched) - model.predict(v, t, sched)).norm() / gap;
      best = std::max(best, ratio);
    }
    p.observed_max[t - 1] = best;
    p.L[t - 1] = static_cast<Scalar>(kEmpiricalLipschitzSafety) * best;
  }
  return p;
}

template <typename Scalar>
LipschitzProfile<Scalar> lipschitz_profile(const ScoreModel<Scalar>& model,
                                           const NoiseSchedule<Scalar>& sched, int trials,
                                           std::uint64_t seed) {
  if (const auto* g = std::get_if<GaussianScore<Scalar>>(&model)) return lipschitz_profile(*g, sched);
  if (const auto* m = std::get_if<MixtureScore<Scalar>>(&model)) {
    return lipschitz_profile(*m, sched, trials, seed);
  }
  return lipschitz_profile(std::get<ZeroScore<Scalar>>(model), sched);
}

}  // namespace shiftlab
