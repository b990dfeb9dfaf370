#include "shiftlab/harness/runner.hpp"

#include <cmath>
#include <cstdio>

namespace shiftlab::harness {

std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

WatermarkScheme build_scheme(const ExperimentSpec& spec, SchemeId id) {
  if (id == SchemeId::RingMark) {
    return RingMark{{spec.ring.key_seed, SchemeId::RingMark}, spec.ring.r_in, spec.ring.r_out};
  }
  SignMark sign{{spec.sign.key_seed, SchemeId::SignMark}, {}};
  if (!spec.sign.message.empty()) {
    sign.message.bits = spec.sign.message;
  } else {
    sign.message = Message::random(spec.sign.m_len, spec.sign.message_seed);
  }
  return sign;
}

namespace {

ScoreModel<double> build_score(const ScoreSpec& s, int d) {
  if (s.kind == ScoreKind::Gaussian) {
    Vector<double> mean = Vector<double>::Zero(d);
    if (s.mean.size() == 1) {
      mean.setConstant(s.mean.front());
    } else if (!s.mean.empty()) {
      mean = Eigen::Map<const Vector<double>>(s.mean.data(), d);
    }
    return GaussianScore<double>(std::move(mean), s.scale);
  }
  if (s.means.empty() && s.weights.empty()) {
    return MixtureScore<double>::seeded(d, s.components, s.scale, s.mean_seed);
  }
  Vector<double> weights = Vector<double>::Constant(s.components, 1.0 / s.components);
  if (!s.weights.empty()) weights = Eigen::Map<const Vector<double>>(s.weights.data(), s.components);
  Matrix<double> means;
  if (s.means.empty()) {
    means = MixtureScore<double>::seeded(d, s.components, s.scale, s.mean_seed).means();
  } else {
    means = Eigen::Map<const Matrix<double>>(s.means.data(), d, s.components);
  }
  return MixtureScore<double>(std::move(weights), std::move(means), s.scale);
}

}  // namespace

Lab build_lab(const ExperimentSpec& spec) {
  const int d = spec.shape.size();
  Lab lab{build_linear_schedule<double>(spec.schedule.steps, spec.schedule.beta_start, spec.schedule.beta_end),
          build_score(spec.score, d), ZeroScore<double>{}, ToyCodec<double>::identity(), {}};
  if (spec.attack_model == AttackModel::Same) {
    lab.attacker = lab.score;
  } else {
    lab.attacker = MixtureScore<double>::seeded(d, spec.score.components, spec.score.scale, spec.mismatch_seed);
  }
  if (spec.codec.kind == CodecKind::OrthogonalLinear) {
    lab.codec = ToyCodec<double>::orthogonal(d, spec.codec.gain, spec.codec.basis_seed);
  }
  for (SchemeId id : spec.schemes) lab.schemes.push_back(build_scheme(spec, id));
  return lab;
}

}  // namespace shiftlab::harness
