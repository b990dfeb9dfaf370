#pragma once

#include "shiftlab/schedule.hpp"
#include "shiftlab/score.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

namespace testing {

using namespace shiftlab;

inline const Shape kShape{1, 16, 16};
inline constexpr int kDim = 256;

/// Default desk-scale schedule used across the suite.
inline NoiseSchedule<double> desk_schedule(int T = 100) {
  return build_linear_schedule<double>(T, 1e-3 * 100.0 / T, std::min(0.2 * 100.0 / T, 0.999));
}

inline double relative_error(const Vector<double>& a, const Vector<double>& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// DDIM coefficient c_t of the map z_t -> z_{t-1} for mu = 0, s = 1 data,
/// where eps_theta(z, t) = sqrt(1 - ab_t) z.
inline double linear_ddim_factor(const NoiseSchedule<double>& s, int t, double sigma = 0.0) {
  const double ab = s.alpha_bar(t);
  const double prev = s.alpha_bar(t - 1);
  return std::sqrt(prev) * std::sqrt(ab) + std::sqrt(1.0 - prev - sigma * sigma) * std::sqrt(1.0 - ab);
}

}  // namespace testing
