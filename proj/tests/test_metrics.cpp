#include "helpers.hpp"
#include "shiftlab/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace shiftlab;
using testing::kDim;
using testing::kShape;

namespace {

TrialRecord record(Decision clean, Decision attacked) {
  TrialRecord r;
  r.verify_clean.decision = clean;
  r.verify_attacked.decision = attacked;
  return r;
}

}  // namespace

TEST_CASE("noise distance on hand examples") {
  const Shape s{1, 2, 2};
  const Latent<double> a(s, Vector<double>{{1.0, 2.0, 3.0, 4.0}});
  const Latent<double> b(s, Vector<double>{{1.0, 0.0, 3.0, 0.0}});
  const auto d = noise_distance(a, b);
  CHECK(d.l1 == doctest::Approx(1.5));
  CHECK(d.l2 == doctest::Approx(std::sqrt(5.0)));
  CHECK(noise_distance(a, a).l1 == 0.0);
  CHECK_THROWS_AS(noise_distance(a, Latent<double>(Shape{1, 1, 4})), Error);
}

TEST_CASE("independent unit noises sit near the reference distances") {
  RngStream rng(1, "t");
  double l1 = 0.0, l2sq = 0.0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    const auto d = noise_distance(rng.normal_latent(kShape), rng.normal_latent(kShape));
    CHECK(d.l2 >= d.l1);
    l1 += d.l1;
    l2sq += d.l2 * d.l2;
  }
  CHECK(l1 / n == doctest::Approx(2.0 / std::sqrt(M_PI)).epsilon(0.01));
  CHECK(std::sqrt(l2sq / n) == doctest::Approx(std::sqrt(2.0)).epsilon(0.01));
}

TEST_CASE("attack success rate counts evasions among detected images") {
  using D = Decision;
  std::vector<TrialRecord> rs{record(D::Watermarked, D::Clean), record(D::Watermarked, D::Watermarked),
                              record(D::Watermarked, D::Clean), record(D::Clean, D::Clean)};
  CHECK(attack_success_rate(rs) == doctest::Approx(2.0 / 3.0));
  CHECK(clean_evasion_rate(rs) == doctest::Approx(0.25));
  const std::vector<TrialRecord> none_detected{record(D::Clean, D::Clean), record(D::Clean, D::Watermarked)};
  CHECK(attack_success_rate(none_detected) == 0.0);
  const std::vector<TrialRecord> all{record(D::Watermarked, D::Clean)};
  CHECK(attack_success_rate(all) == 1.0);
  try {
    attack_success_rate({});
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyInput);
  }
}

TEST_CASE("mode retention needs both modes") {
  TrialRecord r;
  CHECK_FALSE(r.mode_retained().has_value());
  r.mode_clean = 2;
  r.mode_attacked = 2;
  CHECK(*r.mode_retained());
  r.mode_attacked = 1;
  CHECK_FALSE(*r.mode_retained());
}

TEST_CASE("semantic proxy measures in latent space") {
  RngStream rng(2, "t");
  const auto codec = ToyCodec<double>::orthogonal(kDim, 2.0, 3);
  const auto z = rng.normal_latent(kShape);
  Latent<double> w = z;
  w.values.array() += 0.5;
  const auto p = semantic_proxy(codec.decode(w), codec.decode(z), codec);
  CHECK(p.latent_mse == doctest::Approx(0.25).epsilon(1e-10));
  CHECK_FALSE(p.mode_retained().has_value());
  const auto mix = MixtureScore<double>::seeded(kDim, 4, 0.5, 17);
  const Latent<double> near0(kShape, mix.means().col(0));
  const Latent<double> near1(kShape, mix.means().col(1));
  const auto q = semantic_proxy(codec.decode(near1), codec.decode(near0), codec, &mix);
  CHECK(*q.mode_clean == 0);
  CHECK(*q.mode_attacked == 1);
  CHECK_FALSE(*q.mode_retained());
}

TEST_CASE("mean and standard error") {
  const std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
  const auto m = mean_and_stderr(xs);
  CHECK(m.mean == doctest::Approx(2.5));
  CHECK(m.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  const std::vector<double> one{7.0};
  CHECK(mean_and_stderr(one).stderr_ == 0.0);
  CHECK(mean_and_stderr(one).mean == 7.0);
  CHECK_THROWS_AS(mean_and_stderr({}), Error);
}

TEST_CASE("adjacent inversions with slack") {
  const std::vector<double> xs{0.1, 0.3, 0.29, 0.5, 0.2};
  CHECK(adjacent_inversions(xs) == 2);
  CHECK(adjacent_inversions(xs, 0.02) == 1);
  CHECK(adjacent_inversions(std::vector<double>{}) == 0);
}
