#include "helpers.hpp"
#include "shiftlab/watermark.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <set>

using namespace shiftlab;
using testing::desk_schedule;
using testing::kDim;
using testing::kShape;

namespace {

RingMark default_ring() { return RingMark{{101, SchemeId::RingMark}, 3.0, 5.0}; }

SignMark default_sign(int m_len = 128) {
  return SignMark{{202, SchemeId::SignMark}, Message::random(m_len, 303)};
}

/// Textbook O(n^4) transform, used only to check the matrix form.
ComplexMatrix<double> naive_dft2(const RowMajorMatrix<double>& x) {
  const int h = static_cast<int>(x.rows());
  const int w = static_cast<int>(x.cols());
  ComplexMatrix<double> f = ComplexMatrix<double>::Zero(h, w);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (int a = 0; a < h; ++a) {
        for (int b = 0; b < w; ++b) {
          const double angle = -2.0 * M_PI * (double(u) * a / h + double(v) * b / w);
          acc += x(a, b) * std::complex<double>(std::cos(angle), std::sin(angle));
        }
      }
      f(u, v) = acc;
    }
  }
  return f;
}

}  // namespace

TEST_CASE("dft2 agrees with the direct sum and idft2 inverts it") {
  RngStream rng(1, "t");
  Latent<double> z = rng.normal_latent(Shape{1, 6, 8});
  const RowMajorMatrix<double> x = channel_view(z, 0);
  const ComplexMatrix<double> f = dft2<double>(x);
  CHECK((f - naive_dft2(x)).cwiseAbs().maxCoeff() < 1e-10);
  const ComplexMatrix<double> back = idft2(f);
  CHECK((back.real() - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(back.imag().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ring bins are the lattice points with radius in [r_in, r_out]") {
  const auto bins = ring_bins(default_ring(), kShape);
  // brute force over signed frequencies in [-8, 8)
  int expected = 0;
  for (int a = -8; a < 8; ++a) {
    for (int b = -8; b < 8; ++b) {
      const double r = std::sqrt(double(a * a + b * b));
      if (r >= 3.0 && r <= 5.0) ++expected;
    }
  }
  CHECK(static_cast<int>(bins.size()) == expected);
  CHECK(expected == 56);
  std::set<std::pair<int, int>> seen(bins.begin(), bins.end());
  for (const auto& [u, v] : bins) {
    CHECK(seen.count({(16 - u) % 16, (16 - v) % 16}) == 1);
  }
}

TEST_CASE("ring pattern is conjugate symmetric and keyed") {
  const auto p = ring_pattern(default_ring(), kShape);
  for (int u = 0; u < 16; ++u) {
    for (int v = 0; v < 16; ++v) {
      CHECK(std::abs(p(u, v) - std::conj(p((16 - u) % 16, (16 - v) % 16))) == 0.0);
    }
  }
  CHECK((p - ring_pattern(default_ring(), kShape)).cwiseAbs().maxCoeff() == 0.0);
  RingMark other = default_ring();
  other.key.key_seed = 102;
  CHECK((p - ring_pattern(other, kShape)).cwiseAbs().maxCoeff() > 1.0);
}

TEST_CASE("ring embedding is real, exact on the ring and unit variance") {
  const auto scheme = default_ring();
  const auto pattern = ring_pattern(scheme, kShape);
  const auto bins = ring_bins(scheme, kShape);
  double energy = 0.0;
  const int draws = 200;
  for (int i = 0; i < draws; ++i) {
    RngStream rng(derive_trial_seed(7, "ring", i, "gen-noise"), "gen-noise");
    double residue = 1.0;
    const auto eps = embed_ring(scheme, kShape, rng, &residue);
    CHECK(residue < 1e-10);
    energy += eps.squared_norm() / kDim;
    if (i < 3) {
      const auto f = dft2<double>(channel_view(eps, 0));
      for (const auto& [u, v] : bins) CHECK(std::abs(f(u, v) - pattern(u, v)) < 1e-9);
      CHECK(ring_statistic(scheme, eps) < 1e-10);
    }
  }
  const double mean = energy / draws;
  CHECK(mean > 0.9);
  CHECK(mean < 1.1);
}

TEST_CASE("ring embedding rejects grids without an even square channel") {
  RngStream rng(1, "t");
  CHECK_THROWS_AS(embed_ring(default_ring(), Shape{1, 16, 8}, rng), Error);
  try {
    embed_ring(default_ring(), Shape{1, 15, 15}, rng);
    FAIL("expected InvalidShape");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidShape);
  }
}

TEST_CASE("sign embedding writes the message into the key positions") {
  const auto scheme = default_sign();
  const auto pos = sign_positions(scheme, kDim);
  CHECK(pos.size() == 128);
  CHECK(std::set<int>(pos.begin(), pos.end()).size() == 128);
  for (int i = 0; i < 20; ++i) {
    RngStream rng(i, "t");
    const auto eps = embed_sign(scheme, kShape, rng);
    CHECK(bit_accuracy(scheme, eps) == 1.0);
    for (std::size_t j = 0; j < pos.size(); ++j) {
      CHECK((eps.values[pos[j]] > 0) == (scheme.message.bits[j] == 1));
    }
  }
  // the flip is magnitude preserving
  RngStream a(5, "t"), b(5, "t");
  const auto plain = a.normal_latent(kShape);
  const auto marked = embed_sign(scheme, kShape, b);
  CHECK((plain.values.cwiseAbs() - marked.values.cwiseAbs()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sign message longer than the latent is rejected") {
  const auto scheme = default_sign(kDim + 1);
  RngStream rng(1, "t");
  try {
    embed_sign(scheme, kShape, rng);
    FAIL("expected MessageTooLong");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MessageTooLong);
  }
  CHECK_NOTHROW(embed_sign(default_sign(kDim), kShape, rng));
}

TEST_CASE("embedding is deterministic in the stream") {
  for (const WatermarkScheme& s : {WatermarkScheme(default_ring()), WatermarkScheme(default_sign())}) {
    RngStream a(9, "gen-noise"), b(9, "gen-noise"), c(10, "gen-noise");
    const auto x = embed(s, kShape, a);
    CHECK(x.values == embed(s, kShape, b).values);
    CHECK(x.values != embed(s, kShape, c).values);
  }
}

TEST_CASE("codec round trips are exact to rounding") {
  RngStream rng(3, "t");
  const auto z = rng.normal_latent(kShape);
  const auto id = ToyCodec<double>::identity();
  CHECK(id.encode(id.decode(z)).values == z.values);
  const auto orth = ToyCodec<double>::orthogonal(kDim, 2.0, 3);
  CHECK((orth.encode(orth.decode(z)).values - z.values).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(orth.decode(z).norm() == doctest::Approx(2.0 * z.norm()).epsilon(1e-12));
  CHECK_THROWS_AS(orth.decode(Latent<double>(Shape{1, 4, 4})), Error);
  CHECK_THROWS_AS(ToyCodec<double>::orthogonal(8, 0.0, 1), Error);
}

TEST_CASE("clean generations verify as watermarked") {
  const auto sched = desk_schedule();
  const auto score = GaussianScore<double>::standard(kDim);
  const auto codec = ToyCodec<double>::identity();
  const auto sign = default_sign();
  const auto ring = default_ring();
  for (int i = 0; i < 5; ++i) {
    RngStream rng(derive_trial_seed(1, "sign", i, "gen-noise"), "gen-noise");
    const auto x = generate_watermarked(embed_sign(sign, kShape, rng), score, sched, codec);
    const auto r = verify(x, WatermarkScheme(sign), codec, score, sched, 0.6);
    CHECK(r.bit_accuracy.has_value());
    CHECK(*r.bit_accuracy == 1.0);
    CHECK(r.decision == Decision::Watermarked);
    const auto xr = generate_watermarked(embed_ring(ring, kShape, rng), score, sched, codec);
    const auto rr = verify(xr, WatermarkScheme(ring), codec, score, sched, 1.0);
    CHECK(!rr.bit_accuracy.has_value());
    // first-order inversion shrinks eps by (prod c)^2 = 0.963, so the ring
    // distance is small but not zero
    CHECK(rr.statistic < 0.3);
    CHECK(rr.decision == Decision::Watermarked);
  }
}

TEST_CASE("decision is consistent with the statistic and threshold") {
  RngStream rng(4, "t");
  const auto eps = rng.normal_latent(kShape);
  const auto sign = WatermarkScheme(default_sign());
  const auto ring = WatermarkScheme(default_ring());
  const double ba = verify_recovered(eps, sign, 0.0).statistic;
  CHECK(verify_recovered(eps, sign, ba).decision == Decision::Watermarked);
  CHECK(verify_recovered(eps, sign, std::nextafter(ba, 2.0)).decision == Decision::Clean);
  const double dist = verify_recovered(eps, ring, 0.0).statistic;
  CHECK(verify_recovered(eps, ring, dist).decision == Decision::Watermarked);
  CHECK(verify_recovered(eps, ring, std::nextafter(dist, 0.0)).decision == Decision::Clean);
}

TEST_CASE("threshold from null statistics respects the target with ties") {
  // 10 values, fpr 0.2 allows two upper-tail acceptances
  const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  CHECK(threshold_from_null(SchemeId::SignMark, v, 0.2) == 0.9);
  CHECK(threshold_from_null(SchemeId::RingMark, v, 0.2) == 0.2);
  // a tie straddling the boundary must not admit three
  const std::vector<double> tied{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 0.9, 1.0};
  const double tau = threshold_from_null(SchemeId::SignMark, tied, 0.2);
  int accepted = 0;
  for (double x : tied) accepted += x >= tau ? 1 : 0;
  CHECK(accepted <= 2);
  CHECK(tau == 1.0);
  // all identical: nothing may be accepted at fpr 0.1
  const std::vector<double> flat(10, 0.5);
  const double t_flat = threshold_from_null(SchemeId::SignMark, flat, 0.1);
  CHECK(t_flat > 0.5);
  CHECK(std::isinf(threshold_from_null(SchemeId::SignMark, v, 1.0)));
  CHECK(std::isinf(threshold_from_null(SchemeId::RingMark, v, 1.0)));
  CHECK_THROWS_AS(threshold_from_null(SchemeId::SignMark, {}, 0.1), Error);
  CHECK_THROWS_AS(threshold_from_null(SchemeId::SignMark, v, 0.0), Error);
}

TEST_CASE("sign calibration lands near the binomial tail") {
  const auto sched = desk_schedule();
  const auto score = GaussianScore<double>::standard(kDim);
  const auto codec = ToyCodec<double>::identity();
  const WatermarkScheme sign(default_sign());
  const double tau = calibrate_threshold(sign, kShape, score, sched, codec, 1000, 0.01, 11);
  const double normal_tail = 0.5 + 2.33 * std::sqrt(0.25 / 128.0);
  MESSAGE("tau = " << tau << ", normal approximation " << normal_tail);
  CHECK(std::abs(tau - normal_tail) <= 0.03);

  const double tau2 = calibrate_threshold(sign, kShape, score, sched, codec, 2000, 0.01, 11);
  CHECK(std::abs(tau2 - tau) < 0.02);

  const double everything = calibrate_threshold(sign, kShape, score, sched, codec, 100, 1.0, 11);
  RngStream rng(12, "t");
  CHECK(verify_recovered(rng.normal_latent(kShape), sign, everything).decision == Decision::Watermarked);
}

TEST_CASE("ring calibration gives a stable threshold") {
  const auto sched = desk_schedule();
  const auto score = GaussianScore<double>::standard(kDim);
  const auto codec = ToyCodec<double>::identity();
  const WatermarkScheme ring(default_ring());
  const double tau = calibrate_threshold(ring, kShape, score, sched, codec, 1000, 0.01, 13);
  const double tau2 = calibrate_threshold(ring, kShape, score, sched, codec, 2000, 0.01, 13);
  MESSAGE("ring tau " << tau << " / " << tau2);
  CHECK(tau > 0.3);
  CHECK(std::abs(tau2 - tau) < 0.02);
}

TEST_CASE("calibration needs at least 100 null samples") {
  const auto sched = desk_schedule();
  try {
    calibrate_threshold(WatermarkScheme(default_sign()), kShape, GaussianScore<double>::standard(kDim), sched,
                        ToyCodec<double>::identity(), 99, 0.01, 1);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientSamples);
  }
}

TEST_CASE("null statistics do not depend on the worker count") {
  const auto sched = desk_schedule(20);
  const auto score = MixtureScore<double>::seeded(kDim, 4, 0.5, 17);
  const auto codec = ToyCodec<double>::orthogonal(kDim, 2.0, 3);
  const WatermarkScheme ring(default_ring());
  const auto a = null_statistics(ring, kShape, score, sched, codec, 40, 5, 1);
  const auto b = null_statistics(ring, kShape, score, sched, codec, 40, 5, 4);
  CHECK(a == b);
}
