#pragma once

#include "shiftlab/core.hpp"
#include "shiftlab/rng.hpp"

#include <cstdint>
#include <memory>
#include <string>

namespace shiftlab {

enum class CodecKind { Identity, OrthogonalLinear };

/// Toy stand-in for the VAE pair (decoder D, encoder E).
///
/// OrthogonalLinear: D(z) = g Q z and E(x) = Q^T x / g with Q a Haar-random
/// orthogonal matrix, so E(D(z)) = z and the round trip is 1-Lipschitz.
template <typename Scalar>
class ToyCodec {
 public:
  static ToyCodec identity() { return ToyCodec(); }

  static ToyCodec orthogonal(int dim, Scalar gain, std::uint64_t basis_seed) {
    if (!(gain > Scalar(0))) throw Error(ErrorKind::InvalidRange, "codec gain must be > 0");
    RngStream rng(basis_seed, "codec-basis");
    Matrix<Scalar> g(dim, dim);
    for (int j = 0; j < dim; ++j) g.col(j) = rng.normal_vector<Scalar>(dim);
    Eigen::HouseholderQR<Matrix<Scalar>> qr(g);
    Matrix<Scalar> q = qr.householderQ() * Matrix<Scalar>::Identity(dim, dim);
    // sign-fix by diag(R) so Q is Haar distributed
    const Matrix<Scalar>& r = qr.matrixQR();
    for (int j = 0; j < dim; ++j) {
      if (r(j, j) < Scalar(0)) q.col(j) = -q.col(j);
    }
    ToyCodec c;
    c.kind_ = CodecKind::OrthogonalLinear;
    c.gain_ = gain;
    c.basis_seed_ = basis_seed;
    c.basis_ = std::make_shared<const Matrix<Scalar>>(std::move(q));
    return c;
  }

  CodecKind kind() const { return kind_; }
  Scalar gain() const { return gain_; }
  std::uint64_t basis_seed() const { return basis_seed_; }

  /// D: latent -> image.
  Latent<Scalar> decode(const Latent<Scalar>& z) const {
    if (kind_ == CodecKind::Identity) return z;
    check_dim(z);
    return Latent<Scalar>(z.shape, gain_ * ((*basis_) * z.values));
  }

  /// E: image -> latent.
  Latent<Scalar> encode(const Latent<Scalar>& x) const {
    if (kind_ == CodecKind::Identity) return x;
    check_dim(x);
    return Latent<Scalar>(x.shape, ((*basis_).transpose() * x.values) / gain_);
  }

 private:
  ToyCodec() = default;

  void check_dim(const Latent<Scalar>& z) const {
    if (z.values.size() != basis_->rows()) {
      throw Error(ErrorKind::ShapeMismatch, "codec built for d=" + std::to_string(basis_->rows()) +
                                                ", given d=" + std::to_string(z.values.size()));
    }
  }

  CodecKind kind_ = CodecKind::Identity;
  Scalar gain_ = Scalar(1);
  std::uint64_t basis_seed_ = 0;
  std::shared_ptr<const Matrix<Scalar>> basis_;
};

}  // namespace shiftlab
