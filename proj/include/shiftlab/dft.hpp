#pragma once

#include "shiftlab/core.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace shiftlab {

template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// W(j, k) = exp(-2 pi i j k / n). Symmetric.
template <typename Scalar>
ComplexMatrix<Scalar> dft_matrix(int n) {
  ComplexMatrix<Scalar> w(n, n);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      const int jk = (j * k) % n;
      const Scalar angle = -Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(jk) / Scalar(n);
      w(j, k) = std::complex<Scalar>(std::cos(angle), std::sin(angle));
    }
  }
  return w;
}

/// Unnormalized 2-D DFT, F = W_h X W_w.
template <typename Scalar, typename Derived>
ComplexMatrix<Scalar> dft2(const Eigen::MatrixBase<Derived>& x) {
  const ComplexMatrix<Scalar> wh = dft_matrix<Scalar>(static_cast<int>(x.rows()));
  const ComplexMatrix<Scalar> ww = dft_matrix<Scalar>(static_cast<int>(x.cols()));
  return wh * x.template cast<std::complex<Scalar>>() * ww;
}

/// Inverse of dft2, X = conj(W_h) F conj(W_w) / (h w).
template <typename Scalar>
ComplexMatrix<Scalar> idft2(const ComplexMatrix<Scalar>& f) {
  const ComplexMatrix<Scalar> wh = dft_matrix<Scalar>(static_cast<int>(f.rows())).conjugate();
  const ComplexMatrix<Scalar> ww = dft_matrix<Scalar>(static_cast<int>(f.cols())).conjugate();
  return (wh * f * ww) / std::complex<Scalar>(Scalar(f.rows() * f.cols()), Scalar(0));
}

/// Signed frequency of bin k on an n-point grid, in [-n/2, n/2).
inline int signed_frequency(int k, int n) { return k < (n + 1) / 2 ? k : k - n; }

/// Channel c of a latent as an h x w row-major view.
template <typename Scalar>
Eigen::Map<const RowMajorMatrix<Scalar>> channel_view(const Latent<Scalar>& z, int c) {
  const Shape& s = z.shape;
  return Eigen::Map<const RowMajorMatrix<Scalar>>(z.values.data() + static_cast<Eigen::Index>(c) * s.height * s.width,
                                                  s.height, s.width);
}

template <typename Scalar>
Eigen::Map<RowMajorMatrix<Scalar>> channel_view(Latent<Scalar>& z, int c) {
  const Shape& s = z.shape;
  return Eigen::Map<RowMajorMatrix<Scalar>>(z.values.data() + static_cast<Eigen::Index>(c) * s.height * s.width,
                                            s.height, s.width);
}

}  // namespace shiftlab
