#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace shiftlab {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class ErrorKind {
  InvalidRange,
  ShapeMismatch,
  TimestepOutOfRange,
  DegenerateSchedule,
  SigmaTooLarge,
  InvalidShape,
  MessageTooLong,
  InsufficientSamples,
  EmptyInput,
  Config,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidRange: return "invalid-range";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::TimestepOutOfRange: return "timestep-out-of-range";
    case ErrorKind::DegenerateSchedule: return "degenerate-schedule";
    case ErrorKind::SigmaTooLarge: return "sigma-too-large";
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::MessageTooLong: return "message-too-long";
    case ErrorKind::InsufficientSamples: return "insufficient-samples";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Latent grid geometry (channels x height x width), row-major.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

/// A real (c x h x w) grid. Images produced by the toy codecs share the type;
/// they live in "pixel" coordinates but have the same shape.
template <typename Scalar>
struct Latent {
  Shape shape;
  Vector<Scalar> values;

  Latent() = default;
  explicit Latent(const Shape& s) : shape(s), values(Vector<Scalar>::Zero(s.size())) {}
  Latent(const Shape& s, Vector<Scalar> v) : shape(s), values(std::move(v)) {
    if (values.size() != shape.size()) {
      throw Error(ErrorKind::ShapeMismatch, "latent " + to_string(shape) + " given " +
                                                std::to_string(values.size()) + " values");
    }
  }

  static Latent zeros(const Shape& s) { return Latent(s); }

  int dim() const { return shape.size(); }
  bool all_finite() const { return values.allFinite(); }
  Scalar squared_norm() const { return values.squaredNorm(); }
  Scalar norm() const { return values.norm(); }
};

template <typename Scalar>
inline void require_same_shape(const Latent<Scalar>& a, const Latent<Scalar>& b, const char* where) {
  if (!(a.shape == b.shape) || a.values.size() != b.values.size()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(where) + ": " + to_string(a.shape) + " vs " +
                                              to_string(b.shape));
  }
}

/// Per-element mean squared difference.
template <typename Scalar>
Scalar mean_squared_difference(const Latent<Scalar>& a, const Latent<Scalar>& b) {
  require_same_shape(a, b, "mean_squared_difference");
  return (a.values - b.values).squaredNorm() / static_cast<Scalar>(a.dim());
}

}  // namespace shiftlab
