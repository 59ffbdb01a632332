#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mimofb {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values or missing assets.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples / entries for the requested operation.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain (e.g. non-PSD covariance).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Channel with no usable singular value.
class DegenerateChannelError : public Error {
 public:
  using Error::Error;
};

/// Pilot matrix without full row rank.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Tensor or matrix dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated artifact file.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline CMatrix hermitian_part(const CMatrix& q) {
  return (q + q.adjoint()) * 0.5;
}

}  // namespace mimofb
