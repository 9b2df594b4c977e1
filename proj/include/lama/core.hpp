#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lama {

// ----------------------------------------------------------------------------
// Errors
// ----------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent geometry, grid or option combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range scalar parameter (epsilon, step sizes, noise levels...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates a value invariant (non-finite, wrong shape).
class InputError : public Error {
 public:
  using Error::Error;
};

class UnsupportedGeometry : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// ----------------------------------------------------------------------------
// Flat vector helpers. Everything in the toolkit is a row-major double array.
// ----------------------------------------------------------------------------

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm2(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// x + a * d
inline Vec add_scaled(std::span<const double> x, double a, std::span<const double> d) {
  Vec out(x.begin(), x.end());
  axpy(a, d, out);
  return out;
}

inline Vec subtract(std::span<const double> a, std::span<const double> b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace lama
