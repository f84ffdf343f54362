#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mbsde {

/// Largest coordinate dimension handled anywhere (product of two 3-d charts).
inline constexpr int kMaxDim = 6;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Error categories; each maps to a failure mode named in the module contracts.
enum class ErrorKind {
  domain,        // point outside chart bounds or domain
  conditioning,  // singular / indefinite metric
  escape,        // geodesic left the chart
  convergence,   // iterative solver did not converge
  dimension,     // shape mismatch
  parameter,     // invalid numeric parameter (e.g. Kendall h too large)
  config,        // invalid configuration
  numeric,       // non-finite value
  accuracy,      // quadrature / refinement check failed
  extrapolation, // evaluation outside a stored grid
  statistics,    // too few samples
  basis,         // rank-deficient regression
  horizon,       // exit-time censoring too frequent
  metric         // nonpositive 1-d metric
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::conditioning: return "conditioning";
    case ErrorKind::escape: return "escape";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::config: return "config";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::accuracy: return "accuracy";
    case ErrorKind::extrapolation: return "extrapolation";
    case ErrorKind::statistics: return "statistics";
    case ErrorKind::basis: return "basis";
    case ErrorKind::horizon: return "horizon";
    case ErrorKind::metric: return "metric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Escape error carrying the geodesic parameter at which the chart was left.
class EscapeError : public Error {
 public:
  EscapeError(double t, const std::string& what) : Error(ErrorKind::escape, what), time(t) {}
  double time;
};

/// Non-finite value during time stepping; records step and node.
class BlowUpError : public Error {
 public:
  BlowUpError(long step, long node, const std::string& what)
      : Error(ErrorKind::numeric, what), step(step), node(node) {}
  long step;
  long node;
};

[[noreturn]] inline void fail(ErrorKind k, const std::string& what) { throw Error(k, what); }

inline void require(bool ok, ErrorKind k, const std::string& what) {
  if (!ok) fail(k, what);
}

/// Axis-aligned box [lo, hi].
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& x) const {
    if (x.size() != lo.size()) return false;
    for (int i = 0; i < lo.size(); ++i)
      if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
    return true;
  }
  bool interior(const Vec& x) const {
    for (int i = 0; i < lo.size(); ++i)
      if (!(x[i] > lo[i] && x[i] < hi[i])) return false;
    return true;
  }
  Vec center() const { return 0.5 * (lo + hi); }
  Vec width() const { return hi - lo; }
};

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double a : v) out[i++] = a;
  return out;
}

inline Box make_box(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  return Box{vec(lo), vec(hi)};
}

/// Quintic smootherstep 6u^5 - 15u^4 + 10u^3 on [0,1], clamped outside.
inline double smootherstep(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return u * u * u * (u * (6.0 * u - 15.0) + 10.0);
}

inline double smootherstep_deriv(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return 30.0 * u * u * (u - 1.0) * (u - 1.0);
}

/// Independent RNG stream for (seed, index).
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x6d627364u};
  return std::mt19937_64(seq);
}

/// Uniform point in a box.
template <class Rng>
Vec uniform_in(const Box& b, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec x(b.dim());
  for (int i = 0; i < b.dim(); ++i) x[i] = b.lo[i] + (b.hi[i] - b.lo[i]) * u(rng);
  return x;
}

template <class Rng>
Mat gaussian_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat z(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) z(i, j) = n(rng);
  return z;
}

/// Finite check for any Eigen expression.
template <class D>
bool all_finite(const Eigen::MatrixBase<D>& m) {
  return m.allFinite();
}

}  // namespace mbsde
