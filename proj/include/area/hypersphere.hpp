#pragma once

// Geometry of the unit sphere S^{d-1}: geodesic distance, log/exp maps and
// Frechet means.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "area/errors.hpp"
#include "area/linalg.hpp"

namespace area {

// A point on S^{d-1}. Construction renormalizes.
class UnitVector {
 public:
  UnitVector() = default;

  explicit UnitVector(Vec v) : x_(std::move(v)) {
    if (x_.empty()) throw DimensionError("UnitVector: empty vector");
    if (!all_finite(x_)) throw DomainError("UnitVector: non-finite coordinates");
    const double n = norm(x_);
    if (n == 0.0) throw DegeneracyError("UnitVector: zero vector cannot be normalized");
    x_ *= 1.0 / n;
  }

  // Adopts coordinates that are already normalized, bit for bit. Used when
  // reading persisted points whose digests must survive the round trip.
  static UnitVector from_normalized(Vec v) {
    if (v.empty()) throw DimensionError("UnitVector: empty vector");
    if (!all_finite(v)) throw DomainError("UnitVector: non-finite coordinates");
    if (std::abs(norm(v) - 1.0) > 1e-12) throw DomainError("UnitVector: coordinates are not normalized");
    UnitVector u;
    u.x_ = std::move(v);
    return u;
  }

  static UnitVector basis(std::size_t d, std::size_t axis) {
    Vec e(d);
    e[axis] = 1.0;
    return UnitVector(std::move(e));
  }

  std::size_t dim() const noexcept { return x_.size(); }
  const Vec& vec() const noexcept { return x_; }
  double operator[](std::size_t i) const { return x_[i]; }

  UnitVector operator-() const {
    UnitVector out = *this;
    out.x_ *= -1.0;
    return out;
  }

  bool operator==(const UnitVector&) const = default;

 private:
  Vec x_;
};

inline double dot(const UnitVector& a, const UnitVector& b) { return dot(a.vec(), b.vec()); }

// A vector in the tangent plane at `base`.
class TangentVector {
 public:
  static constexpr double kTangencyTol = 1e-10;

  TangentVector(UnitVector base, Vec direction) : base_(std::move(base)), dir_(std::move(direction)) {
    if (dir_.size() != base_.dim()) throw DimensionError("TangentVector: dimension mismatch");
    const double off = dot(base_.vec(), dir_);
    if (std::abs(off) > kTangencyTol * std::max(1.0, norm(dir_))) {
      throw DomainError("TangentVector: direction not tangent (base . u = " + std::to_string(off) + ")");
    }
  }

  // Orthogonal projection of an arbitrary vector onto the tangent plane.
  static TangentVector project(const UnitVector& base, const Vec& v) {
    Vec u = v;
    axpy(-dot(base.vec(), v), base.vec(), u);
    return TangentVector(base, std::move(u));
  }

  static TangentVector zero(const UnitVector& base) { return TangentVector(base, Vec(base.dim())); }

  const UnitVector& base() const noexcept { return base_; }
  const Vec& direction() const noexcept { return dir_; }
  double length() const { return norm(dir_); }

 private:
  UnitVector base_;
  Vec dir_;
};

// Angle between two points, arccos of the clamped dot product.
// Half-chord form keeps full precision near 0 and pi.
inline double stable_angle(const Vec& a, const Vec& b) {
  double dm = 0.0, dp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dm += (a[i] - b[i]) * (a[i] - b[i]);
    dp += (a[i] + b[i]) * (a[i] + b[i]);
  }
  return 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
}

inline double geodesic_distance(const UnitVector& p, const UnitVector& x) {
  if (p.dim() != x.dim()) throw DimensionError("geodesic_distance: dimension mismatch");
  return stable_angle(p.vec(), x.vec());
}

// Below this angle theta/sin(theta) is replaced by its Taylor expansion.
inline constexpr double kLogMapTaylorThreshold = 1e-4;
// log_map refuses points closer than this to the antipode.
inline constexpr double kAntipodeMargin = 1e-6;

inline TangentVector log_map(const UnitVector& mu, const UnitVector& x) {
  if (mu.dim() != x.dim()) throw DimensionError("log_map: dimension mismatch");
  const double c = std::clamp(dot(mu, x), -1.0, 1.0);
  const double theta = stable_angle(mu.vec(), x.vec());
  if (theta >= M_PI - kAntipodeMargin) {
    throw DomainError("log_map: point is antipodal to the base (angle " + std::to_string(theta) + " rad)");
  }
  Vec perp = x.vec();
  axpy(-c, mu.vec(), perp);
  if (theta < kLogMapTaylorThreshold) {
    perp *= 1.0 + theta * theta / 6.0;
  } else {
    // Scale the projection to length theta exactly.
    perp *= theta / norm(perp);
  }
  // Remove the rounding residue along mu.
  axpy(-dot(mu.vec(), perp), mu.vec(), perp);
  return TangentVector(mu, std::move(perp));
}

inline UnitVector exp_map(const UnitVector& mu, const TangentVector& u) {
  if (u.base().dim() != mu.dim()) throw DimensionError("exp_map: dimension mismatch");
  double mismatch = 0.0;
  for (std::size_t i = 0; i < mu.dim(); ++i) mismatch = std::max(mismatch, std::abs(mu[i] - u.base()[i]));
  if (mismatch > 1e-12) {
    throw DomainError("exp_map: tangent vector is based at a different point (max diff " +
                      std::to_string(mismatch) + ")");
  }
  const double n = u.length();
  if (n >= M_PI) throw DomainError("exp_map: tangent length " + std::to_string(n) + " reaches the cut locus");
  if (n == 0.0) return mu;
  Vec out = std::cos(n) * mu.vec();
  axpy(std::sin(n) / n, u.direction(), out);
  return UnitVector(std::move(out));
}

// Point at fraction t along the minimizing geodesic from a to b.
inline UnitVector slerp(const UnitVector& a, const UnitVector& b, double t) {
  const double omega = geodesic_distance(a, b);
  if (omega == 0.0) return a;
  const double s = std::sin(omega);
  Vec out = (std::sin((1.0 - t) * omega) / s) * a.vec();
  axpy(std::sin(t * omega) / s, b.vec(), out);
  return UnitVector(std::move(out));
}

// Normalized arithmetic mean. Good for concentrated sets; raises on a
// (near) balanced set whose mean vanishes.
inline UnitVector frechet_mean_approx(std::span<const UnitVector> points) {
  if (points.empty()) throw InsufficientDataError("frechet_mean_approx: empty point set");
  Vec sum(points.front().dim());
  for (const auto& p : points) sum += p.vec();
  const double mean_norm = norm(sum) / static_cast<double>(points.size());
  if (mean_norm <= 1e-9) {
    throw DegeneracyError("frechet_mean_approx: arithmetic mean vanishes (norm " + std::to_string(mean_norm) +
                          "); the set is balanced");
  }
  return UnitVector(std::move(sum));
}

// Sum of squared geodesic distances, the quantity the Frechet mean minimizes.
inline double frechet_objective(const UnitVector& p, std::span<const UnitVector> points) {
  double s = 0.0;
  for (const auto& x : points) {
    const double d = geodesic_distance(p, x);
    s += d * d;
  }
  return s;
}

inline Vec mean_log(const UnitVector& mu, std::span<const UnitVector> points) {
  Vec m(mu.dim());
  for (const auto& x : points) m += log_map(mu, x).direction();
  m *= 1.0 / static_cast<double>(points.size());
  return m;
}

struct FrechetOptions {
  double tol = 1e-10;
  std::size_t max_iter = 200;
};

struct FrechetResult {
  UnitVector mean;
  std::size_t iterations = 0;  // residual evaluations performed
  double residual = 0.0;       // norm of the mean log vector at `mean`
};

// Riemannian gradient descent with unit step: mu <- exp_mu(mean_i log_mu(x_i)).
// Requires the points to lie in an open hemisphere around the answer.
inline FrechetResult frechet_mean_iterative(std::span<const UnitVector> points, const UnitVector& init,
                                            const FrechetOptions& opt = {}) {
  if (points.empty()) throw InsufficientDataError("frechet_mean_iterative: empty point set");
  UnitVector mu = init;
  double residual = 0.0;
  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    Vec step = mean_log(mu, points);
    residual = norm(step);
    if (residual < opt.tol) return {mu, it, residual};
    mu = exp_map(mu, TangentVector::project(mu, step));
  }
  throw ConvergenceError("frechet_mean_iterative: no convergence after " + std::to_string(opt.max_iter) +
                             " iterations (residual " + std::to_string(residual) + ")",
                         residual);
}

inline FrechetResult frechet_mean_iterative(std::span<const UnitVector> points, const FrechetOptions& opt = {}) {
  return frechet_mean_iterative(points, frechet_mean_approx(points), opt);
}

}  // namespace area
