#pragma once

// Synthetic task streams with controllable class geometry.
//
// Class means are placed by rejection sampling around a random pole so that
// every pair is at least min_class_angle apart. Samples are exp_map(mean, u)
// with u a tangent Gaussian of RMS length spread_sigma whose variance is
// concentrated on a few class-specific attribute directions. Raw features are
// stored at scale sqrt(d_in) (unit per-coordinate variance) and rounded to
// binary32 so that the file round trip is exact.

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "area/config.hpp"
#include "area/errors.hpp"
#include "area/hypersphere.hpp"
#include "area/linalg.hpp"
#include "area/stream.hpp"

namespace area {

struct SyntheticData {
  TaskStream train;
  TaskStream test;
  std::map<std::uint32_t, Vec> prompts;  // class id -> raw prompt features
  std::vector<UnitVector> class_means;   // indexed by class id

  bool operator==(const SyntheticData&) const = default;
};

inline constexpr std::size_t kMaxPlacementAttempts = 100000;
inline constexpr std::size_t kAttributeDirections = 8;
inline constexpr double kAttributeShare = 0.8;
inline constexpr double kCaptionNoise = 0.1;
inline constexpr double kTestFraction = 0.2;

inline double to_binary32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline Vec to_binary32(Vec v) {
  for (double& x : v) x = to_binary32(x);
  return v;
}

namespace detail {

// Tangent Gaussian at p with E|u|^2 = r^2.
inline Vec tangent_gaussian(const UnitVector& p, double r, SeededRng& rng) {
  const std::size_t n = p.dim();
  TangentVector u = TangentVector::project(p, gaussian_vec(rng, n));
  return (r / std::sqrt(static_cast<double>(n - 1))) * u.direction();
}

// Orthonormal tangent directions at p by Gram-Schmidt on Gaussian draws.
inline std::vector<Vec> tangent_frame(const UnitVector& p, std::size_t count, SeededRng& rng) {
  std::vector<Vec> frame;
  while (frame.size() < count) {
    Vec v = gaussian_vec(rng, p.dim());
    axpy(-dot(p.vec(), v), p.vec(), v);
    for (const auto& f : frame) axpy(-dot(f, v), f, v);
    const double n = norm(v);
    if (n < 1e-8) continue;
    frame.push_back((1.0 / n) * v);
  }
  return frame;
}

}  // namespace detail

inline std::vector<UnitVector> place_class_means(std::size_t count, std::size_t d_in, double min_angle,
                                                 SeededRng& rng) {
  const UnitVector pole(gaussian_vec(rng, d_in));
  std::vector<UnitVector> means;
  std::size_t attempts = 0;
  while (means.size() < count) {
    if (++attempts > kMaxPlacementAttempts) {
      throw GeometryError("could not place " + std::to_string(count) + " class means at pairwise angle >= " +
                          std::to_string(min_angle) + " in " + std::to_string(kMaxPlacementAttempts) +
                          " attempts; use a larger d_in or a smaller min_class_angle");
    }
    const Vec u = detail::tangent_gaussian(pole, min_angle, rng);
    if (norm(u) >= M_PI) continue;
    UnitVector cand = exp_map(pole, TangentVector::project(pole, u));
    bool ok = true;
    for (const auto& m : means) {
      if (geodesic_distance(m, cand) < min_angle) {
        ok = false;
        break;
      }
    }
    if (ok) means.push_back(std::move(cand));
  }
  return means;
}

inline SyntheticData gen_synthetic(const Config& cfg, SeededRng& rng) {
  cfg.validate();
  const std::size_t d_in = cfg.d_in;
  const std::size_t n_classes = cfg.B * cfg.classes_per_task;
  const double scale = std::sqrt(static_cast<double>(d_in));

  SeededRng geo = rng.fork(1);
  SyntheticData out;
  out.class_means = place_class_means(n_classes, d_in, cfg.min_class_angle, geo);

  std::vector<std::uint32_t> order(n_classes);
  std::iota(order.begin(), order.end(), 0u);
  SeededRng order_rng = rng.fork(2);
  shuffle(order, order_rng);

  const std::size_t n_attr = std::min(kAttributeDirections, d_in - 1);
  double harmonic = 0.0;
  for (std::size_t k = 1; k <= n_attr; ++k) harmonic += 1.0 / static_cast<double>(k);

  const std::size_t n = cfg.samples_per_class;
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(kTestFraction * n)));

  for (std::uint32_t b = 0; b < cfg.B; ++b) {
    TaskData train{b, {}, {}};
    TaskData test{b, {}, {}};
    for (std::size_t j = 0; j < cfg.classes_per_task; ++j) train.classes.push_back(order[b * cfg.classes_per_task + j]);
    std::sort(train.classes.begin(), train.classes.end());
    test.classes = train.classes;

    for (std::uint32_t c : train.classes) {
      const UnitVector& mean = out.class_means[c];
      out.prompts[c] = to_binary32(scale * mean.vec());
      SeededRng crng = rng.fork(1000 + c);
      const auto frame = detail::tangent_frame(mean, n_attr, crng);
      for (std::size_t i = 0; i < n; ++i) {
        Vec u(d_in);
        for (std::size_t attempt = 0;; ++attempt) {
          if (attempt >= 1000) throw GeometryError("spread_sigma too large: tangent draws reach the cut locus");
          u = detail::tangent_gaussian(mean, cfg.spread_sigma * std::sqrt(1.0 - kAttributeShare), crng);
          for (std::size_t k = 0; k < n_attr; ++k) {
            const double sd = cfg.spread_sigma * std::sqrt(kAttributeShare / (harmonic * static_cast<double>(k + 1)));
            axpy(sd * crng.normal(), frame[k], u);
          }
          if (norm(u) < M_PI) break;
        }
        const UnitVector x = exp_map(mean, TangentVector::project(mean, u));
        RawSample s;
        s.label = c;
        s.task = b;
        s.features = to_binary32(scale * x.vec());
        Vec cap = s.features;
        for (double& v : cap) v += kCaptionNoise * crng.normal();
        s.caption = to_binary32(std::move(cap));
        (i < n - n_test ? train : test).samples.push_back(std::move(s));
      }
    }
    out.train.tasks.push_back(std::move(train));
    out.test.tasks.push_back(std::move(test));
  }
  return out;
}

inline SyntheticData gen_synthetic(const Config& cfg) {
  SeededRng rng(cfg.seed);
  return gen_synthetic(cfg, rng);
}

}  // namespace area
