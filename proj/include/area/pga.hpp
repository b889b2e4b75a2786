#pragma once

// Per-class attribute anchors: a Frechet mean plus the leading principal
// geodesic directions, for the visual and the textual modality. Also the
// Euclidean PCA variant used as an ablation baseline.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "area/digest.hpp"
#include "area/errors.hpp"
#include "area/hypersphere.hpp"
#include "area/linalg.hpp"

namespace area {

enum class AnchorMethod : std::uint8_t { PGA = 0, PCA = 1 };
enum class MeanMode : std::uint8_t { Approx = 0, Iterative = 1 };

inline const char* to_string(AnchorMethod m) { return m == AnchorMethod::PGA ? "pga" : "pca"; }

struct ClassAnchor {
  std::uint32_t class_id = 0;
  UnitVector mu_vis;
  Mat basis_vis;  // d x K, orthonormal columns
  Vec eigvals_vis;
  UnitVector mu_txt;
  Mat basis_txt;
  Vec eigvals_txt;
  AnchorMethod method = AnchorMethod::PGA;

  std::size_t dim() const noexcept { return mu_vis.dim(); }
  std::size_t rank() const noexcept { return basis_vis.cols(); }

  bool operator==(const ClassAnchor&) const = default;
};

// Canonical digest of one anchor: binary64 little-endian of
// mu_vis, basis_vis (row-major), eigvals_vis, mu_txt, basis_txt, eigvals_txt.
inline void hash_anchor(Fnv1a64& h, const ClassAnchor& a) {
  h.vec(a.mu_vis.vec());
  h.mat(a.basis_vis);
  h.vec(a.eigvals_vis);
  h.vec(a.mu_txt.vec());
  h.mat(a.basis_txt);
  h.vec(a.eigvals_txt);
}

// C = (1/n) sum_i log_mu(x_i) log_mu(x_i)^T
inline Mat tangent_covariance(const UnitVector& mu, std::span<const UnitVector> points) {
  if (points.empty()) throw InsufficientDataError("tangent_covariance: empty point set");
  const std::size_t d = mu.dim();
  Mat c(d, d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    Vec u;
    try {
      u = log_map(mu, points[i]).direction();
    } catch (const DomainError& e) {
      throw DomainError("tangent_covariance: sample " + std::to_string(i) + ": " + e.what());
    }
    c.add_outer(1.0, u, u);
  }
  c *= 1.0 / static_cast<double>(points.size());
  return c;
}

// Euclidean mean-centred covariance around the arithmetic mean.
inline Mat euclidean_covariance(std::span<const UnitVector> points) {
  if (points.empty()) throw InsufficientDataError("euclidean_covariance: empty point set");
  const std::size_t d = points.front().dim();
  Vec m(d);
  for (const auto& p : points) m += p.vec();
  m *= 1.0 / static_cast<double>(points.size());
  Mat c(d, d);
  for (const auto& p : points) {
    const Vec r = p.vec() - m;
    c.add_outer(1.0, r, r);
  }
  c *= 1.0 / static_cast<double>(points.size());
  return c;
}

struct PrincipalBasis {
  Mat basis;    // d x K
  Vec eigvals;  // length K, descending, >= 0
};

// Top-K eigenpairs of a symmetric PSD matrix. Rounding-level negative
// eigenvalues are reported as zero.
inline PrincipalBasis principal_basis(const Mat& c, std::size_t k) {
  if (!c.square()) throw DimensionError("principal_basis: covariance must be square");
  if (k == 0 || k > c.rows()) {
    throw DimensionError("principal_basis: K=" + std::to_string(k) + " outside [1, " + std::to_string(c.rows()) +
                         "]");
  }
  const SymEig eig = sym_eig(c);
  PrincipalBasis out{Mat(c.rows(), k), Vec(k)};
  for (std::size_t j = 0; j < k; ++j) {
    out.eigvals[j] = std::max(0.0, eig.values[j]);
    for (std::size_t r = 0; r < c.rows(); ++r) out.basis(r, j) = eig.vectors(r, j);
  }
  return out;
}

// Top-K basis restricted to the tangent plane at mu. The tangent covariance
// has mu in its kernel; shifting that direction to -1 keeps zero-variance
// columns tangent too, without changing any other eigenpair.
inline PrincipalBasis principal_tangent_basis(const Mat& c, const UnitVector& mu, std::size_t k) {
  if (k >= c.rows()) {
    throw DimensionError("principal_tangent_basis: K=" + std::to_string(k) + " must be below d=" +
                         std::to_string(c.rows()));
  }
  Mat shifted = c;
  shifted.add_outer(-1.0, mu.vec(), mu.vec());
  return principal_basis(shifted, k);
}

// Intrinsic mean of one modality. A balanced set (vanishing arithmetic mean)
// falls back to the first sample as the starting point of the iterative
// solver.
inline UnitVector class_mean(std::span<const UnitVector> points, MeanMode mode) {
  UnitVector init;
  bool degenerate = false;
  try {
    init = frechet_mean_approx(points);
  } catch (const DegeneracyError&) {
    init = points.front();
    degenerate = true;
  }
  if (mode == MeanMode::Approx && !degenerate) return init;
  return frechet_mean_iterative(points, init).mean;
}

namespace detail {

inline void check_anchor_inputs(std::span<const UnitVector> vis, std::span<const UnitVector> txt, std::size_t k) {
  if (vis.size() < 2 || txt.size() < 2) {
    throw InsufficientDataError("class anchor needs at least 2 samples per modality (got " +
                                std::to_string(vis.size()) + " visual, " + std::to_string(txt.size()) +
                                " textual)");
  }
  if (k == 0) throw DimensionError("class anchor: K must be positive");
  for (const auto& p : vis)
    if (p.dim() != vis.front().dim()) throw DimensionError("class anchor: ragged visual dimensions");
  for (const auto& p : txt)
    if (p.dim() != txt.front().dim()) throw DimensionError("class anchor: ragged textual dimensions");
}

}  // namespace detail

inline ClassAnchor build_class_anchor(std::span<const UnitVector> vis, std::span<const UnitVector> txt,
                                      std::uint32_t class_id, std::size_t k, MeanMode mode = MeanMode::Approx) {
  detail::check_anchor_inputs(vis, txt, k);
  ClassAnchor a;
  a.class_id = class_id;
  a.method = AnchorMethod::PGA;

  a.mu_vis = class_mean(vis, mode);
  auto pv = principal_tangent_basis(tangent_covariance(a.mu_vis, vis), a.mu_vis, k);
  a.basis_vis = std::move(pv.basis);
  a.eigvals_vis = std::move(pv.eigvals);

  a.mu_txt = class_mean(txt, mode);
  auto pt = principal_tangent_basis(tangent_covariance(a.mu_txt, txt), a.mu_txt, k);
  a.basis_txt = std::move(pt.basis);
  a.eigvals_txt = std::move(pt.eigvals);
  return a;
}

inline ClassAnchor build_class_anchor_pca(std::span<const UnitVector> vis, std::span<const UnitVector> txt,
                                          std::uint32_t class_id, std::size_t k) {
  detail::check_anchor_inputs(vis, txt, k);
  auto mean_of = [](std::span<const UnitVector> pts) {
    try {
      return frechet_mean_approx(pts);
    } catch (const DegeneracyError&) {
      return pts.front();
    }
  };
  ClassAnchor a;
  a.class_id = class_id;
  a.method = AnchorMethod::PCA;

  a.mu_vis = mean_of(vis);
  auto pv = principal_basis(euclidean_covariance(vis), k);
  a.basis_vis = std::move(pv.basis);
  a.eigvals_vis = std::move(pv.eigvals);

  a.mu_txt = mean_of(txt);
  auto pt = principal_basis(euclidean_covariance(txt), k);
  a.basis_txt = std::move(pt.basis);
  a.eigvals_txt = std::move(pt.eigvals);
  return a;
}

// Anchors grouped by task. Class sets are disjoint across tasks, and a
// frozen task accepts no further writes.
class AnchorStore {
 public:
  void add(std::uint32_t task_id, ClassAnchor anchor) {
    const std::uint32_t cls = anchor.class_id;
    if (auto it = class_task_.find(cls); it != class_task_.end()) {
      if (frozen(it->second)) {
        throw ImmutabilityError("class " + std::to_string(cls) + " belongs to frozen task " +
                                std::to_string(it->second));
      }
      if (it->second != task_id) {
        throw DomainError("class " + std::to_string(cls) + " already belongs to task " + std::to_string(it->second));
      }
    }
    if (frozen(task_id)) {
      throw ImmutabilityError("task " + std::to_string(task_id) + " is frozen; cannot add class " +
                              std::to_string(cls));
    }
    class_task_[cls] = task_id;
    tasks_[task_id].insert(cls);
    anchors_.insert_or_assign(cls, std::move(anchor));
  }

  std::uint64_t freeze_task(std::uint32_t task_id) {
    if (!tasks_.contains(task_id)) throw DomainError("freeze_task: unknown task " + std::to_string(task_id));
    const std::uint64_t d = digest(task_id);
    if (auto it = digests_.find(task_id); it != digests_.end() && it->second != d) {
      throw ImmutabilityError("task " + std::to_string(task_id) + " anchors changed after freezing");
    }
    digests_[task_id] = d;
    return d;
  }

  // Recomputed from the current anchors, in ascending class order.
  std::uint64_t digest(std::uint32_t task_id) const {
    Fnv1a64 h;
    for (std::uint32_t cls : classes(task_id)) hash_anchor(h, anchors_.at(cls));
    return h.value();
  }

  bool frozen(std::uint32_t task_id) const { return digests_.contains(task_id); }

  std::uint64_t recorded_digest(std::uint32_t task_id) const {
    auto it = digests_.find(task_id);
    if (it == digests_.end()) throw DomainError("task " + std::to_string(task_id) + " is not frozen");
    return it->second;
  }

  const ClassAnchor& anchor(std::uint32_t class_id) const {
    auto it = anchors_.find(class_id);
    if (it == anchors_.end()) throw DomainError("no anchor for class " + std::to_string(class_id));
    return it->second;
  }

  bool contains(std::uint32_t class_id) const { return anchors_.contains(class_id); }

  std::vector<std::uint32_t> classes(std::uint32_t task_id) const {
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw DomainError("unknown task " + std::to_string(task_id));
    return {it->second.begin(), it->second.end()};
  }

  std::vector<std::uint32_t> tasks() const {
    std::vector<std::uint32_t> out;
    for (const auto& [t, _] : tasks_) out.push_back(t);
    return out;
  }

  std::vector<std::uint32_t> all_classes() const {
    std::vector<std::uint32_t> out;
    for (const auto& [c, _] : anchors_) out.push_back(c);
    return out;
  }

  std::uint32_t task_of(std::uint32_t class_id) const {
    auto it = class_task_.find(class_id);
    if (it == class_task_.end()) throw DomainError("unknown class " + std::to_string(class_id));
    return it->second;
  }

  const std::map<std::uint32_t, std::uint64_t>& recorded_digests() const noexcept { return digests_; }

  // Restores a frozen digest when deserializing.
  void restore_digest(std::uint32_t task_id, std::uint64_t d) { digests_[task_id] = d; }

  bool operator==(const AnchorStore&) const = default;

 private:
  std::map<std::uint32_t, ClassAnchor> anchors_;
  std::map<std::uint32_t, std::set<std::uint32_t>> tasks_;
  std::map<std::uint32_t, std::uint32_t> class_task_;
  std::map<std::uint32_t, std::uint64_t> digests_;
};

}  // namespace area
