#pragma once

// Inference-time task selection: cosine transport cost, log-domain entropic
// Sinkhorn, Boltzmann routing over tasks, mixture-of-experts prediction, a
// point-to-point cosine routing baseline and an empirical Lipschitz check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "area/errors.hpp"
#include "area/expert.hpp"
#include "area/hypersphere.hpp"
#include "area/linalg.hpp"
#include "area/pga.hpp"

namespace area {

struct DiscreteMeasure {
  std::vector<UnitVector> atoms;
  Vec weights;

  static DiscreteMeasure dirac(UnitVector x) { return {{std::move(x)}, Vec{1.0}}; }

  static DiscreteMeasure uniform(std::vector<UnitVector> atoms) {
    if (atoms.empty()) throw InsufficientDataError("DiscreteMeasure: no atoms");
    const std::size_t n = atoms.size();
    return {std::move(atoms), Vec(n, 1.0 / static_cast<double>(n))};
  }

  std::size_t size() const noexcept { return atoms.size(); }
  std::size_t dim() const { return atoms.front().dim(); }

  void validate() const {
    if (atoms.empty()) throw InsufficientDataError("DiscreteMeasure: no atoms");
    if (weights.size() != atoms.size()) throw DimensionError("DiscreteMeasure: weights/atoms length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      if (atoms[i].dim() != atoms.front().dim()) throw DimensionError("DiscreteMeasure: ragged atom dimensions");
      if (!(weights[i] >= 0.0)) throw DomainError("DiscreteMeasure: negative weight");
      s += weights[i];
    }
    if (std::abs(s - 1.0) > 1e-12) throw DomainError("DiscreteMeasure: weights sum to " + std::to_string(s));
  }
};

struct TransportPlan {
  Mat pi;
};

struct RoutingDistribution {
  Vec probs;

  std::size_t size() const noexcept { return probs.size(); }

  // Most probable task index; lowest index on ties.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    return best;
  }
};

struct OtParams {
  double epsilon = 0.1;
  double tau_route = 0.05;
  std::size_t max_iter = 20000;
  double marginal_tol = 1e-9;
  // Report W + eps * H(target) instead of W, removing the task-size bias of
  // the target entropy.
  bool subtract_target_entropy = false;

  void validate() const {
    if (!(epsilon > 0.0) || !(tau_route > 0.0) || !(marginal_tol > 0.0) || max_iter == 0) {
      throw ConfigError("OT parameters must be positive");
    }
  }
};

// C_ij = 1 - <a_i, b_j>, clamped to [0, 2].
inline Mat cost_matrix(const DiscreteMeasure& src, const DiscreteMeasure& tgt) {
  if (src.dim() != tgt.dim()) {
    throw DimensionError("cost_matrix: source dim " + std::to_string(src.dim()) + " vs target dim " +
                         std::to_string(tgt.dim()));
  }
  Mat c(src.size(), tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    for (std::size_t j = 0; j < tgt.size(); ++j) c(i, j) = std::clamp(1.0 - dot(src.atoms[i], tgt.atoms[j]), 0.0, 2.0);
  return c;
}

// -sum p log p with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

struct SinkhornResult {
  double cost = 0.0;  // <pi, C> - eps H(pi)
  TransportPlan plan;
  std::size_t iterations = 0;
  double violation = 0.0;  // L1 row-marginal violation at exit
};

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Log-domain Sinkhorn iterations on the dual potentials f, g with
// pi_ij = exp((f_i + g_j - C_ij) / eps). Column marginals are exact after
// each g-update; the loop stops once the row marginals are within
// marginal_tol in L1.
inline SinkhornResult sinkhorn(const DiscreteMeasure& src, const DiscreteMeasure& tgt, const OtParams& p = {}) {
  src.validate();
  tgt.validate();
  p.validate();
  const Mat c = cost_matrix(src, tgt);
  const std::size_t m = src.size();
  const std::size_t n = tgt.size();
  const double eps = p.epsilon;
  const double ninf = -std::numeric_limits<double>::infinity();

  std::vector<double> log_a(m), log_b(n);
  for (std::size_t i = 0; i < m; ++i) log_a[i] = src.weights[i] > 0.0 ? std::log(src.weights[i]) : ninf;
  for (std::size_t j = 0; j < n; ++j) log_b[j] = tgt.weights[j] > 0.0 ? std::log(tgt.weights[j]) : ninf;

  std::vector<double> f(m, 0.0), g(n, 0.0), buf(std::max(m, n));
  auto plan_entry = [&](std::size_t i, std::size_t j) {
    if (log_a[i] == ninf || log_b[j] == ninf) return 0.0;
    return std::exp((f[i] + g[j] - c(i, j)) / eps);
  };

  SinkhornResult out;
  for (std::size_t it = 1; it <= p.max_iter; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      if (log_a[i] == ninf) continue;
      std::size_t k = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (log_b[j] != ninf) buf[k++] = (g[j] - c(i, j)) / eps;
      f[i] = eps * (log_a[i] - detail::log_sum_exp({buf.data(), k}));
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (log_b[j] == ninf) continue;
      std::size_t k = 0;
      for (std::size_t i = 0; i < m; ++i)
        if (log_a[i] != ninf) buf[k++] = (f[i] - c(i, j)) / eps;
      g[j] = eps * (log_b[j] - detail::log_sum_exp({buf.data(), k}));
    }
    double viol = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) row += plan_entry(i, j);
      viol += std::abs(row - src.weights[i]);
    }
    out.iterations = it;
    out.violation = viol;
    if (viol < p.marginal_tol) break;
  }
  if (!(out.violation < p.marginal_tol)) {
    throw ConvergenceError("sinkhorn: marginal violation " + std::to_string(out.violation) + " after " +
                               std::to_string(p.max_iter) + " iterations",
                           out.violation);
  }

  out.plan.pi = Mat(m, n);
  double linear = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double pij = plan_entry(i, j);
      out.plan.pi(i, j) = pij;
      linear += pij * c(i, j);
    }
  out.cost = linear - eps * entropy(out.plan.pi.values());
  return out;
}

// W_b(query) for each task measure.
inline Vec transport_costs(const UnitVector& query, std::span<const DiscreteMeasure> tasks, const OtParams& p = {}) {
  if (tasks.empty()) throw InsufficientDataError("routing: no tasks");
  const DiscreteMeasure src = DiscreteMeasure::dirac(query);
  Vec w(tasks.size());
  for (std::size_t b = 0; b < tasks.size(); ++b) {
    w[b] = sinkhorn(src, tasks[b], p).cost;
    if (p.subtract_target_entropy) w[b] += p.epsilon * entropy(tasks[b].weights.values());
  }
  return w;
}

// softmax(-cost / tau)
inline RoutingDistribution boltzmann(const Vec& cost, double tau) {
  if (cost.empty()) throw InsufficientDataError("routing: no tasks");
  if (!(tau > 0.0)) throw DomainError("routing: tau must be positive");
  const double lo = *std::min_element(cost.begin(), cost.end());
  Vec p(cost.size());
  double z = 0.0;
  for (std::size_t b = 0; b < cost.size(); ++b) {
    p[b] = std::exp(-(cost[b] - lo) / tau);
    z += p[b];
  }
  p *= 1.0 / z;
  return {std::move(p)};
}

inline RoutingDistribution routing_probs(const UnitVector& query, std::span<const DiscreteMeasure> tasks,
                                         const OtParams& p = {}) {
  return boltzmann(transport_costs(query, tasks, p), p.tau_route);
}

// Point-to-point baseline: cost_b = 1 - max_j <query, atom_j>.
inline RoutingDistribution cosine_route(const UnitVector& query, std::span<const DiscreteMeasure> tasks,
                                        const OtParams& p = {}) {
  if (tasks.empty()) throw InsufficientDataError("routing: no tasks");
  Vec cost(tasks.size());
  for (std::size_t b = 0; b < tasks.size(); ++b) {
    double best = -1.0;
    for (const auto& a : tasks[b].atoms) {
      if (a.dim() != query.dim()) throw DimensionError("cosine_route: dimension mismatch");
      best = std::max(best, dot(query, a));
    }
    cost[b] = 1.0 - best;
  }
  return boltzmann(cost, p.tau_route);
}

inline RoutingDistribution uniform_route(std::size_t tasks) {
  if (tasks == 0) throw InsufficientDataError("routing: no tasks");
  return {Vec(tasks, 1.0 / static_cast<double>(tasks))};
}

// All mass on the cheapest task (lowest index on ties).
inline RoutingDistribution hard_route(const RoutingDistribution& soft) {
  Vec p(soft.size());
  p[soft.argmax()] = 1.0;
  return {std::move(p)};
}

enum class AtomMode : std::uint8_t {
  // exp_mu(+-sqrt(lambda_k) v_k): the points one principal standard
  // deviation along each anchored direction, plus their mirror images.
  AttributePoints = 0,
  // The raw basis columns v_k normalized as points on the sphere.
  BasisVectors = 1,
};

// Target measure of one task over the visual anchors of its classes, with
// uniform weights.
inline DiscreteMeasure task_measure(std::span<const ClassAnchor* const> anchors,
                                    AtomMode mode = AtomMode::AttributePoints) {
  if (anchors.empty()) throw InsufficientDataError("task_measure: task has no classes");
  std::vector<UnitVector> atoms;
  for (const ClassAnchor* a : anchors) {
    for (std::size_t k = 0; k < a->rank(); ++k) {
      const Vec v = a->basis_vis.col(k);
      if (mode == AtomMode::BasisVectors) {
        atoms.emplace_back(v);
        continue;
      }
      const double r = std::sqrt(std::max(0.0, a->eigvals_vis[k]));
      for (double s : {r, -r}) {
        atoms.push_back(exp_map(a->mu_vis, TangentVector::project(a->mu_vis, s * v)));
      }
    }
  }
  return DiscreteMeasure::uniform(std::move(atoms));
}

// Largest |W(z) - W(z')| / d(z, z') over random z and z' = exp_z(t * delta)
// with delta a random unit tangent direction.
inline double lipschitz_check(const DiscreteMeasure& task, std::size_t trials, std::span<const double> steps,
                              SeededRng& rng, const OtParams& p = {}) {
  if (trials == 0) throw DomainError("lipschitz_check: trials must be >= 1");
  if (steps.empty()) throw DomainError("lipschitz_check: no step sizes");
  const std::size_t d = task.dim();
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const UnitVector z(gaussian_vec(rng, d));
    const TangentVector dir = TangentVector::project(z, gaussian_vec(rng, d));
    const Vec unit = (1.0 / dir.length()) * dir.direction();
    const double w0 = sinkhorn(DiscreteMeasure::dirac(z), task, p).cost;
    for (double t : steps) {
      const UnitVector z2 = exp_map(z, TangentVector(z, t * unit));
      const double dist = geodesic_distance(z, z2);
      if (dist == 0.0) continue;
      const double w1 = sinkhorn(DiscreteMeasure::dirac(z2), task, p).cost;
      worst = std::max(worst, std::abs(w1 - w0) / dist);
    }
  }
  return worst;
}

// One candidate class for mixture prediction: its frozen anchor and the
// prompt-only textual direction.
struct ScoringClass {
  std::uint32_t class_id = 0;
  const ClassAnchor* anchor = nullptr;
  UnitVector text;
};

struct ClassScores {
  std::vector<std::uint32_t> classes;  // ascending
  Vec scores;
  std::uint32_t label = 0;
};

// Experts and candidate classes with the query-independent textual
// embeddings E_t^b(c) precomputed.
class MixtureModel {
 public:
  MixtureModel(std::vector<const TaskExpert*> experts, std::vector<ScoringClass> classes)
      : experts_(std::move(experts)), classes_(std::move(classes)) {
    if (experts_.empty()) throw InsufficientDataError("mixture_predict: no experts");
    if (classes_.empty()) throw InsufficientDataError("mixture_predict: no candidate classes");
    std::sort(classes_.begin(), classes_.end(),
              [](const ScoringClass& a, const ScoringClass& b) { return a.class_id < b.class_id; });
    text_.resize(experts_.size());
    for (std::size_t b = 0; b < experts_.size(); ++b)
      for (const auto& c : classes_) text_[b].push_back(textual_embedding(*experts_[b], *c.anchor, c.text));
  }

  std::size_t num_experts() const noexcept { return experts_.size(); }
  const std::vector<ScoringClass>& classes() const noexcept { return classes_; }

  // Per-class score sum_b p_b cos(E_v^b(z; V_c), E_t^b(c)); argmax with the
  // lowest class id winning ties.
  ClassScores predict(const UnitVector& z_vis, const RoutingDistribution& routing) const {
    if (routing.size() != experts_.size()) {
      throw DimensionError("mixture_predict: routing over " + std::to_string(routing.size()) + " tasks, " +
                           std::to_string(experts_.size()) + " experts");
    }
    ClassScores out;
    out.scores = Vec(classes_.size());
    for (const auto& c : classes_) out.classes.push_back(c.class_id);
    for (std::size_t b = 0; b < experts_.size(); ++b) {
      const double pb = routing.probs[b];
      if (pb == 0.0) continue;
      const TaskExpert& e = *experts_[b];
      const Vec sz = e.s_vis * z_vis.vec();
      const Vec rz = e.r_vis * z_vis.vec();
      for (std::size_t c = 0; c < classes_.size(); ++c) {
        const Vec ev = rz + classes_[c].anchor->basis_vis * sz;
        out.scores[c] += pb * cosine(ev, text_[b][c]);
      }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes_.size(); ++c)
      if (out.scores[c] > out.scores[best]) best = c;
    out.label = classes_[best].class_id;
    return out;
  }

 private:
  std::vector<const TaskExpert*> experts_;
  std::vector<ScoringClass> classes_;
  std::vector<std::vector<Vec>> text_;
};

inline ClassScores mixture_predict(const UnitVector& z_vis, const MixtureModel& model,
                                   const RoutingDistribution& routing) {
  return model.predict(z_vis, routing);
}

}  // namespace area
