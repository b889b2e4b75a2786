#pragma once

// Self-checks run by `area verify`. Each suite compares the library against
// an independent computation and reports how many cases passed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "area/area.hpp"

namespace area::verify {

struct SuiteResult {
  std::string name;
  std::size_t passed = 0;
  std::size_t total = 0;
  double worst = 0.0;  // largest error statistic seen

  bool ok() const { return passed == total; }
};

inline Mat random_symmetric(std::size_t n, SeededRng& rng) {
  Mat a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = rng.normal();
  return a;
}

inline SuiteResult eig_suite(SeededRng& rng) {
  SuiteResult r{"eig", 0, 0, 0.0};
  for (std::size_t n : {2u, 4u, 8u, 16u, 32u}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Mat a = random_symmetric(n, rng);
      Eigen::MatrixXd ea(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ea(i, j) = a(i, j);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ea);
      const SymEig mine = sym_eig(a);
      const double scale = std::max(1.0, frobenius(a));
      double err = 0.0;
      for (std::size_t k = 0; k < n; ++k) err = std::max(err, std::abs(mine.values[k] - es.eigenvalues()(n - 1 - k)));
      for (std::size_t k = 0; k < n; ++k) {
        const Vec v = mine.vectors.col(k);
        Vec av = a * v;
        axpy(-mine.values[k], v, av);
        err = std::max(err, norm(av));
      }
      err /= scale;
      r.worst = std::max(r.worst, err);
      ++r.total;
      r.passed += err <= 1e-8;
    }
  }
  return r;
}

inline SuiteResult dirac_sinkhorn_suite(SeededRng& rng) {
  SuiteResult r{"sinkhorn_dirac", 0, 0, 0.0};
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t d = 2 + rng.uniform_index(31);
    const std::size_t n = 1 + rng.uniform_index(24);
    std::vector<UnitVector> atoms;
    Vec w(n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      atoms.emplace_back(gaussian_vec(rng, d));
      w[j] = rng.uniform(0.05, 1.0);
      s += w[j];
    }
    w *= 1.0 / s;
    const UnitVector z(gaussian_vec(rng, d));
    OtParams p;
    p.epsilon = rng.uniform(0.01, 1.0);
    const double got = sinkhorn(DiscreteMeasure::dirac(z), {atoms, w}, p).cost;
    double expect = 0.0, h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      expect += w[j] * (1.0 - std::inner_product(z.vec().begin(), z.vec().end(), atoms[j].vec().begin(), 0.0));
      h -= w[j] * std::log(w[j]);
    }
    expect -= p.epsilon * h;
    const double err = std::abs(got - expect);
    r.worst = std::max(r.worst, err);
    ++r.total;
    r.passed += err <= 1e-8;
  }
  return r;
}

inline SuiteResult frechet_suite(SeededRng& rng) {
  SuiteResult r{"frechet", 0, 0, 0.0};
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t d = rep % 2 ? 32 : 4;
    const UnitVector c(gaussian_vec(rng, d));
    std::vector<UnitVector> pts;
    for (int i = 0; i < 60; ++i) {
      Vec u = 0.15 * gaussian_vec(rng, d);
      pts.push_back(exp_map(c, TangentVector::project(c, u)));
    }
    const UnitVector mean = frechet_mean_iterative(pts).mean;
    const double best = frechet_objective(mean, pts);
    bool ok = true;
    for (int k = 0; k < 200; ++k) {
      const Vec u = rng.uniform(1e-4, 1e-2) * gaussian_vec(rng, d);
      const UnitVector q = exp_map(mean, TangentVector::project(mean, u));
      ok = ok && frechet_objective(q, pts) >= best;
    }
    r.worst = std::max(r.worst, geodesic_distance(mean, frechet_mean_approx(pts)));
    ++r.total;
    r.passed += ok;
  }
  return r;
}

struct GradCase {
  TaskExpert expert;
  std::vector<ClassAnchor> anchors;
  std::vector<Candidate> cands;
  std::vector<EncodedSample> batch;
  LossWeights weights;
};

inline Mat random_frame(std::size_t d, std::size_t k, SeededRng& rng) {
  Mat q(d, k);
  for (std::size_t j = 0; j < k; ++j) {
    Vec v = gaussian_vec(rng, d);
    for (std::size_t i = 0; i < j; ++i) {
      const Vec c = q.col(i);
      axpy(-dot(c, v), c, v);
    }
    q.set_col(j, (1.0 / norm(v)) * v);
  }
  return q;
}

inline GradCase random_grad_case(SeededRng& rng) {
  GradCase g;
  const std::size_t d = 3 + rng.uniform_index(6);
  const std::size_t k = 1 + rng.uniform_index(std::min<std::size_t>(3, d - 1));
  const std::size_t classes = 2 + rng.uniform_index(2);
  g.expert = TaskExpert::identity(0, d, k);
  for (double& x : g.expert.s_vis.values()) x = 0.5 * rng.normal();
  for (double& x : g.expert.s_txt.values()) x = 0.5 * rng.normal();
  for (double& x : g.expert.r_vis.values()) x += 0.3 * rng.normal();
  for (double& x : g.expert.r_txt.values()) x += 0.3 * rng.normal();
  for (std::size_t c = 0; c < classes; ++c) {
    ClassAnchor a;
    a.class_id = static_cast<std::uint32_t>(c);
    a.mu_vis = UnitVector(gaussian_vec(rng, d));
    a.mu_txt = UnitVector(gaussian_vec(rng, d));
    a.basis_vis = random_frame(d, k, rng);
    a.basis_txt = random_frame(d, k, rng);
    a.eigvals_vis = a.eigvals_txt = Vec(k, 1.0);
    g.anchors.push_back(std::move(a));
  }
  for (std::size_t c = 0; c < classes; ++c) g.cands.push_back({&g.anchors[c], UnitVector(gaussian_vec(rng, d))});
  const std::size_t n = 1 + rng.uniform_index(3);
  const std::size_t views = 2 + rng.uniform_index(2);
  for (std::size_t i = 0; i < n; ++i) {
    EncodedSample s;
    s.target = rng.uniform_index(classes);
    s.z_vis = UnitVector(gaussian_vec(rng, d));
    s.z_txt = UnitVector(gaussian_vec(rng, d));
    s.occ_vis = UnitVector(gaussian_vec(rng, d));
    s.occ_txt = UnitVector(gaussian_vec(rng, d));
    for (std::size_t m = 0; m < views; ++m) {
      s.view_vis.emplace_back(gaussian_vec(rng, d));
      s.view_txt.emplace_back(gaussian_vec(rng, d));
    }
    g.batch.push_back(std::move(s));
  }
  g.weights = {rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.05, 0.5)};
  return g;
}

// Relative error of the worst block of one term's gradient against central
// differences with h = 1e-5.
inline double grad_case_error(GradCase& g, int term) {
  const auto analytic = loss_gradients(g.expert, g.batch, g.cands, g.weights);
  const ExpertGrad& ga = term == 0 ? analytic.g_int : term == 1 ? analytic.g_comp : analytic.g_cont;
  auto value = [&](const TaskExpert& e) {
    const auto v = batch_objective(e, g.batch, g.cands, g.weights);
    return term == 0 ? v.l_int : term == 1 ? v.l_comp : v.l_cont;
  };
  constexpr double h = 1e-5;
  double worst = 0.0;
  auto block = [&](Mat TaskExpert::*param, const Mat& grad) {
    Mat fd(grad.rows(), grad.cols());
    TaskExpert e = g.expert;
    for (std::size_t i = 0; i < fd.values().size(); ++i) {
      const double orig = (e.*param).values()[i];
      (e.*param).values()[i] = orig + h;
      const double up = value(e);
      (e.*param).values()[i] = orig - h;
      const double dn = value(e);
      (e.*param).values()[i] = orig;
      fd.values()[i] = (up - dn) / (2.0 * h);
    }
    const double na = frobenius(grad), nf = frobenius(fd);
    if (na < 1e-8 && nf < 1e-8) return;
    worst = std::max(worst, frobenius(grad - fd) / std::max(na, nf));
  };
  block(&TaskExpert::s_vis, ga.s_vis);
  block(&TaskExpert::r_vis, ga.r_vis);
  block(&TaskExpert::s_txt, ga.s_txt);
  block(&TaskExpert::r_txt, ga.r_txt);
  return worst;
}

inline SuiteResult gradient_suite(SeededRng& rng) {
  SuiteResult r{"gradients", 0, 0, 0.0};
  for (int term = 0; term < 3; ++term) {
    for (int rep = 0; rep < 30; ++rep) {
      GradCase g = random_grad_case(rng);
      const double err = grad_case_error(g, term);
      r.worst = std::max(r.worst, err);
      ++r.total;
      r.passed += err < 1e-4;
    }
  }
  return r;
}

inline SuiteResult lipschitz_suite(SeededRng& rng) {
  SuiteResult r{"lipschitz", 0, 0, 0.0};
  const double steps[] = {1e-3, 1e-2};
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<UnitVector> atoms;
    const std::size_t n = 4 + rng.uniform_index(60);
    for (std::size_t j = 0; j < n; ++j) atoms.emplace_back(gaussian_vec(rng, 32));
    const double ratio = lipschitz_check(DiscreteMeasure::uniform(std::move(atoms)), 100, steps, rng);
    r.worst = std::max(r.worst, ratio);
    ++r.total;
    r.passed += ratio <= 1.0 + 1e-6;
  }
  return r;
}

inline std::vector<SuiteResult> run_all(std::uint64_t seed) {
  SeededRng root(seed);
  std::vector<SuiteResult> out;
  std::vector<std::function<SuiteResult(SeededRng&)>> suites = {eig_suite, dirac_sinkhorn_suite, frechet_suite,
                                                                gradient_suite, lipschitz_suite};
  for (std::size_t i = 0; i < suites.size(); ++i) {
    SeededRng rng = root.fork(i);
    out.push_back(suites[i](rng));
  }
  return out;
}

}  // namespace area::verify
