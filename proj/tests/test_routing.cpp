#include <gtest/gtest.h>

#include <cmath>

#include "area/routing.hpp"
#include "oracles.hpp"
#include "verify_suites.hpp"

using namespace area;

namespace {

UnitVector e(std::size_t d, std::size_t i) { return UnitVector::basis(d, i); }

DiscreteMeasure random_measure(std::size_t n, std::size_t d, SeededRng& rng) {
  std::vector<UnitVector> atoms;
  Vec w(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    atoms.emplace_back(gaussian_vec(rng, d));
    w[i] = rng.uniform(0.1, 1.0);
    s += w[i];
  }
  w *= 1.0 / s;
  return {std::move(atoms), std::move(w)};
}

Eigen::MatrixXd eigen_cost(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  return oracle::to_eigen(cost_matrix(a, b));
}

// Orthonormal columns orthogonal to mu.
Mat tangent_frame(const UnitVector& mu, std::size_t k, SeededRng& rng) {
  const std::size_t d = mu.dim();
  std::vector<Vec> cols{mu.vec()};
  while (cols.size() < k + 1) {
    Vec v = gaussian_vec(rng, d);
    for (const Vec& q : cols) axpy(-dot(q, v), q, v);
    for (const Vec& q : cols) axpy(-dot(q, v), q, v);
    v *= 1.0 / norm(v);
    cols.push_back(std::move(v));
  }
  Mat m(d, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) m(i, j) = cols[j + 1][i];
  return m;
}

ClassAnchor anchor_with_basis(std::size_t d, std::size_t k, SeededRng& rng) {
  ClassAnchor a;
  a.mu_vis = a.mu_txt = UnitVector(gaussian_vec(rng, d));
  a.basis_vis = tangent_frame(a.mu_vis, k, rng);
  a.basis_txt = tangent_frame(a.mu_txt, k, rng);
  a.eigvals_vis = a.eigvals_txt = Vec(k, 0.1);
  return a;
}

TaskExpert random_expert(std::uint32_t id, std::size_t d, std::size_t k, SeededRng& rng) {
  TaskExpert x = TaskExpert::identity(id, d, k);
  for (Mat* m : {&x.s_vis, &x.r_vis, &x.s_txt, &x.r_txt})
    for (double& v : m->values()) v += 0.3 * rng.normal();
  return x;
}

}  // namespace

TEST(CostMatrix, Examples) {
  const auto a = DiscreteMeasure::dirac(e(3, 0));
  EXPECT_EQ(cost_matrix(a, a)(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(cost_matrix(a, DiscreteMeasure::dirac(e(3, 1)))(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(cost_matrix(a, DiscreteMeasure::dirac(-e(3, 0)))(0, 0), 2.0);
  EXPECT_THROW(cost_matrix(a, DiscreteMeasure::dirac(e(4, 0))), DimensionError);
}

TEST(Entropy, Examples) {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
  EXPECT_NEAR(entropy(uniform), std::log(4.0), 1e-15);
  const std::vector<double> point{1.0, 0.0};
  EXPECT_EQ(entropy(point), 0.0);
}

TEST(Sinkhorn, DiracSourceClosedForm) {
  SeededRng rng(1);
  const OtParams p;
  for (int i = 0; i < 200; ++i) {
    const auto tgt = random_measure(1 + rng.uniform_index(8), 6, rng);
    const UnitVector z(gaussian_vec(rng, 6));
    const auto r = sinkhorn(DiscreteMeasure::dirac(z), tgt, p);
    double expect = 0.0;
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      expect += tgt.weights[j] * (1.0 - dot(z, tgt.atoms[j])) + p.epsilon * tgt.weights[j] * std::log(tgt.weights[j]);
      EXPECT_NEAR(r.plan.pi(0, j), tgt.weights[j], 1e-12);
    }
    EXPECT_NEAR(r.cost, expect, 1e-8);
  }
}

TEST(Sinkhorn, TwoByTwoMatchesOneParameterSearch) {
  SeededRng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto src = random_measure(2, 4, rng);
    const auto tgt = random_measure(2, 4, rng);
    OtParams p;
    p.epsilon = rng.uniform(0.05, 0.5);
    const auto r = sinkhorn(src, tgt, p);
    const Eigen::Matrix2d c = eigen_cost(src, tgt);
    EXPECT_NEAR(r.cost, oracle::brute_force_ot_2x2(c, src.weights[0], tgt.weights[0], p.epsilon), 1e-6);
  }
}

TEST(Sinkhorn, ZeroCostGivesProductPlan) {
  const UnitVector x(Vec{0.3, 0.4, 0.5});
  DiscreteMeasure src{{x, x}, Vec{0.3, 0.7}};
  DiscreteMeasure tgt{{x, x, x}, Vec{0.2, 0.5, 0.3}};
  OtParams p;
  p.epsilon = 0.2;
  const auto r = sinkhorn(src, tgt, p);
  double h = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double q = src.weights[i] * tgt.weights[j];
      EXPECT_NEAR(r.plan.pi(i, j), q, 1e-12);
      h -= q * std::log(q);
    }
  EXPECT_NEAR(r.cost, -p.epsilon * h, 1e-10);
}

TEST(Sinkhorn, MarginalsHold) {
  SeededRng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto src = random_measure(1 + rng.uniform_index(6), 5, rng);
    const auto tgt = random_measure(1 + rng.uniform_index(6), 5, rng);
    const auto r = sinkhorn(src, tgt);
    double row = 0.0, col = 0.0;
    for (std::size_t a = 0; a < src.size(); ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < tgt.size(); ++b) s += r.plan.pi(a, b);
      row += std::abs(s - src.weights[a]);
    }
    for (std::size_t b = 0; b < tgt.size(); ++b) {
      double s = 0.0;
      for (std::size_t a = 0; a < src.size(); ++a) s += r.plan.pi(a, b);
      col += std::abs(s - tgt.weights[b]);
    }
    EXPECT_LT(row, 1e-9);
    EXPECT_LT(col, 1e-9);
  }
}

TEST(Sinkhorn, FourByFourMatchesCouplingSearch) {
  SeededRng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto src = random_measure(4, 5, rng);
    const auto tgt = random_measure(4, 5, rng);
    OtParams p;
    p.epsilon = rng.uniform(0.1, 0.5);
    const auto r = sinkhorn(src, tgt, p);
    const auto ref =
        oracle::brute_force_ot(eigen_cost(src, tgt), oracle::to_eigen(src.weights), oracle::to_eigen(tgt.weights), p.epsilon);
    EXPECT_NEAR(r.cost, ref.value, 1e-6);
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b)
        EXPECT_NEAR(r.plan.pi(a, b), ref.plan(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), 1e-6);
  }
}

TEST(Sinkhorn, LinearTermShrinksWithEpsilon) {
  SeededRng rng(5);
  const auto src = random_measure(3, 4, rng);
  const auto tgt = random_measure(4, 4, rng);
  const Mat c = cost_matrix(src, tgt);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {1.0, 0.5, 0.2, 0.1, 0.05}) {
    OtParams p;
    p.epsilon = eps;
    const auto r = sinkhorn(src, tgt, p);
    double lin = 0.0;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 4; ++b) lin += r.plan.pi(a, b) * c(a, b);
    EXPECT_LE(lin, prev + 1e-12);
    prev = lin;
  }
}

TEST(Sinkhorn, RejectsBadMeasures) {
  DiscreteMeasure bad{{e(2, 0), e(2, 1)}, Vec{0.6, 0.6}};
  EXPECT_THROW(sinkhorn(bad, bad), DomainError);
  DiscreteMeasure ragged{{e(2, 0)}, Vec{0.5, 0.5}};
  EXPECT_THROW(sinkhorn(ragged, ragged), DimensionError);
  OtParams p;
  p.epsilon = 0.0;
  const auto ok = DiscreteMeasure::dirac(e(2, 0));
  EXPECT_THROW(sinkhorn(ok, ok, p), ConfigError);
}

TEST(RoutingProbs, SingleTaskIsCertain) {
  SeededRng rng(6);
  const std::vector<DiscreteMeasure> tasks{random_measure(4, 5, rng)};
  const auto r = routing_probs(UnitVector(gaussian_vec(rng, 5)), tasks);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r.probs[0], 1.0);
}

TEST(RoutingProbs, EqualCostsSplitEvenly) {
  SeededRng rng(7);
  const auto m = random_measure(3, 5, rng);
  const std::vector<DiscreteMeasure> tasks{m, m};
  const auto r = routing_probs(UnitVector(gaussian_vec(rng, 5)), tasks);
  EXPECT_DOUBLE_EQ(r.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(r.probs[1], 0.5);
  EXPECT_EQ(r.argmax(), 0u);
}

TEST(Boltzmann, ShiftInvariantAndNormalized) {
  const Vec w{0.3, 0.1, 0.25};
  const auto a = boltzmann(w, 0.05);
  const auto b = boltzmann(w + Vec(3, 7.0), 0.05);
  double s = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.probs[i], b.probs[i], 1e-15);
    s += a.probs[i];
  }
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_EQ(a.argmax(), 1u);
  EXPECT_NEAR(a.probs[0] / a.probs[1], std::exp(-0.2 / 0.05), 1e-12);
  EXPECT_THROW(boltzmann(w, 0.0), DomainError);
  EXPECT_THROW(boltzmann(Vec{}, 1.0), InsufficientDataError);
}

TEST(CosineRoute, PicksNearestAtom) {
  const std::vector<DiscreteMeasure> tasks{DiscreteMeasure::uniform({e(3, 0), e(3, 1)}),
                                           DiscreteMeasure::uniform({e(3, 2)})};
  const auto r = cosine_route(UnitVector(Vec{0.1, 0.0, 1.0}), tasks);
  EXPECT_EQ(r.argmax(), 1u);
  const auto tie = cosine_route(e(3, 1), std::vector<DiscreteMeasure>{DiscreteMeasure::dirac(e(3, 1)),
                                                                     DiscreteMeasure::dirac(e(3, 1))});
  EXPECT_DOUBLE_EQ(tie.probs[0], 0.5);
}

TEST(HardAndUniform, Examples) {
  const auto u = uniform_route(4);
  for (double x : u.probs) EXPECT_DOUBLE_EQ(x, 0.25);
  EXPECT_THROW(uniform_route(0), InsufficientDataError);
  const auto h = hard_route(RoutingDistribution{Vec{0.2, 0.5, 0.3}});
  EXPECT_EQ(h.probs, (Vec{0.0, 1.0, 0.0}));
  const auto t = hard_route(RoutingDistribution{Vec{0.4, 0.2, 0.4}});
  EXPECT_EQ(t.probs, (Vec{1.0, 0.0, 0.0}));
}

TEST(TaskMeasure, AttributePointsLieOneDeviationAway) {
  SeededRng rng(8);
  const ClassAnchor a = anchor_with_basis(6, 2, rng);
  const std::vector<const ClassAnchor*> anchors{&a};
  const auto m = task_measure(anchors);
  ASSERT_EQ(m.size(), 4u);
  for (const auto& x : m.atoms) EXPECT_NEAR(geodesic_distance(a.mu_vis, x), std::sqrt(0.1), 1e-12);
  EXPECT_EQ(task_measure(anchors, AtomMode::BasisVectors).size(), 2u);
  EXPECT_THROW(task_measure(std::vector<const ClassAnchor*>{}), InsufficientDataError);
}

TEST(Lipschitz, SymmetricAtomsGiveFlatCost) {
  // Uniform mass on +-e_i cancels the linear term everywhere.
  std::vector<UnitVector> atoms;
  for (std::size_t i = 0; i < 3; ++i) {
    atoms.push_back(e(5, i));
    atoms.push_back(-e(5, i));
  }
  const auto m = DiscreteMeasure::uniform(std::move(atoms));
  SeededRng rng(9);
  const double steps[] = {1e-3, 1e-2};
  EXPECT_LT(lipschitz_check(m, 50, steps, rng), 1e-9);
}

TEST(Lipschitz, BoundedByOne) {
  SeededRng rng(10);
  const double steps[] = {1e-3, 1e-2};
  for (int i = 0; i < 5; ++i) {
    const auto m = random_measure(1 + rng.uniform_index(6), 8, rng);
    const double lip = lipschitz_check(m, 100, steps, rng);
    EXPECT_LE(lip, 1.0 + 1e-6);
    EXPECT_GT(lip, 0.0);
  }
  const auto single = DiscreteMeasure::dirac(e(8, 0));
  EXPECT_LE(lipschitz_check(single, 200, steps, rng), 1.0 + 1e-6);
}

TEST(Mixture, OneHotRoutingSelectsExpert) {
  SeededRng rng(11);
  const std::size_t d = 6, k = 2;
  const ClassAnchor a0 = anchor_with_basis(d, k, rng), a1 = anchor_with_basis(d, k, rng);
  const TaskExpert x0 = random_expert(0, d, k, rng), x1 = random_expert(1, d, k, rng);
  std::vector<ScoringClass> classes{{4, &a0, UnitVector(gaussian_vec(rng, d))},
                                    {2, &a1, UnitVector(gaussian_vec(rng, d))}};
  const MixtureModel both({&x0, &x1}, classes);
  const MixtureModel only({&x1}, classes);
  const UnitVector z(gaussian_vec(rng, d));
  const auto got = mixture_predict(z, both, RoutingDistribution{Vec{0.0, 1.0}});
  const auto ref = mixture_predict(z, only, RoutingDistribution{Vec{1.0}});
  EXPECT_EQ(got.classes, (std::vector<std::uint32_t>{2, 4}));
  EXPECT_EQ(got.scores, ref.scores);
  EXPECT_EQ(got.label, ref.label);
  EXPECT_THROW(mixture_predict(z, both, RoutingDistribution{Vec{1.0}}), DimensionError);
}

TEST(Mixture, MatchesDoubleLoopOracle) {
  SeededRng rng(12);
  const std::size_t d = 7, k = 3;
  std::vector<ClassAnchor> anchors;
  for (int c = 0; c < 4; ++c) anchors.push_back(anchor_with_basis(d, k, rng));
  const TaskExpert x0 = random_expert(0, d, k, rng), x1 = random_expert(1, d, k, rng);
  std::vector<ScoringClass> classes;
  for (std::uint32_t c = 0; c < 4; ++c) classes.push_back({c, &anchors[c], UnitVector(gaussian_vec(rng, d))});
  const MixtureModel model({&x0, &x1}, classes);
  for (int rep = 0; rep < 20; ++rep) {
    const UnitVector z(gaussian_vec(rng, d));
    const double p0 = rng.uniform();
    const auto got = mixture_predict(z, model, RoutingDistribution{Vec{p0, 1.0 - p0}});
    std::size_t best = 0;
    std::vector<double> ref(4, 0.0);
    for (std::size_t c = 0; c < 4; ++c) {
      const TaskExpert* xs[] = {&x0, &x1};
      for (std::size_t b = 0; b < 2; ++b) {
        const TaskExpert& x = *xs[b];
        const Eigen::MatrixXd bv = oracle::to_eigen(anchors[c].basis_vis), bt = oracle::to_eigen(anchors[c].basis_txt);
        const Eigen::VectorXd zv = oracle::to_eigen(z.vec()), tv = oracle::to_eigen(classes[c].text.vec());
        const Eigen::VectorXd ev = oracle::to_eigen(x.r_vis) * zv + bv * (oracle::to_eigen(x.s_vis) * zv);
        const Eigen::VectorXd et = oracle::to_eigen(x.r_txt) * tv + bt * (oracle::to_eigen(x.s_txt) * tv);
        ref[c] += (b == 0 ? p0 : 1.0 - p0) * ev.dot(et) / (ev.norm() * et.norm());
      }
      EXPECT_NEAR(got.scores[c], ref[c], 1e-12);
      if (ref[c] > ref[best]) best = c;
    }
    EXPECT_EQ(got.label, best);
  }
}

TEST(Mixture, TiesGoToLowestClassId) {
  SeededRng rng(13);
  const ClassAnchor a = anchor_with_basis(4, 1, rng);
  const TaskExpert x = TaskExpert::identity(0, 4, 1);
  const UnitVector t(gaussian_vec(rng, 4));
  const MixtureModel model({&x}, {{9, &a, t}, {3, &a, t}});
  EXPECT_EQ(mixture_predict(t, model, uniform_route(1)).label, 3u);
}
