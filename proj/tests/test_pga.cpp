#include <gtest/gtest.h>

#include <cmath>

#include "area/pga.hpp"
#include "oracles.hpp"

using namespace area;

namespace {

UnitVector e(std::size_t d, std::size_t i) { return UnitVector::basis(d, i); }

// Point at angle t from mu along the unit tangent direction w.
UnitVector along(const UnitVector& mu, const Vec& w, double t) { return exp_map(mu, TangentVector(mu, t * w)); }

void expect_anchor_invariants(const ClassAnchor& a, bool tangent) {
  for (const auto* basis : {&a.basis_vis, &a.basis_txt}) {
    const Mat g = basis->transpose() * *basis;
    EXPECT_LE(max_abs(g - Mat::identity(basis->cols())), 1e-8);
  }
  for (const auto* ev : {&a.eigvals_vis, &a.eigvals_txt}) {
    for (std::size_t k = 0; k < ev->size(); ++k) {
      EXPECT_GE((*ev)[k], 0.0);
      if (k + 1 < ev->size()) EXPECT_GE((*ev)[k], (*ev)[k + 1]);
    }
  }
  if (tangent) {
    EXPECT_LE(max_abs(transpose_times(a.basis_vis, a.mu_vis.vec())), 1e-8);
    EXPECT_LE(max_abs(transpose_times(a.basis_txt, a.mu_txt.vec())), 1e-8);
  }
}

Mat rotate_rows(const Mat& q, const Mat& basis) { return q * basis; }

}  // namespace

TEST(TangentCovariance, SinglePointIsZero) {
  const UnitVector mu(Vec{1.0, 2.0, 3.0});
  const std::vector<UnitVector> pts{mu};
  EXPECT_EQ(max_abs(tangent_covariance(mu, pts)), 0.0);
}

TEST(TangentCovariance, OneDirection) {
  const UnitVector mu = e(3, 0);
  const Vec w{0.0, 1.0, 0.0};
  const std::vector<UnitVector> pts{along(mu, w, M_PI / 4), along(mu, w, -M_PI / 4)};
  const Mat c = tangent_covariance(mu, pts);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(c(i, j), (i == 1 && j == 1) ? M_PI * M_PI / 16 : 0.0, 1e-15);
}

TEST(TangentCovariance, MatchesDirectSummationAndTrace) {
  SeededRng rng(1);
  const UnitVector mu(gaussian_vec(rng, 10));
  const auto pts = oracle::cluster(mu, 40, 0.3, rng);
  const Mat c = tangent_covariance(mu, pts);
  EXPECT_LE(max_abs(c - oracle::direct_tangent_covariance(mu, pts)), 1e-12);
  double tr = 0.0, want = 0.0;
  for (std::size_t i = 0; i < 10; ++i) tr += c(i, i);
  for (const auto& p : pts) want += std::pow(geodesic_distance(mu, p), 2) / 40.0;
  EXPECT_NEAR(tr, want, 1e-12);
  EXPECT_LE(max_abs(c - c.transpose()), 0.0);
}

TEST(TangentCovariance, AntipodalSampleNamesIndex) {
  const UnitVector mu = e(3, 2);
  const std::vector<UnitVector> pts{mu, e(3, 0), -mu};
  try {
    tangent_covariance(mu, pts);
    FAIL();
  } catch (const DomainError& err) {
    EXPECT_NE(std::string(err.what()).find("sample 2"), std::string::npos);
  }
}

TEST(PrincipalBasis, DiagonalFullBasis) {
  const auto pb = principal_basis(Mat::diag(Vec{3.0, 1.0, 2.0}), 3);
  EXPECT_EQ(pb.eigvals, (Vec{3.0, 2.0, 1.0}));
  EXPECT_EQ(pb.basis(0, 0), 1.0);
  EXPECT_EQ(pb.basis(2, 1), 1.0);
  EXPECT_EQ(pb.basis(1, 2), 1.0);
}

TEST(PrincipalBasis, RankOne) {
  const Vec w{0.0, 0.6, 0.8};
  Mat c(3, 3);
  c.add_outer(0.49, w, w);
  const auto pb = principal_basis(c, 2);
  EXPECT_NEAR(std::abs(dot(pb.basis.col(0), w)), 1.0, 1e-12);
  EXPECT_NEAR(pb.eigvals[0], 0.49, 1e-14);
  EXPECT_NEAR(pb.eigvals[1], 0.0, 1e-14);
}

TEST(PrincipalBasis, KAboveDimensionRaises) {
  EXPECT_THROW(principal_basis(Mat::identity(3), 4), DimensionError);
  EXPECT_THROW(principal_basis(Mat::identity(3), 0), DimensionError);
}

TEST(PrincipalBasis, SubspaceMatchesDenseOracle) {
  SeededRng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    Mat g(32, 40);
    for (double& x : g.values()) x = rng.normal();
    for (std::size_t j = 0; j < 40; ++j)
      for (std::size_t i = 0; i < 32; ++i) g(i, j) *= 1.0 + static_cast<double>(i % 9);
    const Mat c = (1.0 / 40.0) * (g * g.transpose());
    const auto pb = principal_basis(c, 8);
    const auto ref_vals = oracle::eigenvalues_desc(c);
    for (std::size_t k = 0; k < 8; ++k)
      EXPECT_NEAR(pb.eigvals[k], ref_vals(static_cast<Eigen::Index>(k)), 1e-8 * ref_vals(0));
    EXPECT_LT(oracle::max_principal_angle(oracle::to_eigen(pb.basis), oracle::top_eigenvectors(c, 8)), 1e-6);
  }
}

TEST(BuildAnchor, GreatCircleDirection) {
  SeededRng rng(3);
  const std::size_t d = 6;
  const UnitVector mu(gaussian_vec(rng, d));
  const TangentVector t = TangentVector::project(mu, gaussian_vec(rng, d));
  const Vec w = (1.0 / t.length()) * t.direction();
  std::vector<UnitVector> pts;
  for (double s : {-0.3, -0.1, 0.05, 0.1, 0.3, -0.05}) pts.push_back(along(mu, w, s));
  const ClassAnchor a = build_class_anchor(pts, pts, 0, 2);
  EXPECT_NEAR(std::abs(dot(a.basis_vis.col(0), w)), 1.0, 1e-6);
  EXPECT_NEAR(a.eigvals_vis[1], 0.0, 1e-12);
  expect_anchor_invariants(a, true);
}

TEST(BuildAnchor, SymmetricCross) {
  const UnitVector mu = e(4, 0);
  const Vec a1{0.0, 1.0, 0.0, 0.0}, a2{0.0, 0.0, 1.0, 0.0};
  const std::vector<UnitVector> pts{along(mu, a1, 0.2), along(mu, a1, -0.2), along(mu, a2, 0.2), along(mu, a2, -0.2)};
  const ClassAnchor a = build_class_anchor(pts, pts, 1, 2);
  EXPECT_NEAR(a.eigvals_vis[0], a.eigvals_vis[1], 1e-12);
  EXPECT_NEAR(a.eigvals_vis[0], 0.02, 1e-12);
  for (std::size_t k = 0; k < 2; ++k) {
    const Vec v = a.basis_vis.col(k);
    EXPECT_NEAR(v[1] * v[1] + v[2] * v[2], 1.0, 1e-12);
  }
}

TEST(BuildAnchor, ModalitySymmetry) {
  SeededRng rng(4);
  const auto pts = oracle::cluster(UnitVector(gaussian_vec(rng, 8)), 20, 0.2, rng);
  const ClassAnchor a = build_class_anchor(pts, pts, 9, 3);
  EXPECT_EQ(a.mu_vis, a.mu_txt);
  EXPECT_EQ(a.basis_vis, a.basis_txt);
  EXPECT_EQ(a.eigvals_vis, a.eigvals_txt);
  EXPECT_EQ(a.class_id, 9u);
  EXPECT_EQ(a.method, AnchorMethod::PGA);
}

TEST(BuildAnchor, InvariantsOnRandomClasses) {
  SeededRng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t d = 4 + rng.uniform_index(30);
    const std::size_t k = 1 + rng.uniform_index(std::min<std::size_t>(8, d - 1));
    const auto vis = oracle::cluster(UnitVector(gaussian_vec(rng, d)), 5 + rng.uniform_index(20), 0.3, rng);
    const auto txt = oracle::cluster(UnitVector(gaussian_vec(rng, d)), 5 + rng.uniform_index(20), 0.3, rng);
    for (MeanMode m : {MeanMode::Approx, MeanMode::Iterative}) expect_anchor_invariants(build_class_anchor(vis, txt, 0, k, m), true);
  }
}

TEST(BuildAnchor, IterativeMeanIsStationary) {
  SeededRng rng(6);
  const auto pts = oracle::cluster(UnitVector(gaussian_vec(rng, 8)), 30, 0.3, rng);
  const ClassAnchor a = build_class_anchor(pts, pts, 0, 2, MeanMode::Iterative);
  EXPECT_LT(norm(mean_log(a.mu_vis, pts)), 1e-10);
}

TEST(BuildAnchor, SingleSampleClassRejected) {
  const std::vector<UnitVector> one{e(3, 0)};
  const std::vector<UnitVector> two{e(3, 0), e(3, 1)};
  EXPECT_THROW(build_class_anchor(one, two, 0, 1), InsufficientDataError);
  EXPECT_THROW(build_class_anchor_pca(two, one, 0, 1), InsufficientDataError);
  EXPECT_THROW(build_class_anchor(two, two, 0, 0), DimensionError);
}

TEST(BuildAnchor, RotationEquivariance) {
  SeededRng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d = 12;
    const auto pts = oracle::cluster(UnitVector(gaussian_vec(rng, d)), 25, 0.3, rng);
    const Mat q = oracle::random_orthogonal(d, rng);
    std::vector<UnitVector> rot;
    for (const auto& p : pts) rot.emplace_back(q * p.vec());
    const ClassAnchor a = build_class_anchor(pts, pts, 0, 4);
    const ClassAnchor b = build_class_anchor(rot, rot, 0, 4);
    EXPECT_LT(geodesic_distance(UnitVector(q * a.mu_vis.vec()), b.mu_vis), 1e-8);
    EXPECT_LT(oracle::max_principal_angle(oracle::to_eigen(rotate_rows(q, a.basis_vis)), oracle::to_eigen(b.basis_vis)),
              1e-8);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.eigvals_vis[k], b.eigvals_vis[k], 1e-10);
  }
}

TEST(BuildAnchor, DuplicatedDataLeavesStatisticsUnchanged) {
  SeededRng rng(8);
  const auto pts = oracle::cluster(UnitVector(gaussian_vec(rng, 7)), 15, 0.2, rng);
  std::vector<UnitVector> twice = pts;
  twice.insert(twice.end(), pts.begin(), pts.end());
  const ClassAnchor a = build_class_anchor(pts, pts, 0, 3);
  const ClassAnchor b = build_class_anchor(twice, twice, 0, 3);
  EXPECT_LE(max_abs(a.mu_vis.vec() - b.mu_vis.vec()), 1e-12);
  EXPECT_LE(max_abs(tangent_covariance(a.mu_vis, pts) - tangent_covariance(b.mu_vis, twice)), 1e-12);
  EXPECT_LT(oracle::max_principal_angle(oracle::to_eigen(a.basis_vis), oracle::to_eigen(b.basis_vis)), 1e-6);
}

TEST(PcaAnchor, AgreesWithPgaOnTightCluster) {
  SeededRng rng(9);
  const std::size_t d = 10;
  const UnitVector c(gaussian_vec(rng, d));
  // Elongated cluster so the leading direction is well separated.
  const TangentVector t = TangentVector::project(c, gaussian_vec(rng, d));
  const Vec w = (1.0 / t.length()) * t.direction();
  std::vector<UnitVector> pts;
  for (int i = 0; i < 50; ++i) {
    Vec u = 0.03 * rng.normal() * w + 0.004 * gaussian_vec(rng, d);
    pts.push_back(exp_map(c, TangentVector::project(c, u)));
  }
  const ClassAnchor pga = build_class_anchor(pts, pts, 0, 1);
  const ClassAnchor pca = build_class_anchor_pca(pts, pts, 0, 1);
  EXPECT_EQ(pca.method, AnchorMethod::PCA);
  EXPECT_LT(std::acos(std::min(1.0, std::abs(dot(pga.basis_vis.col(0), pca.basis_vis.col(0))))), 0.01);
}

TEST(PcaAnchor, WideClusterLeavesTangentPlane) {
  // Points on a 1.2 rad arc: the Euclidean covariance picks up the chord
  // sagging towards the centre, so one PCA column has a component along mu.
  const UnitVector mu = e(3, 0);
  const Vec w{0.0, 1.0, 0.0};
  std::vector<UnitVector> pts;
  for (double s : {-1.2, -0.6, 0.0, 0.6, 1.2}) pts.push_back(along(mu, w, s));
  const ClassAnchor pga = build_class_anchor(pts, pts, 0, 2);
  const ClassAnchor pca = build_class_anchor_pca(pts, pts, 0, 2);
  EXPECT_LE(max_abs(transpose_times(pga.basis_vis, mu.vec())), 1e-12);
  EXPECT_GT(max_abs(transpose_times(pca.basis_vis, pca.mu_vis.vec())), 0.5);
}

TEST(PcaAnchor, RepeatedPointHasZeroCovariance) {
  const UnitVector x(Vec{1.0, 1.0, 0.0});
  const std::vector<UnitVector> pts{x, x, x};
  const ClassAnchor pga = build_class_anchor(pts, pts, 0, 2);
  const ClassAnchor pca = build_class_anchor_pca(pts, pts, 0, 2);
  EXPECT_EQ(max_abs(pga.eigvals_vis), 0.0);
  EXPECT_EQ(max_abs(pca.eigvals_vis), 0.0);
}

TEST(AnchorStore, FreezeSemantics) {
  SeededRng rng(10);
  auto make = [&](std::uint32_t id) {
    const auto pts = oracle::cluster(UnitVector(gaussian_vec(rng, 6)), 8, 0.2, rng);
    return build_class_anchor(pts, pts, id, 2);
  };
  AnchorStore s;
  s.add(0, make(0));
  s.add(0, make(1));
  const auto d1 = s.freeze_task(0);
  EXPECT_EQ(s.freeze_task(0), d1);
  EXPECT_TRUE(s.frozen(0));
  EXPECT_THROW(s.add(0, make(2)), ImmutabilityError);
  EXPECT_THROW(s.add(1, make(1)), ImmutabilityError);
  s.add(1, make(5));
  s.freeze_task(1);
  EXPECT_EQ(s.digest(0), d1);
  EXPECT_EQ(s.recorded_digest(0), d1);
  EXPECT_EQ(s.task_of(5), 1u);
  EXPECT_EQ(s.classes(0), (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(s.all_classes(), (std::vector<std::uint32_t>{0, 1, 5}));
  EXPECT_THROW(s.freeze_task(7), DomainError);
}

TEST(AnchorStore, DigestCoversEveryField) {
  SeededRng rng(11);
  const auto pts = oracle::cluster(UnitVector(gaussian_vec(rng, 6)), 8, 0.2, rng);
  const ClassAnchor a = build_class_anchor(pts, pts, 0, 2);
  auto digest_of = [](const ClassAnchor& x) {
    Fnv1a64 h;
    hash_anchor(h, x);
    return h.value();
  };
  const auto base = digest_of(a);
  ClassAnchor b = a;
  b.eigvals_txt[1] = std::nextafter(b.eigvals_txt[1], 1.0);
  EXPECT_NE(digest_of(b), base);
  b = a;
  b.basis_vis(0, 0) = -b.basis_vis(0, 0);
  EXPECT_NE(digest_of(b), base);
}
