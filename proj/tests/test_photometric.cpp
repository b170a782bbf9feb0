#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "pmvps/error.hpp"
#include "pmvps/photometric.hpp"
#include "synthetic_stacks.hpp"

using namespace pmvps;

TEST_CASE("shading arithmetic") {
  CHECK(shade(Vec4(0.1, 0, 0, 1), 0.5, Vec3::UnitZ()) == doctest::Approx(0.55));
  CHECK(shade(Vec4(0.2, 1, 0, 0), 2.0, Vec3(0.6, 0.8, 0)) == doctest::Approx(1.6));
  CHECK_THROWS_AS(shade(Vec4(0, 0, 0, 1), 1.0, Vec3(0, 0, 2)), Error);
  CHECK_THROWS_AS(shade(Vec4(0, 0, 0, 1), -1.0, Vec3::UnitZ()), Error);
}

TEST_CASE("manifold projection") {
  const ManifoldPoint p = project_manifold(Vec4(1.0, 0.0, 3.0, 4.0));
  // n = (0, 0.6, 0.8), rho = (1 + 5) / 2 = 3.
  CHECK(p.column(0) == doctest::Approx(3.0));
  CHECK(p.column(2) == doctest::Approx(1.8));
  CHECK(p.column(3) == doctest::Approx(2.4));
  CHECK_FALSE(p.degenerate);
  const ManifoldPoint q = project_manifold(p.column);
  CHECK((q.column - p.column).norm() < 1e-12);
  const ManifoldPoint z = project_manifold(Vec4(0.7, 0, 0, 0));
  CHECK(z.degenerate);
  CHECK(std::isfinite(z.column.sum()));
  const ManifoldPoint neg = project_manifold(Vec4(-5, 1, 0, 0));
  CHECK(neg.column.norm() == doctest::Approx(0.0));
}

TEST_CASE("noiseless masked stack is recovered") {
  const auto s = testdata::make_stack(12, 200, 0.3, 5);
  const PhotometricFactors f = solve_masked(s.J, s.D);
  const double scale = (s.J.array() * s.D.cast<double>()).matrix().squaredNorm();
  CHECK(f.residual <= 1e-6 * scale);
  const Eigen::MatrixXd completed = f.lighting * f.surface;
  const double rms = std::sqrt((completed - s.J).squaredNorm() / static_cast<double>(s.J.size()));
  CHECK(rms <= 0.01 * std::sqrt(s.J.squaredNorm() / static_cast<double>(s.J.size())));
  for (size_t k = 1; k < f.trace.size(); ++k) CHECK(f.trace[k] <= f.trace[k - 1]);
  for (int i = 0; i < f.surface.cols(); ++i) {
    CHECK(f.surface(0, i) == doctest::Approx(f.surface.col(i).tail<3>().norm()).epsilon(1e-9));
  }
}

TEST_CASE("solver preconditions") {
  const auto s = testdata::make_stack(6, 20, 0.0, 1);
  CHECK_THROWS_AS(solve_masked(s.J.topRows(3), s.D.topRows(3)), Error);
  try {
    solve_masked(s.J, BoolMatrix::Constant(6, 20, false));
    FAIL("empty mask accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AllUnobserved);
  }
  try {
    solve_masked(s.J, s.D.leftCols(10));
    FAIL("mismatched mask accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  BoolMatrix sparse = BoolMatrix::Constant(6, 20, false);
  sparse.topRows(3).setConstant(true);
  try {
    solve_masked(s.J, sparse);
    FAIL("three-frame stack accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnderConstrained);
  }
}

TEST_CASE("lighting rotation keeps the shading") {
  std::mt19937_64 rng(2);
  const Vec3 axis = testdata::random_unit(rng, -1.0);
  const Mat33 R = Eigen::AngleAxisd(0.7, axis).toRotationMatrix();
  LightMatrix L(2, 4);
  L << 0.1, 0.3, 0.4, 0.5,
       0.2, -0.1, 0.6, 0.2;
  const LightMatrix Lr = rotate_lighting(L, R);
  const Vec3 n = testdata::random_unit(rng);
  for (int g = 0; g < 2; ++g) {
    CHECK(shade(Lr.row(g).transpose(), 0.8, R * n) == doctest::Approx(shade(L.row(g).transpose(), 0.8, n)));
  }
}

TEST_CASE("surface from known lighting") {
  const auto s = testdata::make_stack(10, 50, 0.2, 3);
  PatchStack stack;
  stack.intensities = s.J;
  stack.observed = s.D;
  const PhotometricFactors f = factors_from_lighting(stack, s.L);
  CHECK((f.surface - s.N).norm() < 1e-6);
}

TEST_CASE("gauge fit recovers a linear map") {
  const auto s = testdata::make_stack(8, 40, 0.0, 9);
  Eigen::Matrix4d A;
  A << 1, 0.2, 0, 0.1,
       0, 1.5, 0.3, 0,
       0.1, 0, 0.8, 0.2,
       0, 0.1, 0, 1.1;
  const SurfaceMatrix moved = A.inverse() * s.N;
  CHECK((fit_gauge(moved, s.N) - A).norm() < 1e-9);
}

TEST_CASE("cone gauge puts a transformed manifold back on the cone") {
  const auto s = testdata::make_stack(8, 60, 0.0, 4);
  Eigen::Matrix4d A;
  A << 1.2, 0.1, 0.0, 0.3,
       0.0, 0.9, 0.2, 0.0,
       0.2, 0.0, 1.1, 0.1,
       0.0, 0.3, 0.0, 0.8;
  const SurfaceMatrix moved = A * s.N;
  const auto Q = cone_gauge(moved);
  REQUIRE(Q.has_value());
  const SurfaceMatrix back = *Q * moved;
  for (int i = 0; i < back.cols(); ++i) {
    const double head = back(0, i), tail = back.col(i).tail<3>().norm();
    CHECK(std::abs(std::abs(head) - tail) < 1e-6 * (1.0 + tail));
  }
}

TEST_CASE("facet lighting reproduces facet means") {
  std::mt19937_64 rng(8);
  const auto base = testdata::make_stack(8, 1, 0.0, 12);
  std::vector<PatchStack> stacks;
  std::vector<Vec3> normals;
  for (int m = 0; m < 10; ++m) {
    const Vec3 n = testdata::random_unit(rng, 0.3);
    PatchStack s;
    s.intensities = base.L * (0.6 * Vec4(1, n.x(), n.y(), n.z())).replicate(1, 5);
    s.observed = BoolMatrix::Constant(8, 5, true);
    stacks.push_back(s);
    normals.push_back(n);
  }
  const LightMatrix L = estimate_lighting_from_facets(stacks, normals, 8);
  REQUIRE(L.rows() == 8);
  // Shading ratios between facets do not depend on the unknown overall scale.
  for (int m = 1; m < 10; ++m) {
    const Vec4 c0(1, normals[0].x(), normals[0].y(), normals[0].z());
    const Vec4 cm(1, normals[static_cast<size_t>(m)].x(), normals[static_cast<size_t>(m)].y(), normals[static_cast<size_t>(m)].z());
    for (int g = 0; g < 8; ++g) {
      const double truth = base.L.row(g).dot(cm) / base.L.row(g).dot(c0);
      CHECK(L.row(g).dot(cm) / L.row(g).dot(c0) == doctest::Approx(truth).epsilon(1e-6));
    }
  }
}
