#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "pmvps/align.hpp"
#include "pmvps/error.hpp"
#include "surface_fixture.hpp"

using namespace pmvps;

namespace {

void scale_elevation(FacetPointSet& s, double k) {
  s.elevations *= k;
  s.template_coords.row(2) *= k;
}

double rms_gap(const AlignmentResult& r, bool after) {
  double s = 0.0;
  long n = 0;
  for (const auto& e : r.edges) {
    const double g = after ? e.gap_after : e.gap_before;
    s += g * g * e.pairs;
    n += e.pairs;
  }
  return n > 0 ? std::sqrt(s / static_cast<double>(n)) : 0.0;
}

}  // namespace

TEST_CASE("lifting a flat field") {
  auto ps = testdata::make_patch_surface(testdata::plane_surface(), 4, 0.05);
  const FacetPointSet& s = ps.sets[0];
  CHECK(s.size() == ps.fields[0].size());
  for (int i = 0; i < s.size(); ++i) {
    CHECK(s.barycentrics.col(i).sum() == doctest::Approx(1.0));
    CHECK(std::abs(s.elevations(i)) < 1e-12);
    CHECK((s.surface_points().col(i) - s.facet * s.barycentrics.col(i)).norm() < 1e-12);
  }
  HeightField wrong = ps.fields[0];
  wrong.triangle_id = 1;
  CHECK_THROWS_AS(lift_to_facet(wrong, facet_frame(ps.mesh.facet(0)), ps.mesh.facet(0), 0, 1.3), Error);
}

TEST_CASE("overlap correspondences of adjacent facets") {
  auto ps = testdata::make_patch_surface(testdata::dome_surface(), 4, 0.03);
  const auto adj = ps.mesh.adjacent_pairs();
  REQUIRE_FALSE(adj.empty());
  const auto [ta, tb] = adj.front();
  const FacetPointSet& a = ps.sets[static_cast<size_t>(ta)];
  const FacetPointSet& b = ps.sets[static_cast<size_t>(tb)];
  const double r = default_pair_radius(a, b);
  CHECK(r == doctest::Approx(1.5 * std::max(a.pitch, b.pitch)));
  const Correspondences c = overlap_correspondences(a, b, r);
  CHECK_FALSE(c.empty_band);
  CHECK(c.pairs.size() > 5);
  for (const auto& [i, j] : c.pairs) CHECK((a.base_points.col(i) - b.base_points.col(j)).norm() <= r);

  // A triangle sharing no edge.
  int far = -1;
  for (int t = 0; t < ps.mesh.triangle_count() && far < 0; ++t) {
    int shared = 0;
    for (int u : ps.mesh.triangles[static_cast<size_t>(t)])
      for (int v : ps.mesh.triangles[static_cast<size_t>(ta)]) shared += u == v;
    if (shared == 0) far = t;
  }
  REQUIRE(far >= 0);
  try {
    overlap_correspondences(a, ps.sets[static_cast<size_t>(far)], r);
    FAIL("non-adjacent pair accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonAdjacent);
  }
}

TEST_CASE("a consistent plane keeps the identity correction") {
  auto ps = testdata::make_patch_surface(testdata::plane_surface(), 4, 0.04);
  const AlignmentResult r = solve_corrections(ps.sets, ps.mesh, ps.curvatures);
  CHECK(r.components == 1);
  int pinned = 0;
  for (const auto& c : r.corrections) {
    CHECK((c.h - Vec3::UnitZ()).norm() < 1e-6);
    pinned += c.pinned;
  }
  CHECK(pinned == 1);
  CHECK(rms_gap(r, true) < 1e-9);
}

TEST_CASE("a flipped patch is turned back") {
  auto ps = testdata::make_patch_surface(testdata::dome_surface(2.0), 5, 0.02);
  const AlignmentResult base = solve_corrections(ps.sets, ps.mesh, ps.curvatures);
  auto flipped = ps.sets;
  const int target = 7;
  scale_elevation(flipped[static_cast<size_t>(target)], -1.0);
  const AlignmentResult r = solve_corrections(flipped, ps.mesh, ps.curvatures);
  CHECK(r.corrections[static_cast<size_t>(target)].h.z() < 0.0);
  CHECK(rms_gap(r, true) <= 2.0 * rms_gap(base, true) + 1e-12);
  const Eigen::Matrix3Xd fixed = corrected_points(flipped[static_cast<size_t>(target)], r.corrections[static_cast<size_t>(target)]);
  const Eigen::Matrix3Xd truth = ps.sets[static_cast<size_t>(target)].surface_points();
  CHECK((fixed - truth).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("an exaggerated patch is rescaled") {
  auto ps = testdata::make_patch_surface(testdata::dome_surface(2.0), 5, 0.02);
  auto scaled = ps.sets;
  scale_elevation(scaled[3], 2.0);
  const AlignmentResult r = solve_corrections(scaled, ps.mesh, ps.curvatures);
  CHECK(r.corrections[3].h.z() == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("additive variant solves") {
  auto ps = testdata::make_patch_surface(testdata::dome_surface(2.0), 4, 0.03);
  AlignOptions o;
  o.variant = AntiFlattening::Additive;
  const AlignmentResult r = solve_corrections(ps.sets, ps.mesh, ps.curvatures, o);
  CHECK(r.corrections.size() == ps.sets.size());
  for (const auto& c : r.corrections) CHECK(c.h.allFinite());
}

TEST_CASE("alignment input checks") {
  auto ps = testdata::make_patch_surface(testdata::plane_surface(), 3, 0.05);
  const std::vector<double> short_curv(1, 0.0);
  CHECK_THROWS_AS(solve_corrections(ps.sets, ps.mesh, short_curv), Error);
}
