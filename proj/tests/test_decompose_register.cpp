#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "pmvps/decompose.hpp"
#include "pmvps/error.hpp"
#include "pmvps/register.hpp"

using namespace pmvps;

namespace {

ImageFrame ramp(int rows, int cols, int id = 0) {
  ImageFrame f;
  f.frame_id = id;
  f.pixels.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) f.pixels(r, c) = 0.1 + 0.004 * c + 0.003 * r;
  return f;
}

int brute_force_count(const Mat23& tri, int rows, int cols) {
  int n = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      // Same-side test with edge functions, independent of barycentric_of.
      const double s = signed_area2(tri);
      bool in = true;
      for (int k = 0; k < 3; ++k) {
        const Vec2 a = tri.col(k), b = tri.col((k + 1) % 3);
        const double e = (b.x() - a.x()) * (r - a.y()) - (b.y() - a.y()) * (c - a.x());
        if (e * s < -1e-9 * std::abs(s)) in = false;
      }
      n += in;
    }
  return n;
}

}  // namespace

TEST_CASE("rasterized mask matches an edge-function count") {
  Mat23 tri;
  tri << 3.2, 40.7, 12.1,
         5.5, 9.1, 33.9;
  const PatchMask m = rasterize_mask(tri, 50, 60, 2, 1);
  CHECK(static_cast<int>(m.pixel_index_set.size()) == brute_force_count(tri, 50, 60));
  CHECK(std::is_sorted(m.pixel_index_set.begin(), m.pixel_index_set.end()));
  CHECK(m.dense().count() == static_cast<long>(m.pixel_index_set.size()));
  CHECK(m.contains(10, 15));
  CHECK_FALSE(m.contains(45, 2));
}

TEST_CASE("a triangle outside the image gives an empty out-of-view mask") {
  Mat23 tri;
  tri << -30, -10, -20,
         -30, -25, -5;
  const PatchMask m = rasterize_mask(tri, 20, 20);
  CHECK(m.empty());
  CHECK(m.out_of_view);
}

TEST_CASE("extract_patch keeps only masked pixels") {
  Mat23 tri;
  tri << 1, 18, 1,
         1, 1, 18;
  const ImageFrame f = ramp(20, 20);
  const PatchMask m = rasterize_mask(tri, 20, 20);
  const Eigen::ArrayXXd p = extract_patch(f, m);
  CHECK(p(2, 2) == doctest::Approx(f.pixels(2, 2)));
  CHECK(p(19, 19) == 0.0);
}

TEST_CASE("registration of a linear image is exact") {
  Mat33 facet;
  facet << 0, 1, 0,
           0, 0, 1,
           0, 0, 0;
  const FacetFrame frame = facet_frame(facet);
  Mat23 source;
  source << 20, 60, 25,
            70, 65, 20;
  const ImageFrame img = ramp(100, 100);
  const std::vector<Mat23> sources{source};
  const double pitch = template_pitch(facet, sources, 1.3, 64);
  const TemplateRaster t = make_template(frame, 1.3, pitch, 0);
  CHECK(t.rows <= 64);
  CHECK(t.cols <= 64);
  const PatchMask mask = rasterize_mask(enlarge_triangle(source, 1.3), 100, 100);
  const RegisteredRow row = register_patch(img, mask, source, t);
  CHECK(row.mapped.count() == t.size());
  const Mat23 big = enlarge_triangle(source, 1.3);
  const Mat23 tt = enlarge_triangle(frame.template2d, 1.3);
  // Oracle: affine map template -> source solved from the three vertex pairs.
  Eigen::Matrix3d A;
  A << tt.row(0), tt.row(1), Eigen::RowVector3d::Ones();
  const Mat23 affine = big * A.inverse();
  for (int k = 0; k < t.size(); k += 7) {
    const Vec2 q = t.position(t.pixels[static_cast<size_t>(k)]);
    const Vec2 p = affine * Vec3(q.x(), q.y(), 1.0);
    CHECK(row.values(k) == doctest::Approx(0.1 + 0.004 * p.x() + 0.003 * p.y()).epsilon(1e-9));
  }
}

TEST_CASE("stack thresholds and weak columns") {
  Mat33 facet;
  facet << 0, 1, 0,
           0, 0, 1,
           0, 0, 0;
  const TemplateRaster t = make_template(facet_frame(facet), 1.0, 0.25, 0);
  std::vector<RegisteredRow> rows(5);
  for (int g = 0; g < 5; ++g) {
    rows[static_cast<size_t>(g)].frame_id = g;
    rows[static_cast<size_t>(g)].values = Eigen::VectorXd::Constant(t.size(), 0.5);
    rows[static_cast<size_t>(g)].mapped = BoolVector::Constant(t.size(), true);
  }
  rows[0].values(0) = 0.01;
  rows[1].values(0) = 0.99;
  rows[2].mapped(1) = false;
  const PatchStack s = assemble_stack(rows, t, {0.02, 0.98});
  CHECK_FALSE(s.observed(0, 0));
  CHECK_FALSE(s.observed(1, 0));
  CHECK_FALSE(s.observed(2, 1));
  CHECK(s.observed(3, 0));
  CHECK(s.weak_columns == std::vector<int>{0});
  CHECK(missing_fraction(s) == doctest::Approx(3.0 / (5.0 * t.size())));
  rows[4].values.resize(2);
  CHECK_THROWS_AS(assemble_stack(rows, t), Error);
}

TEST_CASE("bilinear sampling interpolates and clamps") {
  Eigen::ArrayXXd img(2, 2);
  img << 0, 1,
         2, 3;
  CHECK(sample_bilinear(img, 0.5, 0.5) == doctest::Approx(1.5));
  CHECK(sample_bilinear(img, 1.0, 1.0) == doctest::Approx(3.0));
  CHECK(sample_bilinear(img, 0.25, 0.0) == doctest::Approx(0.25));
}
