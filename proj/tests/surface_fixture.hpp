#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pmvps/align.hpp"
#include "pmvps/geometry.hpp"
#include "pmvps/register.hpp"

// Consistent patch surfaces: every patch samples one analytic height function
// z = f(x, y) along its facet normal, so overlaps agree exactly.
namespace testdata {

struct Surface {
  std::function<double(double, double)> f;
  std::function<pmvps::Vec2(double, double)> grad;
};

inline Surface plane_surface(double a = 0.1, double b = -0.05) {
  return {[=](double x, double y) { return a * x + b * y; }, [=](double, double) { return pmvps::Vec2(a, b); }};
}

inline Surface dome_surface(double R = 2.5) {
  return {[=](double x, double y) { return std::sqrt(R * R - x * x - y * y) - R; },
          [=](double x, double y) {
            const double z = std::sqrt(R * R - x * x - y * y);
            return pmvps::Vec2(-x / z, -y / z);
          }};
}

// Elevation t with base + t n on the surface (Newton).
inline double elevation(const Surface& s, const pmvps::Vec3& base, const pmvps::Vec3& n) {
  double t = 0.0;
  for (int it = 0; it < 50; ++it) {
    const pmvps::Vec3 p = base + t * n;
    const double g = s.f(p.x(), p.y()) - p.z();
    const pmvps::Vec2 d = s.grad(p.x(), p.y());
    const double dg = d.x() * n.x() + d.y() * n.y() - n.z();
    const double step = g / dg;
    t -= step;
    if (std::abs(step) < 1e-15) break;
  }
  return t;
}

struct PatchSurface {
  pmvps::CoarseMesh mesh;
  std::vector<pmvps::HeightField> fields;
  std::vector<pmvps::FacetPointSet> sets;
  std::vector<double> curvatures;
  double enlargement = 1.3;
};

inline PatchSurface make_patch_surface(const Surface& s, int n = 5, double pitch = 0.02, double enlargement = 1.3,
                                       double jitter = 0.0) {
  PatchSurface out;
  out.enlargement = enlargement;
  pmvps::Points3 pts(n * n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      // Deterministic in-plane jitter keeps the triangulation generic.
      const double x = -1.0 + 2.0 * i / (n - 1) + jitter * std::sin(12.9898 * i + 78.233 * j);
      const double y = -1.0 + 2.0 * j / (n - 1) + jitter * std::cos(39.3468 * i + 11.135 * j);
      pts.row(i * n + j) << x, y, s.f(x, y);
    }
  pmvps::Points2 uv(n * n, 2);
  for (int i = 0; i < n * n; ++i) uv.row(i) << 100 + 80 * pts(i, 0), 100 - 80 * pts(i, 1);
  out.mesh = pmvps::build_mesh(pts, {uv}, 0);
  for (int t = 0; t < out.mesh.triangle_count(); ++t) {
    const pmvps::Mat33 facet = out.mesh.facet(t);
    const pmvps::FacetFrame frame = pmvps::facet_frame(facet);
    const pmvps::TemplateRaster tmpl = pmvps::make_template(frame, enlargement, pitch, t);
    pmvps::HeightField h;
    h.triangle_id = t;
    h.rows = tmpl.rows;
    h.cols = tmpl.cols;
    h.pitch = tmpl.pitch;
    h.origin = tmpl.origin;
    h.pixels = tmpl.pixels;
    h.points.resize(3, tmpl.size());
    for (int k = 0; k < tmpl.size(); ++k) {
      const pmvps::Vec2 xy = tmpl.position(tmpl.pixels[static_cast<size_t>(k)]);
      const pmvps::Vec3 base = frame.rotation.transpose() * pmvps::Vec3(xy.x(), xy.y(), frame.plane_offset);
      h.points.col(k) << xy, elevation(s, base, frame.facet_normal);
    }
    out.fields.push_back(h);
    out.sets.push_back(pmvps::lift_to_facet(h, out.mesh, enlargement, 1000 + t));
    out.curvatures.push_back(0.0);
  }
  return out;
}

}  // namespace testdata
