#include "pmvps/register.hpp"

#include <algorithm>
#include <cmath>

#include "pmvps/error.hpp"

namespace pmvps {

double template_pitch(const Mat33& facet, std::span<const Mat23> source_triangles, double enlargement, int max_size) {
  double largest = 0.0;
  for (const auto& w : source_triangles) {
    if (w.allFinite()) largest = std::max(largest, triangle_area(w));
  }
  const double area3d = triangle_area(facet);
  if (!(area3d > 0.0)) throw Error(ErrorCode::DegenerateTriangle, "facet has zero area");
  double pitch = largest > 0.0 ? std::sqrt(area3d / largest) : std::sqrt(area3d) / 16.0;

  const FacetFrame frame = facet_frame(facet);
  const Mat23 tri = enlarge_triangle(frame.template2d, enlargement);
  const Vec2 extent = tri.rowwise().maxCoeff() - tri.rowwise().minCoeff();
  if (max_size > 1) pitch = std::max(pitch, extent.maxCoeff() / (max_size - 1));
  return pitch;
}

TemplateRaster make_template(const FacetFrame& frame, double enlargement, double pitch, int triangle_id) {
  if (!(pitch > 0.0)) throw Error(ErrorCode::InvalidArgument, "template pitch must be positive");
  TemplateRaster t;
  t.triangle_id = triangle_id;
  t.frame = frame;
  t.enlargement = enlargement;
  t.triangle = enlarge_triangle(frame.template2d, enlargement);
  t.pitch = pitch;
  t.origin = t.triangle.rowwise().minCoeff();
  const Vec2 extent = t.triangle.rowwise().maxCoeff() - t.origin;
  t.cols = static_cast<int>(std::floor(extent.x() / pitch + 1e-9)) + 1;
  t.rows = static_cast<int>(std::floor(extent.y() / pitch + 1e-9)) + 1;
  for (int c = 0; c < t.cols; ++c) {
    for (int r = 0; r < t.rows; ++r) {
      const int flat = c * t.rows + r;
      if (barycentric_of(t.position(flat), t.triangle).inside(1e-12)) t.pixels.push_back(flat);
    }
  }
  return t;
}

double sample_bilinear(const Eigen::ArrayXXd& image, double x, double y) {
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, static_cast<int>(image.cols()) - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, static_cast<int>(image.rows()) - 1);
  const int x1 = std::min(x0 + 1, static_cast<int>(image.cols()) - 1);
  const int y1 = std::min(y0 + 1, static_cast<int>(image.rows()) - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
         fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
}

RegisteredRow register_patch(const ImageFrame& frame, const PatchMask& mask, const Mat23& source_vertices2d,
                             const TemplateRaster& tmpl, Sampling sampling) {
  RegisteredRow row;
  row.frame_id = frame.frame_id;
  const int b = tmpl.size();
  row.values = Eigen::VectorXd::Zero(b);
  row.mapped = BoolVector::Constant(b, false);
  if (mask.empty() || mask.out_of_view) return row;

  const Mat23 source = enlarge_triangle(source_vertices2d, tmpl.enlargement);
  const double w = frame.cols() - 1, h = frame.rows() - 1;
  for (int k = 0; k < b; ++k) {
    const Barycentric lam = barycentric_of(tmpl.position(tmpl.pixels[static_cast<size_t>(k)]), tmpl.triangle);
    const Vec2 p = source * lam.vec();
    if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= w && p.y() <= h)) continue;
    if (!barycentric_of(p, source).inside(1e-9)) continue;
    row.mapped(k) = true;
    if (sampling == Sampling::Bilinear) {
      row.values(k) = sample_bilinear(frame.pixels, p.x(), p.y());
    } else {
      row.values(k) = frame.pixels(static_cast<int>(std::lround(p.y())), static_cast<int>(std::lround(p.x())));
    }
  }
  return row;
}

PatchStack assemble_stack(std::span<const RegisteredRow> rows, const TemplateRaster& tmpl,
                          const IntensityThresholds& thresholds) {
  const int f = static_cast<int>(rows.size());
  const int b = tmpl.size();
  PatchStack s;
  s.intensities = Eigen::MatrixXd::Zero(f, b);
  s.observed = BoolMatrix::Constant(f, b, false);
  s.template_pixels = tmpl.pixels;
  s.rows = tmpl.rows;
  s.cols = tmpl.cols;
  s.pitch = tmpl.pitch;
  s.origin = tmpl.origin;
  s.triangle_id = tmpl.triangle_id;
  for (int g = 0; g < f; ++g) {
    const auto& r = rows[static_cast<size_t>(g)];
    if (r.values.size() != b || r.mapped.size() != b) {
      throw Error(ErrorCode::ShapeMismatch, "registered rows disagree on the template size");
    }
    s.frame_ids.push_back(r.frame_id);
    s.intensities.row(g) = r.values.transpose();
    for (int k = 0; k < b; ++k) {
      const double v = r.values(k);
      s.observed(g, k) = r.mapped(k) && v >= thresholds.dark && v <= thresholds.saturated;
    }
  }
  for (int k = 0; k < b; ++k) {
    if (s.observed.col(k).count() < 4) s.weak_columns.push_back(k);
  }
  return s;
}

double missing_fraction(const PatchStack& stack) {
  const double total = static_cast<double>(stack.observed.size());
  if (total == 0.0) return 1.0;
  return 1.0 - static_cast<double>(stack.observed.count()) / total;
}

}  // namespace pmvps
