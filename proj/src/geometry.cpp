#include "pmvps/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <Eigen/Geometry>

#include "pmvps/error.hpp"

namespace pmvps {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::TooFewPoints: return "too few points";
    case ErrorCode::CollinearPoints: return "collinear points";
    case ErrorCode::DuplicatePoints: return "duplicate points";
    case ErrorCode::DegenerateTriangle: return "degenerate triangle";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::AllUnobserved: return "all entries unobserved";
    case ErrorCode::UnderConstrained: return "under-constrained";
    case ErrorCode::EmptyNormalField: return "empty normal field";
    case ErrorCode::NonAdjacent: return "non-adjacent triangles";
    case ErrorCode::EmptyInput: return "empty input";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::EmptyOverlap: return "empty overlap";
    case ErrorCode::Io: return "io";
    case ErrorCode::NoUsablePatches: return "no usable patches";
  }
  return "unknown";
}

namespace {

constexpr double kDegenerateRel = 1e-14;

double scale_of(const Mat23& tri) {
  return std::max({(tri.col(1) - tri.col(0)).norm(), (tri.col(2) - tri.col(0)).norm(),
                   (tri.col(2) - tri.col(1)).norm()});
}

}  // namespace

double signed_area2(const Mat23& tri) {
  const Vec2 e1 = tri.col(1) - tri.col(0);
  const Vec2 e2 = tri.col(2) - tri.col(0);
  return e1.x() * e2.y() - e1.y() * e2.x();
}

double triangle_area(const Mat23& tri) { return 0.5 * std::abs(signed_area2(tri)); }

double triangle_area(const Mat33& tri) {
  return 0.5 * (tri.col(1) - tri.col(0)).cross(tri.col(2) - tri.col(0)).norm();
}

double aspect_ratio(const Mat23& tri) {
  const double area = triangle_area(tri);
  const double longest = scale_of(tri);
  if (area <= 0.0) return std::numeric_limits<double>::infinity();
  return longest * longest / (2.0 * area);
}

Mat23 CoarseMesh::view_triangle(int frame, int triangle) const {
  Mat23 out;
  const auto& proj = projections.at(static_cast<size_t>(frame));
  const auto& t = triangles.at(static_cast<size_t>(triangle));
  for (int k = 0; k < 3; ++k) out.col(k) = proj.row(t[k]).transpose();
  return out;
}

Mat33 CoarseMesh::facet(int triangle) const {
  Mat33 out;
  const auto& t = triangles.at(static_cast<size_t>(triangle));
  for (int k = 0; k < 3; ++k) out.col(k) = vertices3d.row(t[k]).transpose();
  return out;
}

bool CoarseMesh::tracked(int frame, int triangle) const {
  return view_triangle(frame, triangle).allFinite();
}

std::vector<std::pair<int, int>> CoarseMesh::adjacent_pairs() const {
  std::map<std::pair<int, int>, std::vector<int>> edges;
  for (int t = 0; t < triangle_count(); ++t) {
    const auto& tri = triangles[static_cast<size_t>(t)];
    for (int k = 0; k < 3; ++k) {
      int a = tri[k], b = tri[(k + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}].push_back(t);
    }
  }
  std::vector<std::pair<int, int>> out;
  for (const auto& [edge, tris] : edges) {
    if (tris.size() == 2) out.emplace_back(std::min(tris[0], tris[1]), std::max(tris[0], tris[1]));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

CoarseMesh build_mesh(const Points3& points3d, const std::vector<Points2>& projections,
                      int reference_view, const MeshOptions& options) {
  const auto p = points3d.rows();
  if (p < 3) throw Error(ErrorCode::TooFewPoints, "need at least 3 points, got " + std::to_string(p));
  if (reference_view < 0 || reference_view >= static_cast<int>(projections.size())) {
    throw Error(ErrorCode::InvalidArgument, "reference view out of range");
  }
  for (const auto& proj : projections) {
    if (proj.rows() != p) throw Error(ErrorCode::ShapeMismatch, "projection table must have one row per point");
  }

  CoarseMesh mesh;
  mesh.vertices3d = points3d;
  mesh.projections = projections;
  mesh.reference_view = reference_view;

  const Points2& ref = projections[static_cast<size_t>(reference_view)];
  std::vector<int> tracked;
  std::vector<Vec2> pts;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (ref.row(i).allFinite() && points3d.row(i).allFinite()) {
      tracked.push_back(static_cast<int>(i));
      pts.push_back(ref.row(i).transpose());
    }
  }
  if (static_cast<Eigen::Index>(tracked.size()) < p) {
    mesh.warnings.push_back(std::to_string(p - static_cast<Eigen::Index>(tracked.size())) +
                            " points untracked in the reference view were left out of the triangulation");
  }

  const auto local = delaunay_triangulate(pts);
  for (const auto& t : local) {
    TriangleIndices tri{tracked[static_cast<size_t>(t[0])], tracked[static_cast<size_t>(t[1])],
                        tracked[static_cast<size_t>(t[2])]};
    // delaunay_triangulate returns positive signed area; flip to face the camera (y-down image).
    std::swap(tri[1], tri[2]);
    mesh.triangles.push_back(tri);
  }

  if (options.drop_degenerate) {
    std::vector<TriangleIndices> kept;
    int dropped = 0;
    for (int t = 0; t < mesh.triangle_count(); ++t) {
      const Mat23 w = mesh.view_triangle(reference_view, t);
      if (triangle_area(w) < options.min_area_px2 || aspect_ratio(w) > options.max_aspect) {
        ++dropped;
      } else {
        kept.push_back(mesh.triangles[static_cast<size_t>(t)]);
      }
    }
    if (dropped > 0) {
      mesh.warnings.push_back("dropped " + std::to_string(dropped) +
                              " near-degenerate triangles (small area or high aspect ratio)");
    }
    mesh.triangles = std::move(kept);
  }
  return mesh;
}

Mat23 enlarge_triangle(const Mat23& vertices2d, double factor) {
  if (!(factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "enlargement factor must be positive");
  const double s = scale_of(vertices2d);
  if (!(triangle_area(vertices2d) > kDegenerateRel * s * s)) {
    throw Error(ErrorCode::DegenerateTriangle, "cannot enlarge a degenerate triangle");
  }
  const Vec2 c = vertices2d.rowwise().mean();
  Mat23 out;
  for (int k = 0; k < 3; ++k) out.col(k) = c + factor * (vertices2d.col(k) - c);
  return out;
}

Mat33 enlarge_triangle(const Mat33& vertices3d, double factor) {
  if (!(factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "enlargement factor must be positive");
  const double s = std::max({(vertices3d.col(1) - vertices3d.col(0)).norm(),
                             (vertices3d.col(2) - vertices3d.col(0)).norm(),
                             (vertices3d.col(2) - vertices3d.col(1)).norm()});
  if (!(triangle_area(vertices3d) > kDegenerateRel * s * s)) {
    throw Error(ErrorCode::DegenerateTriangle, "cannot enlarge a degenerate triangle");
  }
  const Vec3 c = vertices3d.rowwise().mean();
  Mat33 out;
  for (int k = 0; k < 3; ++k) out.col(k) = c + factor * (vertices3d.col(k) - c);
  return out;
}

Barycentric barycentric_of(const Vec2& point, const Mat23& tri) {
  const double d = signed_area2(tri);
  const double s = scale_of(tri);
  if (!(std::abs(d) > kDegenerateRel * s * s)) {
    throw Error(ErrorCode::DegenerateTriangle, "barycentric coordinates of a zero-area triangle");
  }
  const Vec2 a = tri.col(0), b = tri.col(1), c = tri.col(2);
  auto cross = [](const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); };
  Barycentric out;
  out.alpha = cross(b - point, c - point) / d;
  out.beta = cross(c - point, a - point) / d;
  out.gamma = 1.0 - out.alpha - out.beta;
  return out;
}

Barycentric barycentric_of(const Vec3& point, const Mat33& tri) {
  const Vec3 e1 = tri.col(1) - tri.col(0);
  const Vec3 e2 = tri.col(2) - tri.col(0);
  const Vec3 n = e1.cross(e2);
  const double nn = n.squaredNorm();
  const double s2 = std::max({e1.squaredNorm(), e2.squaredNorm(), (e2 - e1).squaredNorm()});
  if (!(std::sqrt(nn) > kDegenerateRel * s2)) {
    throw Error(ErrorCode::DegenerateTriangle, "barycentric coordinates of a zero-area facet");
  }
  Barycentric out;
  out.alpha = n.dot((tri.col(1) - point).cross(tri.col(2) - point)) / nn;
  out.beta = n.dot((tri.col(2) - point).cross(tri.col(0) - point)) / nn;
  out.gamma = 1.0 - out.alpha - out.beta;
  return out;
}

Mat33 minimal_rotation(const Vec3& from, const Vec3& to, const Vec3& fallback_axis) {
  const Vec3 a = from.normalized();
  const Vec3 b = to.normalized();
  const double c = std::clamp(a.dot(b), -1.0, 1.0);
  const Vec3 axis = a.cross(b);
  const double s = axis.norm();
  if (s < 1e-12) {
    if (c > 0.0) return Mat33::Identity();
    Vec3 k = fallback_axis - fallback_axis.dot(a) * a;
    if (k.norm() < 1e-12) k = a.unitOrthogonal();
    return Eigen::AngleAxisd(std::numbers::pi, k.normalized()).toRotationMatrix();
  }
  return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

FacetFrame facet_frame(const Mat33& vertices3d) {
  const Vec3 e1 = vertices3d.col(1) - vertices3d.col(0);
  const Vec3 e2 = vertices3d.col(2) - vertices3d.col(0);
  const Vec3 n = e1.cross(e2);
  const double s2 = std::max({e1.squaredNorm(), e2.squaredNorm(), (e2 - e1).squaredNorm()});
  if (!(n.norm() > kDegenerateRel * s2)) throw Error(ErrorCode::DegenerateTriangle, "degenerate facet");

  FacetFrame frame;
  frame.facet_normal = n.normalized();
  frame.rotation = minimal_rotation(frame.facet_normal, frame.image_normal, e1);
  const Mat33 rotated = frame.rotation * vertices3d;
  frame.template2d = rotated.topRows<2>();
  frame.plane_offset = rotated.row(2).mean();
  return frame;
}

}  // namespace pmvps
