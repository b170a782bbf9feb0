#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pmvps {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat33 = Eigen::Matrix3d;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using TriangleIndices = std::array<int, 3>;

struct Barycentric {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  double sum() const { return alpha + beta + gamma; }
  bool inside(double eps = 1e-12) const { return alpha >= -eps && beta >= -eps && gamma >= -eps; }
  Vec3 vec() const { return {alpha, beta, gamma}; }
};

/// Sparse 3D scaffold: points, their triangulation and the per-frame 2D projections.
///
/// Triangles are wound so that the signed area of every triangle in the
/// reference view (image coordinates, y pointing down) is negative. With that
/// winding the facet normal cross(Z1 - Z0, Z2 - Z0) faces the reference camera.
/// Untracked projections are NaN.
struct CoarseMesh {
  Points3 vertices3d;
  std::vector<TriangleIndices> triangles;
  std::vector<Points2> projections;
  int reference_view = 0;
  std::vector<std::string> warnings;

  int point_count() const { return static_cast<int>(vertices3d.rows()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
  int frame_count() const { return static_cast<int>(projections.size()); }

  /// Projected vertices of a triangle in frame g, one column per vertex.
  Mat23 view_triangle(int frame, int triangle) const;
  /// 3D vertices of a triangle, one column per vertex.
  Mat33 facet(int triangle) const;
  bool tracked(int frame, int triangle) const;
  /// Unordered pairs of triangles sharing an edge, sorted.
  std::vector<std::pair<int, int>> adjacent_pairs() const;
};

struct MeshOptions {
  bool drop_degenerate = true;
  double min_area_px2 = 4.0;
  double max_aspect = 20.0;
};

/// Delaunay triangulation of the reference-view projections, applied to the 3D points.
CoarseMesh build_mesh(const Points3& points3d, const std::vector<Points2>& projections,
                      int reference_view, const MeshOptions& options = {});

/// 2D Delaunay triangulation. Triangles are returned counter-clockwise
/// (positive signed area in a y-up frame). Throws on <3 points, duplicates or
/// an all-collinear input.
std::vector<TriangleIndices> delaunay_triangulate(std::span<const Vec2> points);

/// Twice the signed area; positive when the columns are counter-clockwise in a y-up frame.
double signed_area2(const Mat23& tri);
double triangle_area(const Mat23& tri);
double triangle_area(const Mat33& tri);
/// Longest edge squared over twice the area; 2/sqrt(3) for an equilateral triangle.
double aspect_ratio(const Mat23& tri);

/// Homothety about the centroid. Edges stay parallel; factor > 1 grows the triangle.
Mat23 enlarge_triangle(const Mat23& vertices2d, double factor);
Mat33 enlarge_triangle(const Mat33& vertices3d, double factor);

Barycentric barycentric_of(const Vec2& point, const Mat23& vertices2d);
/// Barycentric coordinates of the orthogonal projection of `point` onto the triangle plane.
Barycentric barycentric_of(const Vec3& point, const Mat33& vertices3d);

/// Rotation bringing a facet fronto-parallel (facet normal onto +z).
struct FacetFrame {
  Mat33 rotation = Mat33::Identity();
  Vec3 facet_normal = Vec3::UnitZ();
  Vec3 image_normal = Vec3::UnitZ();
  Mat23 template2d = Mat23::Zero();
  /// Common z of the rotated vertices (distance of the facet plane along +z).
  double plane_offset = 0.0;
};

FacetFrame facet_frame(const Mat33& vertices3d);

/// Smallest rotation taking unit `from` onto unit `to`. For antiparallel input
/// the rotation is by pi about `fallback_axis` (projected orthogonal to `from`).
Mat33 minimal_rotation(const Vec3& from, const Vec3& to, const Vec3& fallback_axis);

}  // namespace pmvps
