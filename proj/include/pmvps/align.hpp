#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pmvps/geometry.hpp"
#include "pmvps/integrate.hpp"

namespace pmvps {

/// A patch's height field carried back onto its mesh facet.
///
/// Point i sits at base_points.col(i) + normal * elevations(i). The local
/// coordinates used by the correction are template_coords.col(i) =
/// (x - cx, y - cy, elevation) with (cx, cy) the template centroid.
struct FacetPointSet {
  int triangle_id = -1;
  TriangleIndices vertex_ids{-1, -1, -1};
  Mat33 facet = Mat33::Zero();     // un-enlarged facet, one vertex per column
  Mat33 enlarged = Mat33::Zero();  // enlarged facet
  Vec3 normal = Vec3::UnitZ();
  Eigen::Matrix3Xd base_points;
  Eigen::VectorXd elevations;
  Eigen::Matrix3Xd template_coords;
  Eigen::Matrix3Xd barycentrics;  // w.r.t. the un-enlarged facet, one column per point
  std::vector<int> pixels;        // template pixel of each point
  double pitch = 1.0;
  long observed_count = 0;

  int size() const { return static_cast<int>(base_points.cols()); }
  Eigen::Matrix3Xd surface_points() const;
  /// Rigidly moved copy (template coordinates are intrinsic and stay unchanged).
  FacetPointSet transformed(const Mat33& rotation, const Vec3& translation) const;
};

/// Barycentric transfer of template pixels onto the facet plane, elevation along the facet normal.
/// Throws ShapeMismatch when the field belongs to another triangle.
FacetPointSet lift_to_facet(const HeightField& field, const FacetFrame& frame, const Mat33& facet_vertices3d,
                            int triangle_id, double enlargement, TriangleIndices vertex_ids = {-1, -1, -1},
                            long observed_count = 0);

FacetPointSet lift_to_facet(const HeightField& field, const CoarseMesh& mesh, double enlargement,
                            long observed_count = 0);

struct Correspondences {
  int a = -1;  // triangle ids
  int b = -1;
  std::vector<std::pair<int, int>> pairs;  // (index in a, index in b)
  bool empty_band = false;
};

/// Mutual nearest neighbours (base points, radius r_pair) among the points of
/// each set that fall strictly inside the other's enlarged facet.
/// Throws NonAdjacent unless the triangles share exactly two vertices.
Correspondences overlap_correspondences(const FacetPointSet& a, const FacetPointSet& b, double r_pair);

/// Default pairing radius: 1.5 x the larger pixel pitch of the two patches.
double default_pair_radius(const FacetPointSet& a, const FacetPointSet& b, double factor = 1.5);

struct PatchCorrection {
  Mat33 transform = Mat33::Identity();  // rows e1', e2', h'
  Vec3 h = Vec3::UnitZ();
  double curvature = 0.0;
  bool pinned = false;
  int component = -1;
};

enum class AntiFlattening {
  Tikhonov,  // k-weighted penalty pulling each h toward a unit elevation axis
  Additive,  // k added to every residual row, as in the written objective
};

struct AlignOptions {
  AntiFlattening variant = AntiFlattening::Tikhonov;
  double beta = 0.1;         // penalty strength relative to each patch's data weight
  bool resolve_flips = true;  // second pass re-centres the penalty on sign(h3) * e3
};

struct EdgeReport {
  int a = -1;
  int b = -1;
  int pairs = 0;
  double gap_before = 0.0;  // RMS over pairs of the seam gap (see seam_gap)
  double gap_after = 0.0;
};

struct AlignmentResult {
  std::vector<PatchCorrection> corrections;  // parallel to the input sets
  std::vector<EdgeReport> edges;
  double residual = 0.0;
  int components = 0;
  std::vector<std::string> warnings;
};

/// Gap between paired points measured along the mean of the two facet normals.
double seam_gap(const FacetPointSet& a, int i, const Vec3& ha, const FacetPointSet& b, int j, const Vec3& hb);

/// Joint least squares for the per-patch elevation maps h over all overlap pairs.
/// One patch per connected component (largest observed_count) is pinned to h = e3.
AlignmentResult solve_corrections(std::span<const FacetPointSet> sets, std::span<const Correspondences> links,
                                  std::span<const double> curvatures, const AlignOptions& options = {});

/// Convenience: pairs every adjacent mesh triangle present in `sets` and solves.
AlignmentResult solve_corrections(std::span<const FacetPointSet> sets, const CoarseMesh& mesh,
                                  std::span<const double> curvatures, const AlignOptions& options = {},
                                  double pair_radius_factor = 1.5);

/// Points of a set after applying its correction.
Eigen::Matrix3Xd corrected_points(const FacetPointSet& set, const PatchCorrection& correction);

}  // namespace pmvps
