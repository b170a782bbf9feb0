#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pmvps/align.hpp"
#include "pmvps/geometry.hpp"

namespace pmvps {

/// Union of the corrected patches; matched overlap pairs are merged into one point.
struct RawSurface {
  Eigen::Matrix3Xd points;
  std::vector<int> triangle_ids;
  std::vector<int> template_pixels;
  Eigen::Matrix3Xd barycentrics;  // w.r.t. the point's un-enlarged facet
  Eigen::VectorXd weights;        // G of each point

  int size() const { return static_cast<int>(points.cols()); }
};

/// Throws EmptyInput for no points. `links` may be empty (plain concatenation).
RawSurface superpose(std::span<const FacetPointSet> sets, std::span<const PatchCorrection> corrections,
                     std::span<const Correspondences> links = {});

/// G = sqrt(|a-b| + |a-c| + |c-b|) / 2, clamped to [0, sqrt(2)/2] for points
/// outside the triangle (band points).
double weight_of(const Barycentric& lam);
double weight_of(const Vec3& point, const Mat33& facet);
/// Throws InvalidArgument for a point without triangle attribution.
double weight_of(const RawSurface& raw, int i);

struct RefineOptions {
  double lambda = 10.0;
  int max_iters = 500;
  double tol = 1e-8;
  std::optional<double> constant_weight;  // replaces G everywhere when set
  double slack = 1e-12;                   // allowed relative energy increase per iteration
};

/// Refined surface on the reference-view pixel grid.
///
/// Each grid cell holds one point: its tangential position (w.r.t. the mean
/// facet normal `axis`) comes from the data in the cell, or from the coarse
/// facet when the cell is empty, and its height along `axis` is the minimizer of
///   sum_cells lambda (1 - G) |h - d|^2 + sum_edges G |h' - h|^2
/// with forward differences in grid units.
struct DenseSurface {
  Eigen::Matrix3Xd points;
  std::vector<int> triangle_ids;
  std::vector<int> template_pixels;  // -1 where the cell had no data
  std::vector<int> cells;            // flat col-major grid index
  std::vector<char> has_data;
  int grid_rows = 0;
  int grid_cols = 0;
  Eigen::Vector2i grid_origin = Eigen::Vector2i::Zero();  // (col, row) of cell 0 in reference pixels
  Vec3 axis = Vec3::UnitZ();
  double energy = 0.0;
  std::vector<double> energy_trace;
  int iterations = 0;
  bool converged = false;

  int size() const { return static_cast<int>(points.cols()); }
  Eigen::VectorXd heights() const { return (axis.transpose() * points).transpose(); }
};

/// Throws InvalidArgument for lambda <= 0, EmptyInput for an empty surface,
/// Divergence if the energy rises beyond the slack.
DenseSurface refine(const RawSurface& raw, const CoarseMesh& mesh, const RefineOptions& options = {});

/// Grid heights as an image (NaN outside the surface).
Eigen::ArrayXXd height_map(const DenseSurface& surface);

}  // namespace pmvps
