#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmvps/geometry.hpp"
#include "pmvps/refine.hpp"

namespace pmvps {

/// Sparse tracked points with their per-frame projections.
///
/// Text format (lines starting with '#' are ignored):
///   points <p>
///   <x> <y> <z>                      (p lines)
///   frames <f>
///   <label> <u1> <v1> ... <up> <vp>  (f lines; nan marks an untracked point)
struct SparsePoints {
  Points3 points;
  std::vector<std::string> labels;
  std::vector<Points2> projections;
};

SparsePoints read_sparse_points(const std::string& path);
void write_sparse_points(const std::string& path, const SparsePoints& sparse);

/// Whitespace separated x y z per line.
Eigen::Matrix3Xd read_xyz(const std::string& path);
void write_xyz(const std::string& path, const Eigen::Matrix3Xd& points);

/// ASCII PLY point cloud, optionally with per-point RGB in [0, 1].
void write_ply(const std::string& path, const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd* colors = nullptr);
/// Wavefront OBJ with 0-based triangles.
void write_obj(const std::string& path, const Eigen::Matrix3Xd& vertices, const std::vector<TriangleIndices>& triangles);

/// Triangles joining neighbouring grid cells of a refined surface (two per full quad).
std::vector<TriangleIndices> grid_triangles(const DenseSurface& surface);

/// Colour ramp (blue to red) of values over the surface grid; cells without a
/// point are black. Scale maps to the top of the ramp.
void write_heatmap(const std::string& path, const DenseSurface& surface, const Eigen::VectorXd& values, double scale);

}  // namespace pmvps
