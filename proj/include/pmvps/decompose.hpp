#pragma once

#include <vector>

#include <Eigen/Core>

#include "pmvps/geometry.hpp"
#include "pmvps/image.hpp"

namespace pmvps {

/// Binary mask of one (enlarged) triangle projected on one frame.
///
/// Only the flat indices of set pixels are stored; dense() expands them.
struct PatchMask {
  int rows = 0;
  int cols = 0;
  std::vector<int> pixel_index_set;  // sorted, flat = col * rows + row
  Mat23 vertices2d = Mat23::Zero();  // the triangle that was rasterized
  int triangle_id = -1;
  int frame_id = -1;
  bool out_of_view = false;

  bool empty() const { return pixel_index_set.empty(); }
  bool contains(int row, int col) const;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> dense() const;
};

/// Pixel (row, col) is set iff its centre (x = col, y = row) has all three
/// barycentric coordinates >= -1e-12. Pixels outside the image are clipped;
/// a triangle that misses the image yields an empty mask flagged out_of_view.
PatchMask rasterize_mask(const Mat23& vertices2d, int rows, int cols, int triangle_id = -1, int frame_id = -1);

/// Element-wise product of the frame with the mask.
Eigen::ArrayXXd extract_patch(const ImageFrame& frame, const PatchMask& mask);

/// Mask of one enlarged triangle on one frame (empty and out_of_view when untracked or back-facing).
PatchMask patch_mask(const CoarseMesh& mesh, int frame, int triangle, int rows, int cols, double enlargement);

/// Masks of every enlarged mesh triangle on frame g. Triangles that are
/// untracked or back-facing in that frame get an empty out-of-view mask.
std::vector<PatchMask> decompose_frame(const CoarseMesh& mesh, int frame, int rows, int cols, double enlargement);

/// True when the projected winding in `frame` is reversed relative to the reference view.
bool back_facing(const CoarseMesh& mesh, int frame, int triangle);

}  // namespace pmvps
