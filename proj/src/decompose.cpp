#include "pmvps/decompose.hpp"

#include <algorithm>
#include <cmath>

#include "pmvps/error.hpp"

namespace pmvps {

namespace {
constexpr double kInsideEps = 1e-12;
}

bool PatchMask::contains(int row, int col) const {
  if (row < 0 || col < 0 || row >= rows || col >= cols) return false;
  return std::binary_search(pixel_index_set.begin(), pixel_index_set.end(), col * rows + row);
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> PatchMask::dense() const {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows, cols, false);
  for (int idx : pixel_index_set) m.data()[idx] = true;
  return m;
}

PatchMask rasterize_mask(const Mat23& tri, int rows, int cols, int triangle_id, int frame_id) {
  if (rows <= 0 || cols <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!tri.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite triangle vertices");
  // Throws on a degenerate triangle.
  (void)barycentric_of(Vec2(tri.rowwise().mean()), tri);

  PatchMask mask;
  mask.rows = rows;
  mask.cols = cols;
  mask.vertices2d = tri;
  mask.triangle_id = triangle_id;
  mask.frame_id = frame_id;

  const Vec2 lo = tri.rowwise().minCoeff();
  const Vec2 hi = tri.rowwise().maxCoeff();
  const int c0 = std::max(0, static_cast<int>(std::ceil(lo.x() - 1e-9)));
  const int c1 = std::min(cols - 1, static_cast<int>(std::floor(hi.x() + 1e-9)));
  const int r0 = std::max(0, static_cast<int>(std::ceil(lo.y() - 1e-9)));
  const int r1 = std::min(rows - 1, static_cast<int>(std::floor(hi.y() + 1e-9)));
  for (int c = c0; c <= c1; ++c) {
    for (int r = r0; r <= r1; ++r) {
      if (barycentric_of(Vec2(c, r), tri).inside(kInsideEps)) mask.pixel_index_set.push_back(c * rows + r);
    }
  }
  mask.out_of_view = mask.pixel_index_set.empty();
  return mask;
}

Eigen::ArrayXXd extract_patch(const ImageFrame& frame, const PatchMask& mask) {
  if (frame.rows() != mask.rows || frame.cols() != mask.cols) {
    throw Error(ErrorCode::ShapeMismatch, "mask and frame sizes differ");
  }
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(frame.rows(), frame.cols());
  for (int idx : mask.pixel_index_set) out.data()[idx] = frame.pixels.data()[idx];
  return out;
}

bool back_facing(const CoarseMesh& mesh, int frame, int triangle) {
  const double ref = signed_area2(mesh.view_triangle(mesh.reference_view, triangle));
  const double here = signed_area2(mesh.view_triangle(frame, triangle));
  return ref * here <= 0.0;
}

PatchMask patch_mask(const CoarseMesh& mesh, int frame, int triangle, int rows, int cols, double enlargement) {
  const Mat23 w = mesh.view_triangle(frame, triangle);
  if (!w.allFinite() || back_facing(mesh, frame, triangle) || triangle_area(w) < 1e-9) {
    PatchMask m;
    m.rows = rows;
    m.cols = cols;
    m.triangle_id = triangle;
    m.frame_id = frame;
    m.out_of_view = true;
    if (w.allFinite()) m.vertices2d = w;
    return m;
  }
  return rasterize_mask(enlarge_triangle(w, enlargement), rows, cols, triangle, frame);
}

std::vector<PatchMask> decompose_frame(const CoarseMesh& mesh, int frame, int rows, int cols, double enlargement) {
  std::vector<PatchMask> masks;
  masks.reserve(mesh.triangles.size());
  for (int t = 0; t < mesh.triangle_count(); ++t) masks.push_back(patch_mask(mesh, frame, t, rows, cols, enlargement));
  return masks;
}

}  // namespace pmvps
