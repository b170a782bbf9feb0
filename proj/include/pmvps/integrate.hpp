#pragma once

#include <vector>

#include <Eigen/Core>

#include "pmvps/geometry.hpp"
#include "pmvps/photometric.hpp"
#include "pmvps/register.hpp"

namespace pmvps {

/// Integrated surface of one patch in template coordinates.
///
/// points.col(i) = (x, y, z) of template pixel pixels[i]; z is the elevation
/// along the template +z axis (the facet normal).
struct HeightField {
  int triangle_id = -1;
  int rows = 0;
  int cols = 0;
  double pitch = 1.0;
  Vec2 origin = Vec2::Zero();
  std::vector<int> pixels;
  Eigen::Matrix3Xd points;
  std::vector<int> clamped;  // columns whose n_z was raised to the clamp

  int size() const { return static_cast<int>(pixels.size()); }
  Eigen::VectorXd heights() const { return points.row(2).transpose(); }
};

enum class IntegrationBackend {
  Spectral,       // cosine-transform solve on the bounding box, diffused fill outside the patch
  MaskedPoisson,  // sparse least squares restricted to the patch pixels
};

struct IntegrationOptions {
  IntegrationBackend backend = IntegrationBackend::Spectral;
  double nz_clamp = 0.05;
};

/// Least-squares surface on a rows x cols grid (unit spacing) whose forward
/// differences match the averaged slopes p = dz/dcol, q = dz/drow.
/// `known` marks where p, q are data; elsewhere the slopes are filled by
/// harmonic diffusion (spectral backend) or ignored (masked backend).
/// The result has zero mean over the known pixels.
Eigen::ArrayXXd integrate_gradients(const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& q,
                                    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& known,
                                    IntegrationBackend backend = IntegrationBackend::Spectral);

/// Height field of a solved patch: slopes from the template-frame normals,
/// integrated and scaled by the template pitch. Throws EmptyNormalField.
HeightField integrate_normals(const PhotometricFactors& factors, const PatchStack& stack,
                              const IntegrationOptions& options = {});

/// Subtract the plane through the elevations sampled at three template points
/// (nearest patch pixel to each). Used to pin a patch to its sparse vertices.
void anchor_to_points(HeightField& field, const Mat23& anchors);

struct Curvature {
  double value = 0.0;
  bool flagged = false;  // no interior pixel: value forced to 0
};

/// Mean absolute discrete Laplacian over pixels whose four neighbours are in the patch.
Curvature patch_curvature(const HeightField& field);

}  // namespace pmvps
