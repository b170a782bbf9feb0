#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmvps/geometry.hpp"
#include "pmvps/image.hpp"

namespace pmvps {

enum class SurfaceKind { Plane, SphereCap, Potato };

struct GaussianBump {
  Vec2 center = Vec2::Zero();
  double height = 0.0;
  double sigma = 0.3;
};

/// Height function z(x, y) over the square [-extent, extent]^2.
///
/// Plane: slope . (x, y) + offset. Sphere cap: spherical dome of the given
/// height over a disc of radius cap_radius (zero outside). Potato: the cap
/// plus Gaussian bumps.
struct SurfaceModel {
  SurfaceKind kind = SurfaceKind::Plane;
  double extent = 1.0;
  Vec2 slope = Vec2::Zero();
  double offset = 0.0;
  double cap_height = 0.6;
  double cap_radius = 1.5;
  std::vector<GaussianBump> bumps;

  double height(double x, double y) const;
  Vec2 gradient(double x, double y) const;
  /// Unit upward normal (-z_x, -z_y, 1) / norm.
  Vec3 normal(double x, double y) const;
};

/// Pinhole camera, x_cam = R X + t, pixel = K x_cam / z (y pointing down).
struct Camera {
  Mat33 K = Mat33::Identity();
  Mat33 R = Mat33::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0;
  int height = 0;

  Vec3 center() const { return -R.transpose() * t; }
  /// Pixel coordinates and depth; depth <= 0 means behind the camera.
  Vec3 project(const Vec3& X) const;
  Vec3 ray(double u, double v) const;
};

struct SceneSpec {
  SurfaceModel surface;
  double albedo = 0.8;
  double albedo_variation = 0.1;
  int views = 10;
  double arc_degrees = 50.0;
  double distance = 4.0;
  int width = 256;
  int height = 256;
  double fill = 0.8;  // fraction of the image spanned by the domain from the central view
  bool static_view = false;
  double ambient = 0.02;
  double light_intensity = 1.0;
  double elevation_min = 30.0;  // light elevation above the base plane, degrees
  double elevation_max = 80.0;
  std::vector<Vec4> lights;  // explicit per-frame lights override the random schedule
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  int sparse_points = 121;
  int truth_resolution = 150;
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<Camera> cameras;
  std::vector<Vec4> lights;

  double albedo(double x, double y) const;
  int frames() const { return static_cast<int>(cameras.size()); }
};

/// Cameras on an arc in the x-z plane looking at the origin; lights from the seeded schedule.
/// Throws InvalidArgument for a degenerate camera setup.
SyntheticScene make_scene(const SceneSpec& spec);

/// JSON scene description; see README for the keys.
SceneSpec parse_scene(const std::string& json_text);
SceneSpec load_scene(const std::string& path);

struct Rendering {
  std::vector<ImageFrame> frames;
  Points3 sparse_points;            // p x 3
  std::vector<Points2> projections;  // per frame p x 2, NaN where hidden or outside
  Eigen::Matrix3Xd dense_truth;
  // Ground truth as seen from camera 0.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> hit;
  Eigen::ArrayXXd albedo;
  Eigen::ArrayXXd normal_x, normal_y, normal_z;
};

/// Ray-cast Lambertian rendering with ambient term and attached-shadow clamp:
/// I = rho (l0 + max(0, l_dir . n)), plus Gaussian noise, clipped to [0, 1].
Rendering render(const SyntheticScene& scene);

/// First intersection of a camera ray with the surface, if any.
bool intersect(const SurfaceModel& surface, const Vec3& origin, const Vec3& direction, Vec3& hit);

/// Mean nearest-neighbour distance from the reconstruction to the truth after
/// a best-fit similarity alignment (iterative closest point), in percent of
/// the truth bounding-box diagonal. Throws EmptyOverlap for empty input.
double error_3d(const Eigen::Matrix3Xd& reconstruction, const Eigen::Matrix3Xd& truth);

/// Per-point distances after the same alignment (for heatmaps).
Eigen::VectorXd aligned_distances(const Eigen::Matrix3Xd& reconstruction, const Eigen::Matrix3Xd& truth);

}  // namespace pmvps
