#include "pmvps/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include "json.hpp"

#include "pmvps/error.hpp"

namespace pmvps {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double deg(double d) { return d * std::numbers::pi / 180.0; }

struct CapShape {
  double R = 0.0;  // sphere radius
  bool valid = false;
};

CapShape cap_shape(const SurfaceModel& s) {
  CapShape c;
  if (s.cap_height > 0.0 && s.cap_radius > 0.0) {
    c.R = (s.cap_radius * s.cap_radius + s.cap_height * s.cap_height) / (2.0 * s.cap_height);
    c.valid = true;
  }
  return c;
}

struct Bounds {
  double zmin, zmax;
};

Bounds height_bounds(const SurfaceModel& s) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  const int n = 96;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      const double x = -s.extent + 2.0 * s.extent * i / n, y = -s.extent + 2.0 * s.extent * j / n;
      const double z = s.height(x, y);
      lo = std::min(lo, z);
      hi = std::max(hi, z);
    }
  }
  const double margin = 0.05 * (hi - lo) + 1e-3;
  return {lo - margin, hi + margin};
}

bool intersect_bounded(const SurfaceModel& s, const Bounds& bounds, const Vec3& o, const Vec3& d, Vec3& hit) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  const double lo[3] = {-s.extent, -s.extent, bounds.zmin}, hi[3] = {s.extent, s.extent, bounds.zmax};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d(a)) < 1e-15) {
      if (o(a) < lo[a] || o(a) > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - o(a)) / d(a), tb = (hi[a] - o(a)) / d(a);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return false;
  auto f = [&](double t) {
    const Vec3 p = o + t * d;
    return p.z() - s.height(p.x(), p.y());
  };
  double fa = f(t0);
  if (fa < 0.0) return false;  // entered through the side below the surface
  const int steps = 160;
  const double dt = (t1 - t0) / steps;
  double ta = t0;
  for (int k = 1; k <= steps; ++k) {
    const double tb = t0 + k * dt;
    const double fb = f(tb);
    if (fb <= 0.0) {
      double a = ta, b = tb;
      for (int it = 0; it < 60; ++it) {
        const double m = 0.5 * (a + b);
        (f(m) > 0.0 ? a : b) = m;
      }
      hit = o + 0.5 * (a + b) * d;
      return true;
    }
    ta = tb;
    fa = fb;
  }
  return false;
}

// Uniform bucket grid for nearest-neighbour queries.
class NearestIndex {
 public:
  explicit NearestIndex(const Eigen::Matrix3Xd& pts) : pts_(pts) {
    lo_ = pts.rowwise().minCoeff();
    const Vec3 hi = pts.rowwise().maxCoeff();
    const double diag = std::max((hi - lo_).norm(), 1e-12);
    h_ = diag / std::max(1.0, std::cbrt(static_cast<double>(pts.cols())));
    for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::ceil((hi(a) - lo_(a)) / h_)) + 1);
    start_.assign(static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2] + 1, 0);
    std::vector<int> cell(static_cast<size_t>(pts.cols()));
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      cell[static_cast<size_t>(i)] = flat(coords(pts.col(i)));
      ++start_[static_cast<size_t>(cell[static_cast<size_t>(i)]) + 1];
    }
    for (size_t k = 1; k < start_.size(); ++k) start_[k] += start_[k - 1];
    items_.resize(static_cast<size_t>(pts.cols()));
    std::vector<int> fill(start_.begin(), start_.end() - 1);
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      items_[static_cast<size_t>(fill[static_cast<size_t>(cell[static_cast<size_t>(i)])]++)] = static_cast<int>(i);
    }
  }

  int query(const Vec3& q, double& dist) const {
    const auto c = coords(q);
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    const int kmax = std::max({dims_[0], dims_[1], dims_[2]});
    for (int k = 0; k <= kmax; ++k) {
      for (int x = c[0] - k; x <= c[0] + k; ++x) {
        if (x < 0 || x >= dims_[0]) continue;
        for (int y = c[1] - k; y <= c[1] + k; ++y) {
          if (y < 0 || y >= dims_[1]) continue;
          for (int z = c[2] - k; z <= c[2] + k; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != k) continue;
            const int f = flat({x, y, z});
            for (int s = start_[static_cast<size_t>(f)]; s < start_[static_cast<size_t>(f) + 1]; ++s) {
              const int i = items_[static_cast<size_t>(s)];
              const double d2 = (pts_.col(i) - q).squaredNorm();
              if (d2 < best) {
                best = d2;
                arg = i;
              }
            }
          }
        }
      }
      if (arg >= 0 && best <= (k * h_) * (k * h_)) break;
    }
    dist = std::sqrt(best);
    return arg;
  }

 private:
  std::array<int, 3> coords(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>(std::floor((p(a) - lo_(a)) / h_)), 0, dims_[a] - 1);
    return c;
  }
  int flat(const std::array<int, 3>& c) const { return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0]; }

  const Eigen::Matrix3Xd& pts_;
  Vec3 lo_;
  double h_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<int> start_;
  std::vector<int> items_;
};

Eigen::Matrix3Xd align_icp(const Eigen::Matrix3Xd& recon, const Eigen::Matrix3Xd& truth, const NearestIndex& index) {
  Eigen::Matrix3Xd src = recon;
  if (recon.cols() < 3) return src;
  const double diag = (truth.rowwise().maxCoeff() - truth.rowwise().minCoeff()).norm();
  double prev = std::numeric_limits<double>::infinity();
  Eigen::Matrix3Xd dst(3, src.cols());
  for (int it = 0; it < 50; ++it) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < src.cols(); ++i) {
      double d = 0.0;
      dst.col(i) = truth.col(index.query(src.col(i), d));
      mean += d;
    }
    mean /= static_cast<double>(src.cols());
    if (prev - mean <= 1e-12 * diag) break;
    prev = mean;
    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
    src = (T.topLeftCorner<3, 3>() * src).colwise() + T.topRightCorner<3, 1>();
  }
  return src;
}

}  // namespace

double SurfaceModel::height(double x, double y) const {
  switch (kind) {
    case SurfaceKind::Plane:
      return slope.x() * x + slope.y() * y + offset;
    case SurfaceKind::SphereCap:
    case SurfaceKind::Potato: {
      double z = offset;
      const CapShape c = cap_shape(*this);
      const double r2 = x * x + y * y;
      if (c.valid && r2 < cap_radius * cap_radius) z += std::sqrt(c.R * c.R - r2) - (c.R - cap_height);
      if (kind == SurfaceKind::Potato) {
        for (const auto& b : bumps) {
          const double dx = x - b.center.x(), dy = y - b.center.y();
          z += b.height * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        }
      }
      return z;
    }
  }
  return 0.0;
}

Vec2 SurfaceModel::gradient(double x, double y) const {
  switch (kind) {
    case SurfaceKind::Plane:
      return slope;
    case SurfaceKind::SphereCap:
    case SurfaceKind::Potato: {
      Vec2 g = Vec2::Zero();
      const CapShape c = cap_shape(*this);
      const double r2 = x * x + y * y;
      if (c.valid && r2 < cap_radius * cap_radius) g = -Vec2(x, y) / std::sqrt(c.R * c.R - r2);
      if (kind == SurfaceKind::Potato) {
        for (const auto& b : bumps) {
          const double dx = x - b.center.x(), dy = y - b.center.y();
          const double e = b.height * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
          g -= e * Vec2(dx, dy) / (b.sigma * b.sigma);
        }
      }
      return g;
    }
  }
  return Vec2::Zero();
}

Vec3 SurfaceModel::normal(double x, double y) const {
  const Vec2 g = gradient(x, y);
  return Vec3(-g.x(), -g.y(), 1.0).normalized();
}

Vec3 Camera::project(const Vec3& X) const {
  const Vec3 c = R * X + t;
  const Vec3 p = K * c;
  return {p.x() / p.z(), p.y() / p.z(), c.z()};
}

Vec3 Camera::ray(double u, double v) const {
  return (R.transpose() * K.inverse() * Vec3(u, v, 1.0)).normalized();
}

double SyntheticScene::albedo(double x, double y) const {
  const double a = spec.albedo * (1.0 + spec.albedo_variation * std::sin(3.0 * x) * std::cos(2.0 * y));
  return std::clamp(a, 0.0, 1.0);
}

SyntheticScene make_scene(const SceneSpec& spec) {
  if (spec.views < 1 || spec.width < 8 || spec.height < 8 || !(spec.fill > 0.0) || !(spec.surface.extent > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "degenerate camera setup");
  }
  const Bounds b = height_bounds(spec.surface);
  if (!(spec.distance > b.zmax + 0.1 * spec.surface.extent)) {
    throw Error(ErrorCode::InvalidArgument, "degenerate camera: the arc radius must clear the surface");
  }
  SyntheticScene scene;
  scene.spec = spec;
  const double focal = spec.fill * 0.5 * std::min(spec.width, spec.height) * spec.distance / spec.surface.extent;
  for (int g = 0; g < spec.views; ++g) {
    double theta = 0.0;
    if (!spec.static_view && spec.views > 1) theta = deg(spec.arc_degrees) * (g / (spec.views - 1.0) - 0.5);
    Camera cam;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.K << focal, 0, 0.5 * (spec.width - 1), 0, focal, 0.5 * (spec.height - 1), 0, 0, 1;
    const Vec3 C = spec.distance * Vec3(std::sin(theta), 0.0, std::cos(theta));
    const Vec3 z = -C.normalized();
    const Vec3 x(std::cos(theta), 0.0, -std::sin(theta));
    const Vec3 y = z.cross(x);
    cam.R.row(0) = x.transpose();
    cam.R.row(1) = y.transpose();
    cam.R.row(2) = z.transpose();
    cam.t = -cam.R * C;
    scene.cameras.push_back(cam);
  }
  if (!spec.lights.empty()) {
    if (static_cast<int>(spec.lights.size()) != spec.views) {
      throw Error(ErrorCode::InvalidArgument, "explicit lights must match the number of views");
    }
    scene.lights = spec.lights;
  } else {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> elev(deg(spec.elevation_min), deg(spec.elevation_max));
    std::uniform_real_distribution<double> azim(0.0, 2.0 * std::numbers::pi);
    for (int g = 0; g < spec.views; ++g) {
      const double e = elev(rng), a = azim(rng);
      Vec4 l;
      l << spec.ambient, spec.light_intensity * std::cos(e) * std::cos(a), spec.light_intensity * std::cos(e) * std::sin(a),
          spec.light_intensity * std::sin(e);
      scene.lights.push_back(l);
    }
  }
  for (const auto& l : scene.lights) {
    if (l(0) < 0.0) throw Error(ErrorCode::InvalidArgument, "ambient light must be non-negative");
  }
  return scene;
}

bool intersect(const SurfaceModel& surface, const Vec3& origin, const Vec3& direction, Vec3& hit) {
  return intersect_bounded(surface, height_bounds(surface), origin, direction, hit);
}

Rendering render(const SyntheticScene& scene) {
  const SceneSpec& spec = scene.spec;
  const SurfaceModel& surf = spec.surface;
  const Bounds bounds = height_bounds(surf);
  Rendering out;
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int W = spec.width, H = spec.height;

  for (int g = 0; g < scene.frames(); ++g) {
    const Camera& cam = scene.cameras[static_cast<size_t>(g)];
    const Vec3 C = cam.center();
    const Vec4& l = scene.lights[static_cast<size_t>(g)];
    ImageFrame frame;
    frame.frame_id = g;
    frame.pixels = Eigen::ArrayXXd::Zero(H, W);
    if (g == 0) {
      out.hit = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(H, W, false);
      out.albedo = Eigen::ArrayXXd::Zero(H, W);
      out.normal_x = out.normal_y = out.normal_z = Eigen::ArrayXXd::Zero(H, W);
    }
    for (int c = 0; c < W; ++c) {
      for (int r = 0; r < H; ++r) {
        Vec3 X;
        if (!intersect_bounded(surf, bounds, C, cam.ray(c, r), X)) continue;
        const Vec3 n = surf.normal(X.x(), X.y());
        const double rho = scene.albedo(X.x(), X.y());
        double value = rho * (l(0) + std::max(0.0, l.tail<3>().dot(n)));
        if (spec.noise_sigma > 0.0) value += spec.noise_sigma * noise(rng);
        frame.pixels(r, c) = std::clamp(value, 0.0, 1.0);
        if (g == 0) {
          out.hit(r, c) = true;
          out.albedo(r, c) = rho;
          out.normal_x(r, c) = n.x();
          out.normal_y(r, c) = n.y();
          out.normal_z(r, c) = n.z();
        }
      }
    }
    out.frames.push_back(std::move(frame));
  }

  // Sparse points on a jittered grid; the outer ring stays on the grid lines.
  const int side = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.sparse_points)))));
  const double span = 0.97 * surf.extent;
  const double step = 2.0 * span / (side - 1);
  std::mt19937_64 jitter_rng(spec.seed + 17);
  std::uniform_real_distribution<double> jitter(-0.3 * step, 0.3 * step);
  out.sparse_points.resize(side * side, 3);
  int p = 0;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      double x = -span + i * step, y = -span + j * step;
      const double jx = jitter(jitter_rng), jy = jitter(jitter_rng);
      if (i > 0 && i < side - 1) x += jx;
      if (j > 0 && j < side - 1) y += jy;
      out.sparse_points.row(p++) << x, y, surf.height(x, y);
    }
  }
  for (int g = 0; g < scene.frames(); ++g) {
    const Camera& cam = scene.cameras[static_cast<size_t>(g)];
    const Vec3 C = cam.center();
    Points2 proj(out.sparse_points.rows(), 2);
    for (Eigen::Index k = 0; k < out.sparse_points.rows(); ++k) {
      const Vec3 X = out.sparse_points.row(k).transpose();
      const Vec3 uvz = cam.project(X);
      bool visible = uvz.z() > 0.0 && uvz.x() >= 0.0 && uvz.y() >= 0.0 && uvz.x() <= W - 1 && uvz.y() <= H - 1;
      if (visible) {
        Vec3 first;
        const Vec3 dir = (X - C).normalized();
        if (intersect_bounded(surf, bounds, C, dir, first)) {
          visible = (first - C).norm() >= (X - C).norm() - 1e-4 * surf.extent;
        }
      }
      if (visible) {
        proj.row(k) << uvz.x(), uvz.y();
      } else {
        proj.row(k) << kNaN, kNaN;
      }
    }
    out.projections.push_back(std::move(proj));
  }

  const int n = std::max(2, spec.truth_resolution);
  out.dense_truth.resize(3, n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = -surf.extent + 2.0 * surf.extent * i / (n - 1);
      const double y = -surf.extent + 2.0 * surf.extent * j / (n - 1);
      out.dense_truth.col(i * n + j) << x, y, surf.height(x, y);
    }
  }
  return out;
}

Eigen::VectorXd aligned_distances(const Eigen::Matrix3Xd& reconstruction, const Eigen::Matrix3Xd& truth) {
  if (reconstruction.cols() == 0 || truth.cols() == 0) {
    throw Error(ErrorCode::EmptyOverlap, "error metric needs a non-empty reconstruction and truth");
  }
  const NearestIndex index(truth);
  const Eigen::Matrix3Xd moved = align_icp(reconstruction, truth, index);
  Eigen::VectorXd d(moved.cols());
  for (Eigen::Index i = 0; i < moved.cols(); ++i) index.query(moved.col(i), d(i));
  return d;
}

double error_3d(const Eigen::Matrix3Xd& reconstruction, const Eigen::Matrix3Xd& truth) {
  const Eigen::VectorXd d = aligned_distances(reconstruction, truth);
  const double diag = (truth.rowwise().maxCoeff() - truth.rowwise().minCoeff()).norm();
  if (!(diag > 0.0)) throw Error(ErrorCode::EmptyOverlap, "truth has zero extent");
  return 100.0 * d.mean() / diag;
}

// ---- scene files -----------------------------------------------------------

SceneSpec parse_scene(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("scene file is not valid JSON: ") + e.what());
  }
  SceneSpec s;
  try {
    if (j.contains("surface")) {
      const auto& js = j["surface"];
      const std::string type = js.value("type", "plane");
      if (type == "plane") {
        s.surface.kind = SurfaceKind::Plane;
      } else if (type == "sphere_cap") {
        s.surface.kind = SurfaceKind::SphereCap;
      } else if (type == "potato") {
        s.surface.kind = SurfaceKind::Potato;
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown surface type '" + type + "'");
      }
      s.surface.extent = js.value("extent", s.surface.extent);
      if (js.contains("slope")) s.surface.slope = Vec2(js["slope"][0].get<double>(), js["slope"][1].get<double>());
      s.surface.offset = js.value("offset", s.surface.offset);
      s.surface.cap_height = js.value("cap_height", s.surface.cap_height);
      s.surface.cap_radius = js.value("cap_radius", s.surface.cap_radius);
      if (js.contains("bumps") && js["bumps"].is_array()) {
        for (const auto& b : js["bumps"]) {
          s.surface.bumps.push_back({Vec2(b.at("x").get<double>(), b.at("y").get<double>()), b.at("height").get<double>(),
                                     b.value("sigma", 0.3)});
        }
      } else if (js.contains("bumps")) {
        const int count = js["bumps"].get<int>();
        const double h = js.value("bump_height", 0.1), sigma = js.value("bump_sigma", 0.3);
        std::mt19937_64 rng(j.value("seed", std::uint64_t{1}) + 101);
        std::uniform_real_distribution<double> pos(-0.7 * s.surface.extent, 0.7 * s.surface.extent);
        std::uniform_real_distribution<double> amp(-h, h);
        for (int k = 0; k < count; ++k) {
          const double x = pos(rng), y = pos(rng);
          s.surface.bumps.push_back({Vec2(x, y), amp(rng), sigma});
        }
      }
    }
    s.albedo = j.value("albedo", s.albedo);
    s.albedo_variation = j.value("albedo_variation", s.albedo_variation);
    if (j.contains("cameras")) {
      const auto& jc = j["cameras"];
      s.views = jc.value("views", s.views);
      s.arc_degrees = jc.value("arc_degrees", s.arc_degrees);
      s.distance = jc.value("distance", s.distance);
      s.width = jc.value("width", s.width);
      s.height = jc.value("height", s.height);
      s.fill = jc.value("fill", s.fill);
      s.static_view = jc.value("static", s.static_view);
    }
    if (j.contains("lights")) {
      const auto& jl = j["lights"];
      s.ambient = jl.value("ambient", s.ambient);
      s.light_intensity = jl.value("intensity", s.light_intensity);
      s.elevation_min = jl.value("elevation_min", s.elevation_min);
      s.elevation_max = jl.value("elevation_max", s.elevation_max);
      if (jl.contains("explicit")) {
        for (const auto& l : jl["explicit"]) {
          s.lights.emplace_back(l[0].get<double>(), l[1].get<double>(), l[2].get<double>(), l[3].get<double>());
        }
      }
    }
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    s.sparse_points = j.value("sparse_points", s.sparse_points);
    s.truth_resolution = j.value("truth_resolution", s.truth_resolution);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad scene description: ") + e.what());
  }
  return s;
}

SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open scene file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

}  // namespace pmvps
