#include "pmvps/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>

#include "pmvps/decompose.hpp"
#include "pmvps/error.hpp"
#include "pmvps/geometry.hpp"

namespace pmvps {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Sum of angular errors (degrees) after mapping the estimate onto the truth with the best 4x4 gauge.
double angular_error_sum(const SurfaceMatrix& estimate, const SurfaceMatrix& truth) {
  const Eigen::Matrix4d A = fit_gauge(estimate, truth);
  const SurfaceMatrix mapped = A * estimate;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < mapped.cols(); ++i) {
    const Vec3 n = mapped.col(i).tail<3>();
    const Vec3 t = truth.col(i).tail<3>();
    const double c = n.norm() * t.norm() > 0.0 ? n.dot(t) / (n.norm() * t.norm()) : -1.0;
    sum += std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / std::numbers::pi;
  }
  return sum;
}

template <typename M>
M gather(const M& m, const std::vector<int>& cols) {
  M out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

}  // namespace

BenchResult compare_piecewise_global(const Eigen::MatrixXd& intensities, const BoolMatrix& observed,
                                     const std::vector<std::vector<int>>& groups, const SurfaceMatrix& truth,
                                     const SolverOptions& options, const std::vector<Vec3>& facet_normals) {
  if (intensities.rows() != observed.rows() || intensities.cols() != observed.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "intensities and mask differ in shape");
  }
  if (groups.empty()) throw Error(ErrorCode::EmptyInput, "no column groups");
  const bool with_truth = truth.cols() > 0;
  if (with_truth && truth.cols() != intensities.cols()) throw Error(ErrorCode::ShapeMismatch, "truth has the wrong width");
  if (!facet_normals.empty() && facet_normals.size() != groups.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one facet normal per group is required");
  }

  std::vector<int> all;
  for (const auto& g : groups) {
    for (int c : g) {
      if (c < 0 || c >= intensities.cols()) throw Error(ErrorCode::InvalidArgument, "column index out of range");
      all.push_back(c);
    }
  }

  BenchResult result;
  result.patches = static_cast<int>(groups.size());
  result.frames = static_cast<int>(intensities.rows());
  result.columns = static_cast<int>(all.size());
  long seen = 0;
  for (int c : all) seen += observed.col(c).count();
  result.missing_percent = all.empty() ? 100.0 : 100.0 * (1.0 - static_cast<double>(seen) /
                                                              (static_cast<double>(all.size()) * result.frames));

  {
    const Eigen::MatrixXd J = gather(intensities, all);
    const BoolMatrix D = gather(observed, all);
    const auto start = std::chrono::steady_clock::now();
    const PhotometricFactors f = solve_masked(J, D, std::nullopt, options);
    result.global.seconds = seconds_since(start);
    result.global.residual = f.residual;
    result.global.iterations = f.iterations;
    result.global.converged = f.converged ? 1 : 0;
    if (with_truth) result.global.normal_error = angular_error_sum(f.surface, gather(truth, all)) / static_cast<double>(all.size());
  }

  double error_sum = 0.0;
  long error_count = 0;
  const auto start = std::chrono::steady_clock::now();
  std::vector<PatchStack> stacks(groups.size());
  for (size_t k = 0; k < groups.size(); ++k) {
    stacks[k].intensities = gather(intensities, groups[k]);
    stacks[k].observed = gather(observed, groups[k]);
  }
  std::optional<LightMatrix> shared;
  if (!facet_normals.empty()) shared = estimate_lighting_from_facets(stacks, facet_normals, result.frames);
  std::vector<PhotometricFactors> pieces(groups.size());
  std::vector<char> ok(groups.size(), 0);
  for (size_t k = 0; k < groups.size(); ++k) {
    try {
      std::optional<PhotometricFactors> init;
      if (shared && stacks[k].observed_count() > 0) init = factors_from_lighting(stacks[k], *shared);
      pieces[k] = solve_masked(stacks[k].intensities, stacks[k].observed, init, options);
      ok[k] = 1;
    } catch (const Error&) {
      ++result.piecewise.failed;
    }
  }
  result.piecewise.seconds = seconds_since(start);
  for (size_t k = 0; k < groups.size(); ++k) {
    if (!ok[k]) continue;
    result.piecewise.residual += pieces[k].residual;
    result.piecewise.iterations += pieces[k].iterations;
    result.piecewise.converged += pieces[k].converged ? 1 : 0;
    if (with_truth) {
      error_sum += angular_error_sum(pieces[k].surface, gather(truth, groups[k]));
      error_count += static_cast<long>(groups[k].size());
    }
  }
  if (with_truth && error_count > 0) result.piecewise.normal_error = error_sum / static_cast<double>(error_count);
  return result;
}

BenchResult benchmark_piecewise_vs_global(const SyntheticScene& scene, const BenchOptions& options) {
  if (!scene.spec.static_view) throw Error(ErrorCode::InvalidArgument, "the global baseline needs a static-view scene");
  const Rendering r = render(scene);
  const int f = static_cast<int>(r.frames.size());
  const int ref = options.reference_view;
  if (ref < 0 || ref >= f) throw Error(ErrorCode::InvalidArgument, "reference view out of range");
  const CoarseMesh mesh = build_mesh(r.sparse_points, r.projections, ref);
  if (mesh.triangle_count() < 4) throw Error(ErrorCode::InvalidArgument, "scene too small to split: fewer than 4 patches");

  const int rows = r.frames.front().rows(), cols = r.frames.front().cols();
  // Each object pixel goes to the first triangle containing its centre.
  std::vector<int> owner(static_cast<size_t>(rows) * cols, -1);
  std::vector<std::vector<int>> pixel_groups;
  std::vector<Vec3> normals;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const PatchMask mask = rasterize_mask(mesh.view_triangle(ref, t), rows, cols, t, ref);
    std::vector<int> group;
    for (int flat : mask.pixel_index_set) {
      const int row = flat % rows, col = flat / rows;
      if (!r.hit(row, col) || owner[static_cast<size_t>(flat)] >= 0) continue;
      owner[static_cast<size_t>(flat)] = t;
      group.push_back(flat);
    }
    if (group.empty()) continue;
    pixel_groups.push_back(std::move(group));
    normals.push_back(facet_frame(mesh.facet(t)).facet_normal);
  }
  if (pixel_groups.size() < 4) throw Error(ErrorCode::InvalidArgument, "scene too small to split: fewer than 4 patches");

  long b = 0;
  for (const auto& g : pixel_groups) b += static_cast<long>(g.size());
  Eigen::MatrixXd J(f, b);
  BoolMatrix D(f, b);
  SurfaceMatrix truth(4, b);
  std::vector<std::vector<int>> groups;
  Eigen::Index k = 0;
  for (const auto& g : pixel_groups) {
    std::vector<int> idx;
    for (int flat : g) {
      const int row = flat % rows, col = flat / rows;
      for (int i = 0; i < f; ++i) {
        const double v = r.frames[static_cast<size_t>(i)].pixels(row, col);
        J(i, k) = v;
        D(i, k) = v >= options.thresholds.dark && v <= options.thresholds.saturated;
      }
      const double rho = r.albedo(row, col);
      truth.col(k) << rho, rho * r.normal_x(row, col), rho * r.normal_y(row, col), rho * r.normal_z(row, col);
      idx.push_back(static_cast<int>(k));
      ++k;
    }
    groups.push_back(std::move(idx));
  }
  return compare_piecewise_global(J, D, groups, truth, options.solver,
                                  options.facet_lighting ? normals : std::vector<Vec3>{});
}

}  // namespace pmvps
