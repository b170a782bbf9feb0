#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pmvps/geometry.hpp"
#include "pmvps/register.hpp"

namespace pmvps {

using LightMatrix = Eigen::Matrix<double, Eigen::Dynamic, 4>;    // f x 4, one light per row
using SurfaceMatrix = Eigen::Matrix<double, 4, Eigen::Dynamic>;  // 4 x b, columns rho * [1; n]

/// First-order spherical-harmonic shading: light . (albedo * [1; normal]).
/// Throws InvalidArgument for a non-unit normal (beyond 1e-6) or negative albedo.
double shade(const Vec4& light, double albedo, const Vec3& normal);

struct ManifoldPoint {
  Vec4 column = Vec4::Zero();
  bool degenerate = false;  // zero tail: normal undefined, +z substituted
};

/// Least-squares nearest point of the set { rho * [1; n] : |n| = 1, rho >= 0 }:
/// n = tail / |tail|, rho = max(0, (head + |tail|) / 2).
ManifoldPoint project_manifold(const Vec4& column);

struct SolverOptions {
  double tol = 1e-8;        // relative objective change
  int max_iters = 300;      // manifold-constrained outer iterations
  int warmup_iters = 300;   // unconstrained rank-4 iterations when no init is given
  int restarts = 3;         // extra seeded random starts for the unconstrained fit
  double ridge = 1e-10;     // relative proximal damping in the least-squares steps
};

struct PhotometricFactors {
  LightMatrix lighting;
  SurfaceMatrix surface;
  double residual = 0.0;
  std::vector<double> trace;  // masked objective, trace[0] at the start of the constrained phase
  int iterations = 0;
  bool converged = false;
  std::vector<int> degenerate_columns;

  double albedo(int i) const { return surface(0, i); }
  Vec3 normal(int i) const;
};

/// Masked objective |D .* (J - L N)|^2.
double masked_objective(const Eigen::MatrixXd& intensities, const BoolMatrix& observed, const LightMatrix& lighting,
                        const SurfaceMatrix& surface);

/// Factor a patch stack into lighting and on-manifold surface columns.
///
/// Without `init`: rank-4 factorization of the mean-filled matrix, masked
/// alternating least squares, then a closed-form gauge that puts the columns on
/// the light cone. With `init` the gauge of the initial factors is kept.
/// In both cases the final phase alternates an exact lighting step with a
/// projected surface step that is only accepted when it does not increase the
/// objective, so the recorded trace is non-increasing.
PhotometricFactors solve_patch(const PatchStack& stack, const std::optional<PhotometricFactors>& init = std::nullopt,
                               const SolverOptions& options = {});

PhotometricFactors solve_masked(const Eigen::MatrixXd& intensities, const BoolMatrix& observed,
                                const std::optional<PhotometricFactors>& init = std::nullopt,
                                const SolverOptions& options = {});

/// 4x4 transform A making A * N lie on the light cone as closely as possible, from the
/// null vector of the quadratic constraints n' Q n = 0 with Q = A' diag(1,-1,-1,-1) A.
/// Empty when Q does not have the required signature.
std::optional<Eigen::Matrix4d> cone_gauge(const SurfaceMatrix& surface);

/// Lighting expressed in a facet's template frame: [l0, R * l_dir].
LightMatrix rotate_lighting(const LightMatrix& world, const Mat33& rotation);

struct FacetLightingOptions {
  double min_row_coverage = 0.9;  // fraction of observed pixels for a facet mean to count
  int iterations = 50;
};

/// World lighting from the coarse geometry: facet-mean intensities Y(g, mu) are
/// fitted by rho_mu * l_g . [1; N_mu] with the facet normals N_mu fixed.
LightMatrix estimate_lighting_from_facets(std::span<const PatchStack> stacks, std::span<const Vec3> facet_normals,
                                          int frames, const FacetLightingOptions& options = {});

/// Per-column least squares for the surface given lighting, projected on the manifold.
PhotometricFactors factors_from_lighting(const PatchStack& stack, const LightMatrix& lighting);

/// Least-squares 4x4 map A with A * estimate ~ truth (ambiguity-aware comparisons).
Eigen::Matrix4d fit_gauge(const SurfaceMatrix& estimate, const SurfaceMatrix& truth);

}  // namespace pmvps
