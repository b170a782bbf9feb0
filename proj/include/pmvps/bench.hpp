#pragma once

#include <vector>

#include <Eigen/Core>

#include "pmvps/photometric.hpp"
#include "pmvps/synth.hpp"

namespace pmvps {

struct SolveTiming {
  double seconds = 0.0;
  double residual = 0.0;       // masked objective, summed over patches for the piecewise path
  double normal_error = 0.0;   // mean angular error in degrees after the best-fit gauge
  long iterations = 0;         // summed over patches
  int converged = 0;           // solves that met the tolerance
  int failed = 0;
};

struct BenchResult {
  int patches = 0;
  int frames = 0;
  int columns = 0;
  double missing_percent = 0.0;
  SolveTiming global;
  SolveTiming piecewise;
  double ratio() const { return piecewise.seconds > 0.0 ? global.seconds / piecewise.seconds : 0.0; }
};

/// Static-view comparison on an explicit column partition.
///
/// `groups` lists column indices of `intensities`; the global solve uses the
/// union of all groups in the listed order, so a single group reproduces the
/// global problem exactly. `truth` holds rho * [1; n] per column and may be
/// empty (no error column then). Each solve's gauge is fitted separately.
///
/// With `facet_normals` (one per group) the piecewise path runs as in the
/// pipeline: a shared lighting is estimated from the facet means and every
/// group starts from it; that estimate is part of the piecewise time. Without
/// them every group starts from the closed-form initialization, like the global solve.
BenchResult compare_piecewise_global(const Eigen::MatrixXd& intensities, const BoolMatrix& observed,
                                     const std::vector<std::vector<int>>& groups, const SurfaceMatrix& truth,
                                     const SolverOptions& options = {}, const std::vector<Vec3>& facet_normals = {});

/// Solver budget for both paths: generous, so that the timings compare runs to convergence.
inline SolverOptions bench_solver_options() {
  SolverOptions o;
  o.max_iters = 1000;
  o.warmup_iters = 1000;
  return o;
}

struct BenchOptions {
  SolverOptions solver = bench_solver_options();
  IntensityThresholds thresholds;
  int reference_view = 0;
  bool facet_lighting = true;  // piecewise path initialized from the coarse facets
};

/// Renders a static-view scene, partitions the object pixels of the reference
/// image by coarse-mesh triangle and compares one global masked solve with the
/// per-triangle solves. Throws InvalidArgument for a moving camera or fewer than 4 patches.
BenchResult benchmark_piecewise_vs_global(const SyntheticScene& scene, const BenchOptions& options = {});

}  // namespace pmvps
