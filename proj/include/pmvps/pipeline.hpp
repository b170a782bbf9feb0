#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pmvps/align.hpp"
#include "pmvps/geometry.hpp"
#include "pmvps/image.hpp"
#include "pmvps/integrate.hpp"
#include "pmvps/refine.hpp"

namespace pmvps {

struct PipelineConfig {
  // Inputs: either a scene file (rendered on the fly) or images plus a sparse-point file.
  std::string scene_file;
  std::vector<std::string> images;
  std::string points_file;
  std::string truth_file;  // optional x y z text, enables the error metric
  std::string output_dir;  // empty: nothing is written

  int reference_view = -1;  // -1: middle frame
  double enlargement = 1.3;
  double tau_dark = 0.02;
  double tau_sat = 0.98;
  int template_max_size = 64;
  double solver_tol = 1e-8;
  int solver_iters = 300;
  bool facet_lighting = true;  // initialise every patch from lighting fitted to the coarse facets
  std::string integration = "spectral";  // or "poisson"
  std::string alignment = "tikhonov";    // or "additive"
  double align_beta = 0.1;
  double r_pair = 1.5;  // pairing radius in template pixels
  double lambda = 0.05;
  int refine_iters = 500;
  double refine_tol = 1e-8;
  int workers = 1;
  std::optional<std::uint64_t> seed;  // overrides the scene seed
  bool dump_stacks = false;
  bool write_traces = false;
  std::string resume_from;  // "" or "align": reuse the cached mesh and height fields

  /// Throws InvalidArgument for out-of-range values.
  void validate() const;
};

/// JSON config; relative paths are resolved against `base_dir`.
PipelineConfig parse_config(const std::string& json_text, const std::string& base_dir = "");
PipelineConfig load_config(const std::string& path);
std::string config_to_json(const PipelineConfig& config);

struct PatchReport {
  int triangle_id = -1;
  int frames = 0;
  int columns = 0;
  double missing = 1.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  double curvature = 0.0;
  std::string failure;  // empty when the patch was reconstructed
};

struct RunReport {
  std::vector<std::pair<std::string, double>> stage_seconds;
  std::vector<PatchReport> patches;
  int points = 0;
  int triangles = 0;
  int frames = 0;
  long pixels = 0;  // sum over patches of frames x template pixels
  double missing_percent = 0.0;
  double total_seconds = 0.0;
  std::optional<double> error_3d;
  std::vector<int> failed_patches;
  std::uint64_t seed = 0;
  int workers = 1;
  int dense_points = 0;
  double refine_energy = 0.0;
  double seam_before = 0.0;  // RMS seam gap over all overlap pairs
  double seam_after = 0.0;
  std::vector<std::string> warnings;
};

/// Report as JSON; timings can be left out for reproducibility checks.
std::string report_to_json(const RunReport& report, bool with_timings = true);
RunReport report_from_json(const std::string& json_text);

struct PipelineInputs {
  std::vector<ImageFrame> frames;
  Points3 points;
  std::vector<Points2> projections;
  std::optional<Eigen::Matrix3Xd> truth;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  DenseSurface surface;
  RunReport report;
  CoarseMesh mesh;
  std::vector<HeightField> height_fields;  // successful patches only
  AlignmentResult alignment;
};

PipelineInputs load_inputs(const PipelineConfig& config);
PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineConfig& config);
PipelineResult run_pipeline(const PipelineConfig& config);

/// Runs `job(i)` for every index in `order` on `workers` threads (in order when workers == 1).
/// The first exception thrown by a job is rethrown after all threads finish.
void run_jobs(const std::vector<int>& order, int workers, const std::function<void(int)>& job);

}  // namespace pmvps
