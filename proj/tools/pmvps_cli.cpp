#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pmvps/bench.hpp"
#include "pmvps/error.hpp"
#include "pmvps/io.hpp"
#include "pmvps/pipeline.hpp"
#include "pmvps/synth.hpp"

namespace fs = std::filesystem;

namespace {

void print_report(const pmvps::RunReport& r) {
  std::printf("points %d  triangles %d  frames %d\n", r.points, r.triangles, r.frames);
  std::printf("pixels %ld  missing %.2f%%\n", r.pixels, r.missing_percent);
  if (r.error_3d) std::printf("3D error %.3f%%\n", *r.error_3d);
  std::printf("dense points %d  refine energy %.6g\n", r.dense_points, r.refine_energy);
  std::printf("seam RMS before %.6g  after %.6g\n", r.seam_before, r.seam_after);
  for (const auto& [stage, s] : r.stage_seconds) std::printf("  %-10s %9.3f s\n", stage.c_str(), s);
  std::printf("total %.3f s  workers %d  seed %llu\n", r.total_seconds, r.workers,
              static_cast<unsigned long long>(r.seed));
  if (!r.failed_patches.empty()) {
    std::printf("failed patches:");
    for (int t : r.failed_patches) std::printf(" %d", t);
    std::printf("\n");
  }
  for (const auto& w : r.warnings) std::printf("warning: %s\n", w.c_str());
}

int reconstruct(const std::string& config_path, const std::string& output, int workers, const std::string& resume) {
  pmvps::PipelineConfig config = pmvps::load_config(config_path);
  if (!output.empty()) config.output_dir = output;
  if (workers > 0) config.workers = workers;
  if (!resume.empty()) config.resume_from = resume;
  if (config.output_dir.empty()) config.output_dir = "run";
  config.validate();
  const pmvps::PipelineResult result = pmvps::run_pipeline(config);
  print_report(result.report);
  std::printf("outputs in %s\n", config.output_dir.c_str());
  return 0;
}

int synth(const std::string& scene_path, const std::string& output) {
  const pmvps::SceneSpec spec = pmvps::load_scene(scene_path);
  const pmvps::SyntheticScene scene = pmvps::make_scene(spec);
  const pmvps::Rendering r = pmvps::render(scene);
  fs::create_directories(output);
  nlohmann::json config;
  for (const auto& frame : r.frames) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03d.pgm", frame.frame_id);
    pmvps::write_pgm16((fs::path(output) / name).string(), frame.pixels);
    config["images"].push_back(name);
  }
  pmvps::SparsePoints sparse;
  sparse.points = r.sparse_points;
  sparse.projections = r.projections;
  for (Eigen::Index i = 0; i < r.sparse_points.rows(); ++i) sparse.labels.push_back("p" + std::to_string(i));
  pmvps::write_sparse_points((fs::path(output) / "points.txt").string(), sparse);
  pmvps::write_xyz((fs::path(output) / "truth.xyz").string(), r.dense_truth);
  config["points_file"] = "points.txt";
  config["truth_file"] = "truth.xyz";
  config["output_dir"] = "run";
  config["seed"] = spec.seed;
  std::ofstream((fs::path(output) / "config.json")) << config.dump(2) << '\n';
  std::printf("wrote %zu frames, %ld sparse points and %ld truth points to %s\n", r.frames.size(),
              static_cast<long>(r.sparse_points.rows()), static_cast<long>(r.dense_truth.cols()), output.c_str());
  return 0;
}

int bench(const std::string& scene_path, int iters) {
  pmvps::SceneSpec spec = pmvps::load_scene(scene_path);
  spec.static_view = true;
  pmvps::BenchOptions options;
  if (iters > 0) options.solver.max_iters = options.solver.warmup_iters = iters;
  const pmvps::BenchResult b = pmvps::benchmark_piecewise_vs_global(pmvps::make_scene(spec), options);
  std::printf("patches %d  frames %d  columns %d  missing %.2f%%\n", b.patches, b.frames, b.columns, b.missing_percent);
  std::printf("%-10s %12s %14s %14s %10s %10s\n", "path", "seconds", "residual", "normal err", "iters", "converged");
  std::printf("%-10s %12.3f %14.6g %13.3f° %10ld %8d/1\n", "global", b.global.seconds, b.global.residual,
              b.global.normal_error, b.global.iterations, b.global.converged);
  std::printf("%-10s %12.3f %14.6g %13.3f° %10ld %6d/%d\n", "piecewise", b.piecewise.seconds, b.piecewise.residual,
              b.piecewise.normal_error, b.piecewise.iterations, b.piecewise.converged, b.patches);
  std::printf("speed ratio %.2f\n", b.ratio());
  return 0;
}

int report(const std::string& run_dir) {
  std::ifstream in(fs::path(run_dir) / "report.json");
  if (!in) throw pmvps::Error(pmvps::ErrorCode::Io, "no report.json in " + run_dir);
  std::stringstream ss;
  ss << in.rdbuf();
  print_report(pmvps::report_from_json(ss.str()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Piecewise multi-view photometric stereo"};
  app.require_subcommand(1);

  std::string config_path, output, resume;
  int workers = 0;
  auto* rec = app.add_subcommand("reconstruct", "run the full pipeline from a JSON config");
  rec->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
  rec->add_option("-o,--output", output, "output directory (overrides the config)");
  rec->add_option("-j,--workers", workers, "worker threads (overrides the config)");
  rec->add_option("--resume-from", resume, "re-run from a cached stage")->check(CLI::IsMember({"align"}));

  std::string scene_path, synth_out = "synthetic";
  auto* syn = app.add_subcommand("synth", "render a synthetic scene to images, sparse points and truth");
  syn->add_option("scene", scene_path, "scene file")->required()->check(CLI::ExistingFile);
  syn->add_option("-o,--output", synth_out, "output directory");

  std::string bench_scene;
  int iters = 0;
  auto* ben = app.add_subcommand("bench", "piecewise against global solve on a static-view rendering");
  ben->add_option("scene", bench_scene, "scene file")->required()->check(CLI::ExistingFile);
  ben->add_option("--iters", iters, "solver iteration cap");

  std::string run_dir;
  auto* rep = app.add_subcommand("report", "print the report of a finished run");
  rep->add_option("run_dir", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*rec) return reconstruct(config_path, output, workers, resume);
    if (*syn) return synth(scene_path, synth_out);
    if (*ben) return bench(bench_scene, iters);
    if (*rep) return report(run_dir);
  } catch (const pmvps::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
