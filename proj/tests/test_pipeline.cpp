#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <Eigen/Dense>

#include "doctest.h"
#include "pmvps/error.hpp"
#include "pmvps/io.hpp"
#include "pmvps/pipeline.hpp"
#include "pmvps/synth.hpp"

using namespace pmvps;
namespace fs = std::filesystem;

namespace {

SceneSpec plane_spec() {
  SceneSpec s;
  s.surface.kind = SurfaceKind::Plane;
  s.surface.slope = Vec2(0.15, -0.1);
  s.views = 10;
  s.arc_degrees = 40;
  s.width = 112;
  s.height = 112;
  s.sparse_points = 25;
  s.truth_resolution = 60;
  s.seed = 21;
  return s;
}

PipelineInputs inputs_from(const SceneSpec& spec) {
  Rendering r = render(make_scene(spec));
  PipelineInputs in;
  in.frames = std::move(r.frames);
  in.points = r.sparse_points;
  in.projections = r.projections;
  in.truth = r.dense_truth;
  in.seed = spec.seed;
  return in;
}

PipelineConfig base_config() {
  PipelineConfig c;
  c.scene_file = "unused.json";
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pmvps_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config validation") {
  PipelineConfig c = base_config();
  CHECK_NOTHROW(c.validate());
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = base_config();
  c.tau_dark = 0.99;
  CHECK_THROWS_AS(c.validate(), Error);
  c = base_config();
  c.integration = "fourier";
  CHECK_THROWS_AS(c.validate(), Error);
  c = base_config();
  c.scene_file.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(parse_config("{\"workers\": \"many\", \"scene_file\": \"s.json\"}", ""), Error);
  CHECK_THROWS_AS(parse_config("[1, 2", ""), Error);
}

TEST_CASE("config round trip and relative paths") {
  PipelineConfig c = parse_config(R"({"scene_file": "scene.json", "output_dir": "out", "lambda": 0.2,
                                      "workers": 3, "seed": 17, "alignment": "additive"})",
                                  "/data/run");
  CHECK(c.scene_file == "/data/run/scene.json");
  CHECK(c.output_dir == "/data/run/out");
  CHECK(c.lambda == 0.2);
  CHECK(c.workers == 3);
  CHECK(c.seed == 17u);
  const PipelineConfig back = parse_config(config_to_json(c), "/elsewhere");
  CHECK(back.scene_file == c.scene_file);
  CHECK(back.alignment == "additive");
  CHECK(back.seed == c.seed);
}

TEST_CASE("report round trip") {
  RunReport r;
  r.stage_seconds = {{"mesh", 0.5}, {"solve", 2.0}};
  r.points = 10;
  r.triangles = 12;
  r.frames = 4;
  r.pixels = 1234;
  r.missing_percent = 12.5;
  r.error_3d = 0.7;
  r.failed_patches = {3};
  r.patches.push_back({3, 4, 20, 1.0, 0.0, 0, false, 0.0, "AllUnobserved: nothing"});
  const RunReport back = report_from_json(report_to_json(r));
  CHECK(back.points == 10);
  CHECK(back.pixels == 1234);
  CHECK(back.error_3d == 0.7);
  CHECK(back.failed_patches == std::vector<int>{3});
  REQUIRE(back.patches.size() == 1);
  CHECK(back.patches[0].failure == r.patches[0].failure);
  CHECK(back.stage_seconds.size() == 2);
  CHECK(report_to_json(r, false).find("seconds") == std::string::npos);
}

TEST_CASE("job pool runs everything and forwards failures") {
  std::vector<int> order(50);
  for (int i = 0; i < 50; ++i) order[static_cast<size_t>(i)] = i;
  for (int workers : {1, 4}) {
    std::vector<std::atomic<int>> hits(50);
    run_jobs(order, workers, [&](int i) { hits[static_cast<size_t>(i)]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(run_jobs(order, workers, [](int i) {
                      if (i == 17) throw std::runtime_error("boom");
                    }),
                    std::runtime_error);
  }
}

TEST_CASE("plane scene end to end") {
  const SceneSpec spec = plane_spec();
  const PipelineInputs in = inputs_from(spec);
  PipelineConfig c = base_config();
  const PipelineResult r = run_pipeline(in, c);
  REQUIRE(r.report.error_3d.has_value());
  CHECK(*r.report.error_3d < 1.0);
  CHECK(r.report.frames == spec.views);
  CHECK(r.report.points == 25);
  CHECK(r.report.triangles == r.mesh.triangle_count());
  CHECK(r.report.patches.size() == static_cast<size_t>(r.mesh.triangle_count()));
  long pixels = 0;
  for (const auto& p : r.report.patches) pixels += static_cast<long>(p.frames) * p.columns;
  CHECK(r.report.pixels == pixels);
  CHECK(r.report.failed_patches.empty());
  CHECK(r.surface.size() == r.report.dense_points);
}

TEST_CASE("runs are deterministic and worker-count independent") {
  const PipelineInputs in = inputs_from(plane_spec());
  PipelineConfig c = base_config();
  const PipelineResult a = run_pipeline(in, c);
  const PipelineResult b = run_pipeline(in, c);
  CHECK(report_to_json(a.report, false) == report_to_json(b.report, false));
  CHECK((a.surface.points - b.surface.points).cwiseAbs().maxCoeff() == 0.0);
  c.workers = 4;
  const PipelineResult d = run_pipeline(in, c);
  REQUIRE(d.surface.size() == a.surface.size());
  CHECK((a.surface.points - d.surface.points).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("solve stage scales to four workers") {
  if (std::thread::hardware_concurrency() < 4) {
    MESSAGE("skipped: " << std::thread::hardware_concurrency() << " hardware threads, 4 needed");
    return;
  }
  PipelineConfig c;
  c.scene_file = std::string(PMVPS_SOURCE_DIR) + "/scenes/ball.json";
  auto solve_seconds = [&](int workers) {
    c.workers = workers;
    const PipelineResult r = run_pipeline(c);
    REQUIRE(r.report.triangles >= 100);
    for (const auto& [stage, secs] : r.report.stage_seconds)
      if (stage == "solve") return secs;
    FAIL("no solve stage timing");
    return 0.0;
  };
  const double one = solve_seconds(1), four = solve_seconds(4);
  CHECK(one / (4.0 * four) >= 0.6);
}

TEST_CASE("a saturated patch is isolated") {
  const SceneSpec spec = plane_spec();
  PipelineInputs in = inputs_from(spec);
  const PipelineResult clean = run_pipeline(in, base_config());
  const CoarseMesh& mesh = clean.mesh;
  const int victim = mesh.triangle_count() / 2;
  for (int g = 0; g < mesh.frame_count(); ++g) {
    auto& img = in.frames[static_cast<size_t>(g)];
    const Mat23 big = enlarge_triangle(mesh.view_triangle(g, victim), 1.3);
    // Cover the enlarged triangle generously so no template pixel samples an unsaturated value.
    for (int r = 0; r < img.rows(); ++r)
      for (int c = 0; c < img.cols(); ++c) {
        const Barycentric l = barycentric_of(Vec2(c, r), enlarge_triangle(big, 1.15));
        if (l.inside()) img.pixels(r, c) = 1.0;
      }
  }
  const PipelineResult r = run_pipeline(in, base_config());
  CHECK(r.report.failed_patches == std::vector<int>{victim});
  CHECK_FALSE(r.report.patches[static_cast<size_t>(victim)].failure.empty());
  CHECK(r.height_fields.size() == static_cast<size_t>(mesh.triangle_count() - 1));
  for (const auto& h : r.height_fields) CHECK(h.triangle_id != victim);
}

TEST_CASE("no usable patch") {
  PipelineInputs in = inputs_from(plane_spec());
  for (auto& f : in.frames) f.pixels.setConstant(1.0);
  try {
    run_pipeline(in, base_config());
    FAIL("all-saturated input accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoUsablePatches);
  }
}

TEST_CASE("file inputs, outputs and resume from the alignment stage") {
  const SceneSpec spec = plane_spec();
  const Rendering rend = render(make_scene(spec));
  const fs::path dir = scratch("files");
  PipelineConfig c;
  for (const auto& f : rend.frames) {
    const fs::path p = dir / ("f" + std::to_string(f.frame_id) + ".pgm");
    write_pgm16(p.string(), f.pixels);
    c.images.push_back(p.string());
  }
  SparsePoints sp;
  sp.points = rend.sparse_points;
  sp.projections = rend.projections;
  for (size_t g = 0; g < rend.projections.size(); ++g) sp.labels.push_back("view" + std::to_string(g));
  write_sparse_points((dir / "points.txt").string(), sp);
  write_xyz((dir / "truth.xyz").string(), rend.dense_truth);
  c.points_file = (dir / "points.txt").string();
  c.truth_file = (dir / "truth.xyz").string();
  c.output_dir = (dir / "run").string();
  c.write_traces = true;
  c.dump_stacks = true;
  const PipelineResult first = run_pipeline(c);
  REQUIRE(first.report.error_3d.has_value());
  CHECK(*first.report.error_3d < 1.0);
  for (const char* name : {"report.json", "config.json", "surface.ply", "surface.obj", "heatmap.ppm", "alignment.csv",
                           "mesh.json", "heights.bin"}) {
    CHECK(fs::exists(fs::path(c.output_dir) / name));
  }
  CHECK(fs::exists(fs::path(c.output_dir) / "traces"));
  CHECK(fs::exists(fs::path(c.output_dir) / "stacks"));

  PipelineConfig again = c;
  again.resume_from = "align";
  const PipelineResult second = run_pipeline(again);
  REQUIRE(second.surface.size() == first.surface.size());
  CHECK((second.surface.points - first.surface.points).cwiseAbs().maxCoeff() < 1e-12);

  std::ifstream report(fs::path(c.output_dir) / "report.json");
  std::stringstream ss;
  ss << report.rdbuf();
  CHECK(report_from_json(ss.str()).dense_points == first.report.dense_points);

  PipelineConfig missing = c;
  missing.images.push_back((dir / "nope.pgm").string());
  CHECK_THROWS_AS(run_pipeline(missing), Error);
}
