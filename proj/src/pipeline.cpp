#include "pmvps/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pmvps/decompose.hpp"
#include "pmvps/error.hpp"
#include "pmvps/io.hpp"
#include "pmvps/photometric.hpp"
#include "pmvps/register.hpp"
#include "pmvps/synth.hpp"

namespace pmvps {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).string();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

// ---- stage caches -----------------------------------------------------------

json mesh_to_json(const CoarseMesh& mesh) {
  json j;
  j["reference_view"] = mesh.reference_view;
  json pts = json::array();
  for (int i = 0; i < mesh.point_count(); ++i) {
    pts.push_back({mesh.vertices3d(i, 0), mesh.vertices3d(i, 1), mesh.vertices3d(i, 2)});
  }
  j["points"] = pts;
  json tris = json::array();
  for (const auto& t : mesh.triangles) tris.push_back({t[0], t[1], t[2]});
  j["triangles"] = tris;
  json proj = json::array();
  for (const auto& p : mesh.projections) {
    json frame = json::array();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (std::isfinite(p(i, 0)) && std::isfinite(p(i, 1))) {
        frame.push_back({p(i, 0), p(i, 1)});
      } else {
        frame.push_back(nullptr);
      }
    }
    proj.push_back(frame);
  }
  j["projections"] = proj;
  j["warnings"] = mesh.warnings;
  return j;
}

CoarseMesh mesh_from_json(const json& j) {
  CoarseMesh mesh;
  mesh.reference_view = j.at("reference_view").get<int>();
  const auto& pts = j.at("points");
  mesh.vertices3d.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (size_t i = 0; i < pts.size(); ++i) {
    for (int a = 0; a < 3; ++a) mesh.vertices3d(static_cast<Eigen::Index>(i), a) = pts[i][static_cast<size_t>(a)];
  }
  for (const auto& t : j.at("triangles")) mesh.triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  for (const auto& frame : j.at("projections")) {
    Points2 p(static_cast<Eigen::Index>(frame.size()), 2);
    for (size_t i = 0; i < frame.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (frame[i].is_null()) {
        p.row(r).setConstant(std::nan(""));
      } else {
        p.row(r) << frame[i][0].get<double>(), frame[i][1].get<double>();
      }
    }
    mesh.projections.push_back(std::move(p));
  }
  mesh.warnings = j.value("warnings", std::vector<std::string>{});
  return mesh;
}

struct CachedPatch {
  HeightField field;
  long observed = 0;
  double curvature = 0.0;
};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::Io, "truncated height-field cache");
  return v;
}

void write_heights(const fs::path& path, const std::vector<CachedPatch>& patches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write("PMVH", 4);
  put<std::int32_t>(out, static_cast<std::int32_t>(patches.size()));
  for (const auto& p : patches) {
    const HeightField& f = p.field;
    put<std::int32_t>(out, f.triangle_id);
    put<std::int32_t>(out, f.rows);
    put<std::int32_t>(out, f.cols);
    put<double>(out, f.pitch);
    put<double>(out, f.origin.x());
    put<double>(out, f.origin.y());
    put<std::int64_t>(out, p.observed);
    put<double>(out, p.curvature);
    put<std::int32_t>(out, f.size());
    for (int i = 0; i < f.size(); ++i) {
      put<std::int32_t>(out, f.pixels[static_cast<size_t>(i)]);
      for (int a = 0; a < 3; ++a) put<double>(out, f.points(a, i));
    }
  }
}

std::vector<CachedPatch> read_heights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PMVH") throw Error(ErrorCode::Io, "not a height-field cache: " + path.string());
  const int n = get<std::int32_t>(in);
  std::vector<CachedPatch> out(static_cast<size_t>(n));
  for (auto& p : out) {
    HeightField& f = p.field;
    f.triangle_id = get<std::int32_t>(in);
    f.rows = get<std::int32_t>(in);
    f.cols = get<std::int32_t>(in);
    f.pitch = get<double>(in);
    f.origin.x() = get<double>(in);
    f.origin.y() = get<double>(in);
    p.observed = get<std::int64_t>(in);
    p.curvature = get<double>(in);
    const int b = get<std::int32_t>(in);
    f.pixels.resize(static_cast<size_t>(b));
    f.points.resize(3, b);
    for (int i = 0; i < b; ++i) {
      f.pixels[static_cast<size_t>(i)] = get<std::int32_t>(in);
      for (int a = 0; a < 3; ++a) f.points(a, i) = get<double>(in);
    }
  }
  return out;
}

void dump_stack(const fs::path& path, const PatchStack& s) {
  const int f = s.frames(), b = s.columns();
  Eigen::ArrayXXd r(f, b), g(f, b), bl(f, b);
  for (int i = 0; i < b; ++i) {
    for (int k = 0; k < f; ++k) {
      const double v = s.intensities(k, i);
      if (s.observed(k, i)) {
        r(k, i) = g(k, i) = bl(k, i) = v;
      } else {
        r(k, i) = 1.0;
        g(k, i) = bl(k, i) = 0.0;
      }
    }
  }
  write_ppm(path.string(), r, g, bl);
}

struct PatchWork {
  int triangle = -1;
  FacetFrame frame;
  Mat33 facet = Mat33::Zero();
  PatchStack stack;
  PhotometricFactors factors;
  HeightField field;
  double curvature = 0.0;
  std::string failure;
  bool prepared = false;
  bool solved = false;
  bool integrated = false;
};

std::vector<int> order_by(const std::vector<long>& size) {
  std::vector<int> order(size.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return size[static_cast<size_t>(a)] > size[static_cast<size_t>(b)]; });
  return order;
}

}  // namespace

void run_jobs(const std::vector<int>& order, int workers, const std::function<void(int)>& job) {
  if (workers <= 1 || order.size() <= 1) {
    for (int i : order) job(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first;
  std::mutex guard;
  auto worker = [&]() {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= order.size()) return;
      try {
        job(order[k]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        if (!first) first = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const int n = std::min<int>(workers, static_cast<int>(order.size()));
  for (int t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "config: " + what); };
  if (!(enlargement >= 1.0)) fail("enlargement must be >= 1");
  if (!(tau_dark >= 0.0 && tau_dark < tau_sat && tau_sat <= 1.0)) fail("need 0 <= tau_dark < tau_sat <= 1");
  if (template_max_size < 4) fail("template_max_size must be >= 4");
  if (!(solver_tol > 0.0) || solver_iters < 1) fail("solver tolerance and iterations must be positive");
  if (!(lambda > 0.0)) fail("lambda must be positive");
  if (!(r_pair > 0.0)) fail("r_pair must be positive");
  if (!(refine_tol > 0.0) || refine_iters < 1) fail("refine tolerance and iterations must be positive");
  if (workers < 1) fail("workers must be >= 1");
  if (!(align_beta >= 0.0)) fail("align_beta must be non-negative");
  if (integration != "spectral" && integration != "poisson") fail("integration must be 'spectral' or 'poisson'");
  if (alignment != "tikhonov" && alignment != "additive") fail("alignment must be 'tikhonov' or 'additive'");
  if (!resume_from.empty() && resume_from != "align") fail("resume_from must be empty or 'align'");
  if (!resume_from.empty() && output_dir.empty()) fail("resume_from needs an output_dir holding the caches");
  if (scene_file.empty() && (images.empty() || points_file.empty())) {
    fail("give either scene_file or images plus points_file");
  }
}

PipelineConfig parse_config(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  try {
    c.scene_file = resolve(j.value("scene_file", c.scene_file), base_dir);
    for (const auto& im : j.value("images", std::vector<std::string>{})) c.images.push_back(resolve(im, base_dir));
    c.points_file = resolve(j.value("points_file", c.points_file), base_dir);
    c.truth_file = resolve(j.value("truth_file", c.truth_file), base_dir);
    c.output_dir = resolve(j.value("output_dir", c.output_dir), base_dir);
    c.reference_view = j.value("reference_view", c.reference_view);
    c.enlargement = j.value("enlargement", c.enlargement);
    c.tau_dark = j.value("tau_dark", c.tau_dark);
    c.tau_sat = j.value("tau_sat", c.tau_sat);
    c.template_max_size = j.value("template_max_size", c.template_max_size);
    c.solver_tol = j.value("solver_tol", c.solver_tol);
    c.solver_iters = j.value("solver_iters", c.solver_iters);
    c.facet_lighting = j.value("facet_lighting", c.facet_lighting);
    c.integration = j.value("integration", c.integration);
    c.alignment = j.value("alignment", c.alignment);
    c.align_beta = j.value("align_beta", c.align_beta);
    c.r_pair = j.value("r_pair", c.r_pair);
    c.lambda = j.value("lambda", c.lambda);
    c.refine_iters = j.value("refine_iters", c.refine_iters);
    c.refine_tol = j.value("refine_tol", c.refine_tol);
    c.workers = j.value("workers", c.workers);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    c.dump_stacks = j.value("dump_stacks", c.dump_stacks);
    c.write_traces = j.value("write_traces", c.write_traces);
    c.resume_from = j.value("resume_from", c.resume_from);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  return parse_config(read_text(path), fs::path(path).parent_path().string());
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["scene_file"] = c.scene_file;
  j["images"] = c.images;
  j["points_file"] = c.points_file;
  j["truth_file"] = c.truth_file;
  j["output_dir"] = c.output_dir;
  j["reference_view"] = c.reference_view;
  j["enlargement"] = c.enlargement;
  j["tau_dark"] = c.tau_dark;
  j["tau_sat"] = c.tau_sat;
  j["template_max_size"] = c.template_max_size;
  j["solver_tol"] = c.solver_tol;
  j["solver_iters"] = c.solver_iters;
  j["facet_lighting"] = c.facet_lighting;
  j["integration"] = c.integration;
  j["alignment"] = c.alignment;
  j["align_beta"] = c.align_beta;
  j["r_pair"] = c.r_pair;
  j["lambda"] = c.lambda;
  j["refine_iters"] = c.refine_iters;
  j["refine_tol"] = c.refine_tol;
  j["workers"] = c.workers;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["dump_stacks"] = c.dump_stacks;
  j["write_traces"] = c.write_traces;
  j["resume_from"] = c.resume_from;
  return j.dump(2);
}

std::string report_to_json(const RunReport& r, bool with_timings) {
  json j;
  if (with_timings) {
    json stages = json::array();
    for (const auto& [name, s] : r.stage_seconds) stages.push_back({{"stage", name}, {"seconds", s}});
    j["stage_seconds"] = stages;
    j["total_seconds"] = r.total_seconds;
  }
  j["points"] = r.points;
  j["triangles"] = r.triangles;
  j["frames"] = r.frames;
  j["pixels"] = r.pixels;
  j["missing_percent"] = r.missing_percent;
  j["error_3d"] = r.error_3d ? json(*r.error_3d) : json(nullptr);
  j["failed_patches"] = r.failed_patches;
  j["seed"] = r.seed;
  j["workers"] = r.workers;
  j["dense_points"] = r.dense_points;
  j["refine_energy"] = r.refine_energy;
  j["seam_before"] = r.seam_before;
  j["seam_after"] = r.seam_after;
  j["warnings"] = r.warnings;
  json patches = json::array();
  for (const auto& p : r.patches) {
    patches.push_back({{"triangle", p.triangle_id},
                       {"frames", p.frames},
                       {"columns", p.columns},
                       {"missing", p.missing},
                       {"residual", p.residual},
                       {"iterations", p.iterations},
                       {"converged", p.converged},
                       {"curvature", p.curvature},
                       {"failure", p.failure}});
  }
  j["patches"] = patches;
  return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
  RunReport r;
  try {
    const json j = json::parse(text);
    if (j.contains("stage_seconds")) {
      for (const auto& s : j["stage_seconds"]) r.stage_seconds.emplace_back(s["stage"], s["seconds"]);
    }
    r.total_seconds = j.value("total_seconds", 0.0);
    r.points = j.value("points", 0);
    r.triangles = j.value("triangles", 0);
    r.frames = j.value("frames", 0);
    r.pixels = j.value("pixels", 0L);
    r.missing_percent = j.value("missing_percent", 0.0);
    if (j.contains("error_3d") && !j["error_3d"].is_null()) r.error_3d = j["error_3d"].get<double>();
    r.failed_patches = j.value("failed_patches", std::vector<int>{});
    r.seed = j.value("seed", std::uint64_t{0});
    r.workers = j.value("workers", 1);
    r.dense_points = j.value("dense_points", 0);
    r.refine_energy = j.value("refine_energy", 0.0);
    r.seam_before = j.value("seam_before", 0.0);
    r.seam_after = j.value("seam_after", 0.0);
    r.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& p : j.value("patches", json::array())) {
      PatchReport pr;
      pr.triangle_id = p.value("triangle", -1);
      pr.frames = p.value("frames", 0);
      pr.columns = p.value("columns", 0);
      pr.missing = p.value("missing", 1.0);
      pr.residual = p.value("residual", 0.0);
      pr.iterations = p.value("iterations", 0);
      pr.converged = p.value("converged", false);
      pr.curvature = p.value("curvature", 0.0);
      pr.failure = p.value("failure", std::string());
      r.patches.push_back(pr);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad report: ") + e.what());
  }
  return r;
}

PipelineInputs load_inputs(const PipelineConfig& config) {
  PipelineInputs in;
  if (!config.scene_file.empty()) {
    SceneSpec spec = load_scene(config.scene_file);
    if (config.seed) spec.seed = *config.seed;
    const SyntheticScene scene = make_scene(spec);
    Rendering r = render(scene);
    in.frames = std::move(r.frames);
    in.points = std::move(r.sparse_points);
    in.projections = std::move(r.projections);
    in.truth = std::move(r.dense_truth);
    in.seed = spec.seed;
    return in;
  }
  for (size_t g = 0; g < config.images.size(); ++g) in.frames.push_back(read_netpbm(config.images[g], static_cast<int>(g)));
  const SparsePoints sparse = read_sparse_points(config.points_file);
  in.points = sparse.points;
  in.projections = sparse.projections;
  if (in.projections.size() != in.frames.size()) {
    throw Error(ErrorCode::ShapeMismatch, "the sparse-point file lists " + std::to_string(in.projections.size()) +
                                              " frames but " + std::to_string(in.frames.size()) + " images were given");
  }
  if (!config.truth_file.empty()) in.truth = read_xyz(config.truth_file);
  in.seed = config.seed.value_or(0);
  return in;
}

PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineConfig& config) {
  config.validate();
  const Stopwatch total;
  PipelineResult result;
  RunReport& report = result.report;
  report.seed = inputs.seed;
  report.workers = config.workers;
  auto stage = [&report](const std::string& name, const Stopwatch& w) { report.stage_seconds.emplace_back(name, w.seconds()); };

  const fs::path out_dir = config.output_dir;
  if (!config.output_dir.empty()) fs::create_directories(out_dir);
  const bool resume = config.resume_from == "align";

  // Mesh.
  Stopwatch w;
  if (resume) {
    result.mesh = mesh_from_json(json::parse(read_text((out_dir / "mesh.json").string())));
  } else {
    if (inputs.frames.empty()) throw Error(ErrorCode::EmptyInput, "no image frames");
    for (const auto& f : inputs.frames) {
      validate(f);
      if (f.rows() != inputs.frames.front().rows() || f.cols() != inputs.frames.front().cols()) {
        throw Error(ErrorCode::ShapeMismatch, "all frames must share one size");
      }
    }
    const int f = static_cast<int>(inputs.frames.size());
    const int ref = config.reference_view >= 0 ? config.reference_view : f / 2;
    result.mesh = build_mesh(inputs.points, inputs.projections, ref);
    if (!out_dir.empty()) write_text(out_dir / "mesh.json", mesh_to_json(result.mesh).dump());
  }
  const CoarseMesh& mesh = result.mesh;
  report.points = mesh.point_count();
  report.triangles = mesh.triangle_count();
  report.frames = mesh.frame_count();
  report.warnings = mesh.warnings;
  stage("mesh", w);

  const int m = mesh.triangle_count();
  std::vector<PatchWork> work(static_cast<size_t>(m));
  for (int t = 0; t < m; ++t) {
    PatchWork& pw = work[static_cast<size_t>(t)];
    pw.triangle = t;
    pw.facet = mesh.facet(t);
  }
  std::vector<long> observed(static_cast<size_t>(m), 0);

  if (resume) {
    w = Stopwatch();
    for (auto& cached : read_heights(out_dir / "heights.bin")) {
      const int t = cached.field.triangle_id;
      if (t < 0 || t >= m) throw Error(ErrorCode::Io, "height-field cache does not match the mesh");
      PatchWork& pw = work[static_cast<size_t>(t)];
      pw.frame = facet_frame(pw.facet);
      pw.field = std::move(cached.field);
      pw.curvature = cached.curvature;
      pw.prepared = pw.solved = pw.integrated = true;
      observed[static_cast<size_t>(t)] = cached.observed;
    }
    for (auto& pw : work) {
      if (!pw.integrated) pw.failure = "not in the height-field cache";
    }
    stage("load_cache", w);
  } else {
    const int f = mesh.frame_count();
    const int rows = inputs.frames.front().rows(), cols = inputs.frames.front().cols();
    const IntensityThresholds thresholds{config.tau_dark, config.tau_sat};

    // Decompose and register.
    w = Stopwatch();
    std::vector<long> area(static_cast<size_t>(m));
    for (int t = 0; t < m; ++t) {
      area[static_cast<size_t>(t)] = std::lround(triangle_area(mesh.view_triangle(mesh.reference_view, t)));
    }
    run_jobs(order_by(area), config.workers, [&](int t) {
      PatchWork& pw = work[static_cast<size_t>(t)];
      try {
        pw.frame = facet_frame(pw.facet);
        std::vector<Mat23> sources;
        for (int g = 0; g < f; ++g) {
          if (mesh.tracked(g, t) && !back_facing(mesh, g, t)) sources.push_back(mesh.view_triangle(g, t));
        }
        const double pitch = template_pitch(pw.facet, sources, config.enlargement, config.template_max_size);
        const TemplateRaster tmpl = make_template(pw.frame, config.enlargement, pitch, t);
        std::vector<RegisteredRow> reg;
        reg.reserve(static_cast<size_t>(f));
        for (int g = 0; g < f; ++g) {
          const PatchMask mask = patch_mask(mesh, g, t, rows, cols, config.enlargement);
          if (mask.empty()) {
            RegisteredRow empty;
            empty.frame_id = g;
            empty.values = Eigen::VectorXd::Zero(tmpl.size());
            empty.mapped = BoolVector::Constant(tmpl.size(), false);
            reg.push_back(std::move(empty));
          } else {
            reg.push_back(register_patch(inputs.frames[static_cast<size_t>(g)], mask, mesh.view_triangle(g, t), tmpl));
          }
        }
        pw.stack = assemble_stack(reg, tmpl, thresholds);
        pw.prepared = true;
      } catch (const Error& e) {
        pw.failure = e.what();
      }
    });
    stage("register", w);

    if (config.dump_stacks && !out_dir.empty()) {
      fs::create_directories(out_dir / "stacks");
      for (const auto& pw : work) {
        if (!pw.prepared || pw.stack.columns() == 0) continue;
        char name[32];
        std::snprintf(name, sizeof(name), "patch_%04d.ppm", pw.triangle);
        dump_stack(out_dir / "stacks" / name, pw.stack);
      }
    }

    // Shared lighting from the coarse facets.
    w = Stopwatch();
    std::optional<LightMatrix> world_lighting;
    if (config.facet_lighting) {
      std::vector<PatchStack> stacks;
      std::vector<Vec3> normals;
      for (const auto& pw : work) {
        if (!pw.prepared) continue;
        stacks.push_back(pw.stack);
        normals.push_back(pw.frame.facet_normal);
      }
      if (!stacks.empty()) world_lighting = estimate_lighting_from_facets(stacks, normals, f);
    }
    stage("lighting", w);

    // Photometric stereo per patch.
    w = Stopwatch();
    std::vector<long> size(static_cast<size_t>(m));
    for (int t = 0; t < m; ++t) {
      size[static_cast<size_t>(t)] = static_cast<long>(work[static_cast<size_t>(t)].stack.intensities.size());
    }
    SolverOptions solver;
    solver.tol = config.solver_tol;
    solver.max_iters = config.solver_iters;
    run_jobs(order_by(size), config.workers, [&](int t) {
      PatchWork& pw = work[static_cast<size_t>(t)];
      if (!pw.prepared) return;
      try {
        std::optional<PhotometricFactors> init;
        if (world_lighting && pw.stack.observed_count() > 0) {
          init = factors_from_lighting(pw.stack, rotate_lighting(*world_lighting, pw.frame.rotation));
        }
        pw.factors = solve_patch(pw.stack, init, solver);
        pw.solved = true;
      } catch (const Error& e) {
        pw.failure = e.what();
      }
    });
    stage("solve", w);

    // Integration.
    w = Stopwatch();
    IntegrationOptions integ;
    integ.backend = config.integration == "poisson" ? IntegrationBackend::MaskedPoisson : IntegrationBackend::Spectral;
    run_jobs(order_by(size), config.workers, [&](int t) {
      PatchWork& pw = work[static_cast<size_t>(t)];
      if (!pw.solved) return;
      try {
        pw.field = integrate_normals(pw.factors, pw.stack, integ);
        anchor_to_points(pw.field, pw.frame.template2d);
        pw.curvature = patch_curvature(pw.field).value;
        pw.integrated = true;
      } catch (const Error& e) {
        pw.failure = e.what();
      }
    });
    stage("integrate", w);

    long total_entries = 0, total_observed = 0;
    for (const auto& pw : work) {
      if (!pw.prepared) continue;
      total_entries += static_cast<long>(pw.stack.intensities.size());
      total_observed += pw.stack.observed_count();
      observed[static_cast<size_t>(pw.triangle)] = pw.stack.observed_count();
    }
    report.pixels = total_entries;
    report.missing_percent =
        total_entries > 0 ? 100.0 * (1.0 - static_cast<double>(total_observed) / static_cast<double>(total_entries)) : 100.0;

    if (!out_dir.empty()) {
      std::vector<CachedPatch> cache;
      for (const auto& pw : work) {
        if (pw.integrated) cache.push_back({pw.field, observed[static_cast<size_t>(pw.triangle)], pw.curvature});
      }
      write_heights(out_dir / "heights.bin", cache);
      if (config.write_traces) {
        fs::create_directories(out_dir / "traces");
        for (const auto& pw : work) {
          if (!pw.solved) continue;
          char name[32];
          std::snprintf(name, sizeof(name), "patch_%04d.csv", pw.triangle);
          std::ofstream trace(out_dir / "traces" / name);
          trace << "iteration,objective\n";
          trace.precision(17);
          for (size_t k = 0; k < pw.factors.trace.size(); ++k) trace << k << ',' << pw.factors.trace[k] << '\n';
        }
      }
    }
  }

  for (const auto& pw : work) {
    PatchReport pr;
    pr.triangle_id = pw.triangle;
    pr.frames = pw.stack.frames();
    pr.columns = resume ? pw.field.size() : pw.stack.columns();
    pr.missing = resume ? 0.0 : missing_fraction(pw.stack);
    pr.residual = pw.factors.residual;
    pr.iterations = pw.factors.iterations;
    pr.converged = pw.factors.converged;
    pr.curvature = pw.curvature;
    pr.failure = pw.failure;
    if (!pw.integrated && pr.failure.empty()) pr.failure = "not reconstructed";
    if (!pr.failure.empty()) report.failed_patches.push_back(pw.triangle);
    report.patches.push_back(pr);
  }

  // Alignment.
  w = Stopwatch();
  std::vector<FacetPointSet> sets;
  std::vector<double> curvatures;
  for (const auto& pw : work) {
    if (!pw.integrated) continue;
    sets.push_back(lift_to_facet(pw.field, pw.frame, pw.facet, pw.triangle, config.enlargement,
                                 mesh.triangles[static_cast<size_t>(pw.triangle)], observed[static_cast<size_t>(pw.triangle)]));
    curvatures.push_back(pw.curvature);
    result.height_fields.push_back(pw.field);
  }
  if (sets.empty()) throw Error(ErrorCode::NoUsablePatches, "no patch could be reconstructed");
  std::vector<int> position(static_cast<size_t>(m), -1);
  for (size_t k = 0; k < sets.size(); ++k) position[static_cast<size_t>(sets[k].triangle_id)] = static_cast<int>(k);
  const auto adjacent = mesh.adjacent_pairs();
  std::vector<Correspondences> links(adjacent.size());
  std::vector<char> live(adjacent.size(), 0);
  std::vector<int> link_order(adjacent.size());
  std::iota(link_order.begin(), link_order.end(), 0);
  run_jobs(link_order, config.workers, [&](int k) {
    const auto [ta, tb] = adjacent[static_cast<size_t>(k)];
    const int ia = position[static_cast<size_t>(ta)], ib = position[static_cast<size_t>(tb)];
    if (ia < 0 || ib < 0) return;
    const FacetPointSet& a = sets[static_cast<size_t>(ia)];
    const FacetPointSet& b = sets[static_cast<size_t>(ib)];
    links[static_cast<size_t>(k)] = overlap_correspondences(a, b, default_pair_radius(a, b, config.r_pair));
    live[static_cast<size_t>(k)] = 1;
  });
  std::vector<Correspondences> used_links;
  for (size_t k = 0; k < links.size(); ++k) {
    if (live[k]) used_links.push_back(std::move(links[k]));
  }
  AlignOptions align;
  align.variant = config.alignment == "additive" ? AntiFlattening::Additive : AntiFlattening::Tikhonov;
  align.beta = config.align_beta;
  result.alignment = solve_corrections(sets, used_links, curvatures, align);
  for (const auto& msg : result.alignment.warnings) report.warnings.push_back(msg);
  double before = 0.0, after = 0.0;
  long pairs = 0;
  for (const auto& e : result.alignment.edges) {
    before += e.gap_before * e.gap_before * e.pairs;
    after += e.gap_after * e.gap_after * e.pairs;
    pairs += e.pairs;
  }
  if (pairs > 0) {
    report.seam_before = std::sqrt(before / static_cast<double>(pairs));
    report.seam_after = std::sqrt(after / static_cast<double>(pairs));
  }
  stage("align", w);

  // Superposition and refinement.
  w = Stopwatch();
  const RawSurface raw = superpose(sets, result.alignment.corrections, used_links);
  RefineOptions refine_options;
  refine_options.lambda = config.lambda;
  refine_options.max_iters = config.refine_iters;
  refine_options.tol = config.refine_tol;
  result.surface = refine(raw, mesh, refine_options);
  report.dense_points = result.surface.size();
  report.refine_energy = result.surface.energy;
  stage("refine", w);

  w = Stopwatch();
  std::optional<Eigen::VectorXd> distances;
  if (inputs.truth && inputs.truth->cols() > 0) {
    distances = aligned_distances(result.surface.points, *inputs.truth);
    const Eigen::Matrix3Xd& t = *inputs.truth;
    const double diag = (t.rowwise().maxCoeff() - t.rowwise().minCoeff()).norm();
    report.error_3d = 100.0 * distances->mean() / diag;
  }
  stage("evaluate", w);

  if (!out_dir.empty()) {
    w = Stopwatch();
    write_ply((out_dir / "surface.ply").string(), result.surface.points);
    write_obj((out_dir / "surface.obj").string(), result.surface.points, grid_triangles(result.surface));
    if (distances) {
      const Eigen::Matrix3Xd& t = *inputs.truth;
      const double diag = (t.rowwise().maxCoeff() - t.rowwise().minCoeff()).norm();
      write_heatmap((out_dir / "heatmap.ppm").string(), result.surface, *distances, 0.05 * diag);
    }
    std::ofstream edges(out_dir / "alignment.csv");
    edges << "triangle_a,triangle_b,pairs,gap_before,gap_after\n";
    edges.precision(10);
    for (const auto& e : result.alignment.edges) {
      edges << e.a << ',' << e.b << ',' << e.pairs << ',' << e.gap_before << ',' << e.gap_after << '\n';
    }
    {
      std::ofstream corr(out_dir / "corrections.csv");
      corr << "triangle,h1,h2,h3,pinned,component\n";
      corr.precision(17);
      for (size_t k = 0; k < sets.size(); ++k) {
        const auto& c = result.alignment.corrections[k];
        corr << sets[k].triangle_id << ',' << c.h.x() << ',' << c.h.y() << ',' << c.h.z() << ',' << c.pinned << ','
             << c.component << '\n';
      }
    }
    write_text(out_dir / "config.json", config_to_json(config));
    stage("write", w);
  }
  report.total_seconds = total.seconds();
  if (!out_dir.empty()) write_text(out_dir / "report.json", report_to_json(report));
  return result;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  if (config.resume_from == "align") {
    PipelineInputs inputs;
    if (!config.truth_file.empty()) inputs.truth = read_xyz(config.truth_file);
    inputs.seed = config.seed.value_or(0);
    return run_pipeline(inputs, config);
  }
  return run_pipeline(load_inputs(config), config);
}

}  // namespace pmvps
