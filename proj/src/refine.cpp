#include "pmvps/refine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include "pmvps/error.hpp"

namespace pmvps {

namespace {

constexpr double kMaxWeight = 0.70710678118654752440;

int find_root(std::vector<int>& parent, int x) {
  while (parent[static_cast<size_t>(x)] != x) {
    parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
    x = parent[static_cast<size_t>(x)];
  }
  return x;
}

}  // namespace

double weight_of(const Barycentric& lam) {
  const double s = std::abs(lam.alpha - lam.beta) + std::abs(lam.alpha - lam.gamma) + std::abs(lam.gamma - lam.beta);
  return std::min(0.5 * std::sqrt(s), kMaxWeight);
}

double weight_of(const Vec3& point, const Mat33& facet) { return weight_of(barycentric_of(point, facet)); }

double weight_of(const RawSurface& raw, int i) {
  if (i < 0 || i >= raw.size()) throw Error(ErrorCode::InvalidArgument, "point index out of range");
  if (raw.triangle_ids[static_cast<size_t>(i)] < 0) {
    throw Error(ErrorCode::InvalidArgument, "point has no triangle attribution");
  }
  const Vec3 lam = raw.barycentrics.col(i);
  return weight_of(Barycentric{lam(0), lam(1), lam(2)});
}

RawSurface superpose(std::span<const FacetPointSet> sets, std::span<const PatchCorrection> corrections,
                     std::span<const Correspondences> links) {
  if (sets.size() != corrections.size()) throw Error(ErrorCode::ShapeMismatch, "one correction per set is required");
  std::vector<int> offset(sets.size() + 1, 0);
  std::map<int, int> position;
  for (size_t k = 0; k < sets.size(); ++k) {
    offset[k + 1] = offset[k] + sets[k].size();
    position[sets[k].triangle_id] = static_cast<int>(k);
  }
  const int total = offset.back();
  if (total == 0) throw Error(ErrorCode::EmptyInput, "nothing to superpose");

  std::vector<int> parent(static_cast<size_t>(total));
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& link : links) {
    const auto ia = position.find(link.a), ib = position.find(link.b);
    if (ia == position.end() || ib == position.end()) continue;
    for (const auto& [i, j] : link.pairs) {
      int ra = find_root(parent, offset[static_cast<size_t>(ia->second)] + i);
      int rb = find_root(parent, offset[static_cast<size_t>(ib->second)] + j);
      if (ra != rb) parent[static_cast<size_t>(std::max(ra, rb))] = std::min(ra, rb);
    }
  }

  std::vector<int> slot(static_cast<size_t>(total), -1);
  std::vector<int> members;
  RawSurface out;
  Eigen::Matrix3Xd sum = Eigen::Matrix3Xd::Zero(3, total);
  Eigen::VectorXd weight_sum = Eigen::VectorXd::Zero(total);
  out.barycentrics.resize(3, total);
  int count = 0;
  for (size_t k = 0; k < sets.size(); ++k) {
    const Eigen::Matrix3Xd pts = corrected_points(sets[k], corrections[k]);
    for (int i = 0; i < sets[k].size(); ++i) {
      const int g = offset[k] + i;
      const int root = find_root(parent, g);
      int& s = slot[static_cast<size_t>(root)];
      const Vec3 lam = sets[k].barycentrics.col(i);
      if (s < 0) {
        s = count++;
        members.push_back(0);
        out.triangle_ids.push_back(sets[k].triangle_id);
        out.template_pixels.push_back(sets[k].pixels[static_cast<size_t>(i)]);
        out.barycentrics.col(s) = lam;
      }
      sum.col(s) += pts.col(i);
      weight_sum(s) += weight_of(Barycentric{lam(0), lam(1), lam(2)});
      members[static_cast<size_t>(s)] += 1;
    }
  }
  out.points.resize(3, count);
  out.weights.resize(count);
  for (int s = 0; s < count; ++s) {
    out.points.col(s) = sum.col(s) / members[static_cast<size_t>(s)];
    out.weights(s) = weight_sum(s) / members[static_cast<size_t>(s)];
  }
  out.barycentrics.conservativeResize(3, count);
  return out;
}

DenseSurface refine(const RawSurface& raw, const CoarseMesh& mesh, const RefineOptions& options) {
  if (!(options.lambda > 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive");
  if (raw.size() == 0) throw Error(ErrorCode::EmptyInput, "raw surface is empty");
  const int ref = mesh.reference_view;

  Vec3 axis = Vec3::Zero();
  std::set<int> used;
  for (int t : raw.triangle_ids) {
    if (t < 0 || t >= mesh.triangle_count()) throw Error(ErrorCode::InvalidArgument, "point has no valid triangle");
    used.insert(t);
  }
  for (int t : used) {
    const Mat33 f = mesh.facet(t);
    axis += (f.col(1) - f.col(0)).cross(f.col(2) - f.col(0));
  }
  axis = axis.norm() > 0.0 ? Vec3(axis.normalized()) : Vec3::UnitZ();

  // Reference-view location of every raw point.
  Eigen::Matrix2Xd uv(2, raw.size());
  for (int i = 0; i < raw.size(); ++i) {
    uv.col(i) = mesh.view_triangle(ref, raw.triangle_ids[static_cast<size_t>(i)]) * raw.barycentrics.col(i);
  }
  Eigen::Vector2d lo = uv.rowwise().minCoeff(), hi = uv.rowwise().maxCoeff();
  for (int t : used) {
    const Mat23 w = mesh.view_triangle(ref, t);
    lo = lo.cwiseMin(w.rowwise().minCoeff());
    hi = hi.cwiseMax(w.rowwise().maxCoeff());
  }
  if (!lo.allFinite() || !hi.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite reference projections");

  DenseSurface out;
  out.axis = axis;
  out.grid_origin = Eigen::Vector2i(static_cast<int>(std::floor(lo.x())), static_cast<int>(std::floor(lo.y())));
  out.grid_cols = static_cast<int>(std::ceil(hi.x())) - out.grid_origin.x() + 1;
  out.grid_rows = static_cast<int>(std::ceil(hi.y())) - out.grid_origin.y() + 1;
  const int R = out.grid_rows, C = out.grid_cols;
  const long cells = static_cast<long>(R) * C;

  // Splat data.
  std::vector<int> count(static_cast<size_t>(cells), 0);
  std::vector<double> height(static_cast<size_t>(cells), 0.0), weight(static_cast<size_t>(cells), 0.0);
  Eigen::Matrix3Xd tangent = Eigen::Matrix3Xd::Zero(3, cells);
  std::vector<int> tri(static_cast<size_t>(cells), -1), pixel(static_cast<size_t>(cells), -1);
  for (int i = 0; i < raw.size(); ++i) {
    const int c = static_cast<int>(std::lround(uv(0, i))) - out.grid_origin.x();
    const int r = static_cast<int>(std::lround(uv(1, i))) - out.grid_origin.y();
    const long k = static_cast<long>(c) * R + r;
    const Vec3 x = raw.points.col(i);
    const double h = axis.dot(x);
    height[static_cast<size_t>(k)] += h;
    tangent.col(k) += x - h * axis;
    weight[static_cast<size_t>(k)] += options.constant_weight ? *options.constant_weight : raw.weights(i);
    if (count[static_cast<size_t>(k)]++ == 0) {
      tri[static_cast<size_t>(k)] = raw.triangle_ids[static_cast<size_t>(i)];
      pixel[static_cast<size_t>(k)] = raw.template_pixels[static_cast<size_t>(i)];
    }
  }
  std::vector<char> data(static_cast<size_t>(cells), 0), domain(static_cast<size_t>(cells), 0);
  for (long k = 0; k < cells; ++k) {
    const auto n = count[static_cast<size_t>(k)];
    if (n == 0) continue;
    height[static_cast<size_t>(k)] /= n;
    tangent.col(k) /= n;
    weight[static_cast<size_t>(k)] /= n;
    data[static_cast<size_t>(k)] = 1;
    domain[static_cast<size_t>(k)] = 1;
  }
  // Empty cells inside reconstructed triangles take the coarse facet.
  const double empty_weight = options.constant_weight ? *options.constant_weight : kMaxWeight;
  for (int t : used) {
    const Mat23 w = mesh.view_triangle(ref, t);
    const Mat33 f = mesh.facet(t);
    const int c0 = std::max(0, static_cast<int>(std::floor(w.row(0).minCoeff())) - out.grid_origin.x());
    const int c1 = std::min(C - 1, static_cast<int>(std::ceil(w.row(0).maxCoeff())) - out.grid_origin.x());
    const int r0 = std::max(0, static_cast<int>(std::floor(w.row(1).minCoeff())) - out.grid_origin.y());
    const int r1 = std::min(R - 1, static_cast<int>(std::ceil(w.row(1).maxCoeff())) - out.grid_origin.y());
    for (int c = c0; c <= c1; ++c) {
      for (int r = r0; r <= r1; ++r) {
        const long k = static_cast<long>(c) * R + r;
        if (domain[static_cast<size_t>(k)]) continue;
        const Barycentric lam =
            barycentric_of(Vec2(c + out.grid_origin.x(), r + out.grid_origin.y()), w);
        if (!lam.inside(1e-12)) continue;
        const Vec3 x = f * lam.vec();
        height[static_cast<size_t>(k)] = axis.dot(x);
        tangent.col(k) = x - axis.dot(x) * axis;
        weight[static_cast<size_t>(k)] = empty_weight;
        tri[static_cast<size_t>(k)] = t;
        domain[static_cast<size_t>(k)] = 1;
      }
    }
  }

  // Smoothness edges (forward differences), weighted by G of the first cell.
  struct Edge {
    long a, b;
    double w;
  };
  std::vector<Edge> edges;
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < R; ++r) {
      const long k = static_cast<long>(c) * R + r;
      if (!domain[static_cast<size_t>(k)] || weight[static_cast<size_t>(k)] <= 0.0) continue;
      if (r + 1 < R && domain[static_cast<size_t>(k + 1)]) edges.push_back({k, k + 1, weight[static_cast<size_t>(k)]});
      if (c + 1 < C && domain[static_cast<size_t>(k + R)]) edges.push_back({k, k + R, weight[static_cast<size_t>(k)]});
    }
  }
  // Keep only components that hold data.
  std::vector<int> parent(static_cast<size_t>(cells));
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& e : edges) {
    const int ra = find_root(parent, static_cast<int>(e.a)), rb = find_root(parent, static_cast<int>(e.b));
    if (ra != rb) parent[static_cast<size_t>(std::max(ra, rb))] = std::min(ra, rb);
  }
  std::vector<char> anchored(static_cast<size_t>(cells), 0);
  for (long k = 0; k < cells; ++k) {
    if (data[static_cast<size_t>(k)]) anchored[static_cast<size_t>(find_root(parent, static_cast<int>(k)))] = 1;
  }
  std::vector<int> index(static_cast<size_t>(cells), -1);
  int n = 0;
  for (long k = 0; k < cells; ++k) {
    if (domain[static_cast<size_t>(k)] && anchored[static_cast<size_t>(find_root(parent, static_cast<int>(k)))]) {
      index[static_cast<size_t>(k)] = n++;
      out.cells.push_back(static_cast<int>(k));
    }
  }

  Eigen::VectorXd data_w = Eigen::VectorXd::Zero(n), d = Eigen::VectorXd::Zero(n), x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(out.cells[static_cast<size_t>(i)]);
    if (data[k]) {
      data_w(i) = options.lambda * (1.0 - weight[k]);
      d(i) = height[k];
    }
    x(i) = height[k];
  }
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<Edge> live;
  for (const auto& e : edges) {
    const int ia = index[static_cast<size_t>(e.a)], ib = index[static_cast<size_t>(e.b)];
    if (ia < 0 || ib < 0) continue;
    live.push_back({ia, ib, e.w});
    triplets.emplace_back(ia, ia, e.w);
    triplets.emplace_back(ib, ib, e.w);
    triplets.emplace_back(ia, ib, -e.w);
    triplets.emplace_back(ib, ia, -e.w);
  }
  for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, data_w(i));
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(triplets.begin(), triplets.end());
  const Eigen::VectorXd b = data_w.cwiseProduct(d);

  // Accumulated in extended precision: near convergence CG decrements fall below double summation noise.
  auto energy = [&](const Eigen::VectorXd& h) {
    long double e = 0.0L;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      const long double r = static_cast<long double>(h(i)) - d(i);
      e += data_w(i) * r * r;
    }
    for (const auto& l : live) {
      const long double g = static_cast<long double>(h(l.b)) - h(l.a);
      e += l.w * g * g;
    }
    return static_cast<double>(e);
  };

  // Jacobi-preconditioned conjugate gradients; every iterate lowers the energy.
  const Eigen::VectorXd inv_diag = A.diagonal().cwiseInverse();
  Eigen::VectorXd r = b - A * x;
  // Residual scale: the data forces of a unit-extent height error, so heights near zero still stop.
  const double extent = (raw.points.rowwise().maxCoeff() - raw.points.rowwise().minCoeff()).maxCoeff();
  const double stop = options.tol * std::max({b.norm(), data_w.norm() * extent, 1e-300});
  out.energy_trace.push_back(energy(x));
  const double e_scale = std::max(std::abs(out.energy_trace.front()), 1e-300);
  if (r.norm() <= stop) out.converged = true;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  for (int it = 0; it < options.max_iters && !out.converged; ++it) {
    const Eigen::VectorXd Ap = A * p;
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) break;
    const double alpha = rz / pAp;
    x += alpha * p;
    r -= alpha * Ap;
    const double e = energy(x);
    if (!std::isfinite(e) || e > out.energy_trace.back() + options.slack * e_scale) {
      throw Error(ErrorCode::Divergence, "refinement energy rose from " + std::to_string(out.energy_trace.back()) +
                                             " to " + std::to_string(e) + " at iteration " + std::to_string(it + 1));
    }
    out.energy_trace.push_back(e);
    out.iterations = it + 1;
    if (r.norm() <= stop) {
      out.converged = true;
      break;
    }
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  out.energy = out.energy_trace.back();

  out.points.resize(3, n);
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(out.cells[static_cast<size_t>(i)]);
    out.points.col(i) = tangent.col(static_cast<Eigen::Index>(k)) + x(i) * axis;
    out.triangle_ids.push_back(tri[k]);
    out.template_pixels.push_back(pixel[k]);
    out.has_data.push_back(data[k]);
  }
  return out;
}

Eigen::ArrayXXd height_map(const DenseSurface& surface) {
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Constant(surface.grid_rows, surface.grid_cols, std::nan(""));
  const Eigen::VectorXd h = surface.heights();
  for (int i = 0; i < surface.size(); ++i) {
    const int k = surface.cells[static_cast<size_t>(i)];
    out(k % surface.grid_rows, k / surface.grid_rows) = h(i);
  }
  return out;
}

}  // namespace pmvps
