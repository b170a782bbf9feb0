#include "pmvps/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "pmvps/error.hpp"

namespace pmvps {

Eigen::Matrix3Xd FacetPointSet::surface_points() const {
  return base_points + normal * elevations.transpose();
}

FacetPointSet FacetPointSet::transformed(const Mat33& rotation, const Vec3& translation) const {
  FacetPointSet out = *this;
  out.facet = (rotation * facet).colwise() + translation;
  out.enlarged = (rotation * enlarged).colwise() + translation;
  out.normal = rotation * normal;
  out.base_points = (rotation * base_points).colwise() + translation;
  return out;
}

FacetPointSet lift_to_facet(const HeightField& field, const FacetFrame& frame, const Mat33& facet_vertices3d,
                            int triangle_id, double enlargement, TriangleIndices vertex_ids, long observed_count) {
  if (field.triangle_id >= 0 && triangle_id >= 0 && field.triangle_id != triangle_id) {
    throw Error(ErrorCode::ShapeMismatch, "height field belongs to triangle " + std::to_string(field.triangle_id) +
                                              ", not " + std::to_string(triangle_id));
  }
  FacetPointSet out;
  out.triangle_id = triangle_id;
  out.vertex_ids = vertex_ids;
  out.facet = facet_vertices3d;
  out.enlarged = enlarge_triangle(facet_vertices3d, enlargement);
  out.normal = frame.facet_normal;
  out.pitch = field.pitch;
  out.pixels = field.pixels;
  out.observed_count = observed_count;

  const int n = field.size();
  const Vec2 centroid = frame.template2d.rowwise().mean();
  out.base_points.resize(3, n);
  out.barycentrics.resize(3, n);
  out.template_coords.resize(3, n);
  out.elevations = field.points.row(2).transpose();
  for (int i = 0; i < n; ++i) {
    const Vec2 xy = field.points.col(i).head<2>();
    const Vec3 lam = barycentric_of(xy, frame.template2d).vec();
    out.barycentrics.col(i) = lam;
    out.base_points.col(i) = facet_vertices3d * lam;
    out.template_coords.col(i) << xy - centroid, field.points(2, i);
  }
  return out;
}

FacetPointSet lift_to_facet(const HeightField& field, const CoarseMesh& mesh, double enlargement,
                            long observed_count) {
  const int t = field.triangle_id;
  if (t < 0 || t >= mesh.triangle_count()) throw Error(ErrorCode::InvalidArgument, "height field has no triangle");
  const Mat33 facet = mesh.facet(t);
  return lift_to_facet(field, facet_frame(facet), facet, t, enlargement, mesh.triangles[static_cast<size_t>(t)],
                       observed_count);
}

namespace {

int shared_vertices(const FacetPointSet& a, const FacetPointSet& b) {
  const bool ids = std::all_of(a.vertex_ids.begin(), a.vertex_ids.end(), [](int v) { return v >= 0; }) &&
                   std::all_of(b.vertex_ids.begin(), b.vertex_ids.end(), [](int v) { return v >= 0; });
  int shared = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (ids) {
        shared += a.vertex_ids[static_cast<size_t>(i)] == b.vertex_ids[static_cast<size_t>(j)] ? 1 : 0;
      } else {
        const double scale = std::max(a.facet.cwiseAbs().maxCoeff(), 1.0);
        shared += (a.facet.col(i) - b.facet.col(j)).norm() <= 1e-9 * scale ? 1 : 0;
      }
    }
  }
  return shared;
}

std::vector<int> band(const FacetPointSet& points, const FacetPointSet& other) {
  std::vector<int> out;
  for (int i = 0; i < points.size(); ++i) {
    const Barycentric lam = barycentric_of(Vec3(points.base_points.col(i)), other.enlarged);
    if (lam.alpha > 1e-9 && lam.beta > 1e-9 && lam.gamma > 1e-9) out.push_back(i);
  }
  return out;
}

std::vector<int> nearest(const Eigen::Matrix3Xd& from, const std::vector<int>& from_ids, const Eigen::Matrix3Xd& to,
                         const std::vector<int>& to_ids, std::vector<double>* dist) {
  std::vector<int> out(from_ids.size(), -1);
  if (dist) dist->assign(from_ids.size(), std::numeric_limits<double>::infinity());
  for (size_t k = 0; k < from_ids.size(); ++k) {
    const Vec3 p = from.col(from_ids[k]);
    double best = std::numeric_limits<double>::infinity();
    for (size_t m = 0; m < to_ids.size(); ++m) {
      const double d = (to.col(to_ids[m]) - p).squaredNorm();
      if (d < best) {
        best = d;
        out[k] = static_cast<int>(m);
      }
    }
    if (dist) (*dist)[k] = std::sqrt(best);
  }
  return out;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
  }
};

Vec3 corrected(const FacetPointSet& s, int i, const Vec3& h) {
  return s.base_points.col(i) + s.normal * h.dot(s.template_coords.col(i));
}

}  // namespace

double default_pair_radius(const FacetPointSet& a, const FacetPointSet& b, double factor) {
  return factor * std::max(a.pitch, b.pitch);
}

Correspondences overlap_correspondences(const FacetPointSet& a, const FacetPointSet& b, double r_pair) {
  if (shared_vertices(a, b) != 2) {
    throw Error(ErrorCode::NonAdjacent, "triangles " + std::to_string(a.triangle_id) + " and " +
                                            std::to_string(b.triangle_id) + " do not share an edge");
  }
  Correspondences out;
  out.a = a.triangle_id;
  out.b = b.triangle_id;
  const std::vector<int> band_a = band(a, b);
  const std::vector<int> band_b = band(b, a);
  if (band_a.empty() || band_b.empty()) {
    out.empty_band = true;
    return out;
  }
  std::vector<double> dist;
  const std::vector<int> ab = nearest(a.base_points, band_a, b.base_points, band_b, &dist);
  const std::vector<int> ba = nearest(b.base_points, band_b, a.base_points, band_a, nullptr);
  for (size_t k = 0; k < band_a.size(); ++k) {
    const int m = ab[k];
    if (m < 0 || ba[static_cast<size_t>(m)] != static_cast<int>(k) || dist[k] > r_pair) continue;
    out.pairs.emplace_back(band_a[k], band_b[static_cast<size_t>(m)]);
  }
  out.empty_band = out.pairs.empty();
  return out;
}

double seam_gap(const FacetPointSet& a, int i, const Vec3& ha, const FacetPointSet& b, int j, const Vec3& hb) {
  Vec3 axis = a.normal + b.normal;
  axis = axis.norm() > 1e-12 ? Vec3(axis.normalized()) : a.normal;
  return axis.dot(corrected(a, i, ha) - corrected(b, j, hb));
}

Eigen::Matrix3Xd corrected_points(const FacetPointSet& set, const PatchCorrection& correction) {
  Eigen::Matrix3Xd out(3, set.size());
  for (int i = 0; i < set.size(); ++i) out.col(i) = corrected(set, i, correction.h);
  return out;
}

AlignmentResult solve_corrections(std::span<const FacetPointSet> sets, std::span<const Correspondences> links,
                                  std::span<const double> curvatures, const AlignOptions& options) {
  const int n = static_cast<int>(sets.size());
  if (static_cast<int>(curvatures.size()) != n) {
    throw Error(ErrorCode::ShapeMismatch, "one curvature per point set is required");
  }
  std::map<int, int> position;
  for (int k = 0; k < n; ++k) position[sets[static_cast<size_t>(k)].triangle_id] = k;

  struct Link {
    int a, b;
    const Correspondences* c;
  };
  std::vector<Link> used;
  UnionFind uf(n);
  for (const auto& c : links) {
    const auto ia = position.find(c.a), ib = position.find(c.b);
    if (ia == position.end() || ib == position.end() || c.pairs.empty()) continue;
    used.push_back({ia->second, ib->second, &c});
    uf.unite(ia->second, ib->second);
  }

  AlignmentResult result;
  result.corrections.resize(static_cast<size_t>(n));
  std::vector<int> pinned_of_root(static_cast<size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    const int root = uf.find(k);
    int& pin = pinned_of_root[static_cast<size_t>(root)];
    if (pin < 0 || sets[static_cast<size_t>(k)].observed_count > sets[static_cast<size_t>(pin)].observed_count) pin = k;
  }
  std::vector<int> unknown(static_cast<size_t>(n), -1);
  int unknowns = 0;
  std::map<int, int> component_id;
  for (int k = 0; k < n; ++k) {
    const int root = uf.find(k);
    auto& corr = result.corrections[static_cast<size_t>(k)];
    corr.curvature = curvatures[static_cast<size_t>(k)];
    corr.component = component_id.try_emplace(root, static_cast<int>(component_id.size())).first->second;
    if (pinned_of_root[static_cast<size_t>(root)] == k) {
      corr.pinned = true;
    } else {
      unknown[static_cast<size_t>(k)] = unknowns++;
    }
  }
  result.components = static_cast<int>(component_id.size());

  // Anti-flattening constant per link, and its per-patch average.
  const double c_max = curvatures.empty() ? 0.0 : *std::max_element(curvatures.begin(), curvatures.end());
  const double c_floor = 1e-12 * std::max(1.0, c_max);
  std::vector<double> link_k(used.size());
  std::vector<double> patch_k(static_cast<size_t>(n), 0.0);
  std::vector<int> patch_links(static_cast<size_t>(n), 0);
  for (size_t l = 0; l < used.size(); ++l) {
    const double csum = static_cast<double>(used[l].c->pairs.size()) *
                        (std::max(curvatures[static_cast<size_t>(used[l].a)], 0.0) +
                         std::max(curvatures[static_cast<size_t>(used[l].b)], 0.0));
    link_k[l] = 1.0 / std::max(csum, c_floor);
    for (int s : {used[l].a, used[l].b}) {
      patch_k[static_cast<size_t>(s)] += link_k[l];
      patch_links[static_cast<size_t>(s)] += 1;
    }
  }
  double k_mean = 0.0;
  int k_count = 0;
  for (int s = 0; s < n; ++s) {
    if (patch_links[static_cast<size_t>(s)] == 0) continue;
    patch_k[static_cast<size_t>(s)] /= patch_links[static_cast<size_t>(s)];
    k_mean += patch_k[static_cast<size_t>(s)];
    ++k_count;
  }
  if (k_count > 0) k_mean /= k_count;

  const bool additive = options.variant == AntiFlattening::Additive;
  std::vector<Vec3> h(static_cast<size_t>(n), Vec3::UnitZ());
  std::vector<Vec3> fixed(static_cast<size_t>(n), Vec3::UnitZ());  // value of each pinned patch

  // Normal equations of the stacked pair residuals r = c + Ja ha - Jb hb (+ k).
  auto build_and_solve = [&](const std::vector<Vec3>& targets) {
    std::map<std::pair<int, int>, Mat33> blocks;
    auto block = [&blocks](int r, int c) -> Mat33& { return blocks.try_emplace({r, c}, Mat33::Zero()).first->second; };
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(3 * unknowns);
    std::vector<Vec3> data_diag(static_cast<size_t>(n), Vec3::Zero());
    for (size_t l = 0; l < used.size(); ++l) {
      const FacetPointSet& A = sets[static_cast<size_t>(used[l].a)];
      const FacetPointSet& B = sets[static_cast<size_t>(used[l].b)];
      const int ua = unknown[static_cast<size_t>(used[l].a)], ub = unknown[static_cast<size_t>(used[l].b)];
      Mat33 aa = Mat33::Zero(), bb = Mat33::Zero(), ab = Mat33::Zero();
      Vec3 ga = Vec3::Zero(), gb = Vec3::Zero();
      const double k = additive ? link_k[l] : 0.0;
      for (const auto& [i, j] : used[l].c->pairs) {
        const Mat33 Ja = A.normal * A.template_coords.col(i).transpose();
        const Mat33 Jb = -B.normal * B.template_coords.col(j).transpose();
        Vec3 c = A.base_points.col(i) - B.base_points.col(j) + Vec3::Constant(k);
        if (ua < 0) c += Ja * fixed[static_cast<size_t>(used[l].a)];
        if (ub < 0) c += Jb * fixed[static_cast<size_t>(used[l].b)];
        aa += Ja.transpose() * Ja;
        bb += Jb.transpose() * Jb;
        ab += Ja.transpose() * Jb;
        ga -= Ja.transpose() * c;
        gb -= Jb.transpose() * c;
      }
      data_diag[static_cast<size_t>(used[l].a)] += aa.diagonal();
      data_diag[static_cast<size_t>(used[l].b)] += bb.diagonal();
      if (ua >= 0) {
        block(ua, ua) += aa;
        rhs.segment<3>(3 * ua) += ga;
      }
      if (ub >= 0) {
        block(ub, ub) += bb;
        rhs.segment<3>(3 * ub) += gb;
      }
      if (ua >= 0 && ub >= 0) {
        block(ua, ub) += ab;
        block(ub, ua) += ab.transpose();
      }
    }
    for (int s = 0; s < n; ++s) {
      const int u = unknown[static_cast<size_t>(s)];
      if (u < 0) continue;
      // The penalty follows the data stiffness of each component of h; elevations are much
      // smaller than in-plane coordinates, so one scalar weight would freeze h3.
      const Vec3 diag = data_diag[static_cast<size_t>(s)];
      const double scale = std::max(diag.maxCoeff(), 1e-300);
      Vec3 weight = diag.cwiseMax(1e-6 * scale);
      double beta = 1e-12;
      if (!additive && patch_links[static_cast<size_t>(s)] > 0 && k_mean > 0.0) {
        beta += options.beta * std::clamp(patch_k[static_cast<size_t>(s)] / k_mean, 0.1, 10.0);
      }
      weight *= beta;
      if (patch_links[static_cast<size_t>(s)] == 0) weight = Vec3::Ones();
      block(u, u) += weight.asDiagonal().toDenseMatrix();
      rhs.segment<3>(3 * u) += weight.cwiseProduct(targets[static_cast<size_t>(s)]);
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(blocks.size() * 9);
    for (const auto& [key, m] : blocks) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) triplets.emplace_back(3 * key.first + r, 3 * key.second + c, m(r, c));
      }
    }
    Eigen::SparseMatrix<double> M(3 * unknowns, 3 * unknowns);
    M.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(M);
    if (solver.info() != Eigen::Success) throw Error(ErrorCode::UnderConstrained, "alignment system is singular");
    const Eigen::VectorXd x = solver.solve(rhs);
    for (int s = 0; s < n; ++s) {
      const int u = unknown[static_cast<size_t>(s)];
      h[static_cast<size_t>(s)] = u < 0 ? fixed[static_cast<size_t>(s)] : Vec3(x.segment<3>(3 * u));
    }
  };

  if (unknowns > 0) {
    std::vector<Vec3> targets(static_cast<size_t>(n), Vec3::UnitZ());
    build_and_solve(targets);
    if (!additive && options.resolve_flips) {
      // When most of a component disagrees with its pinned patch, the pinned patch is the flipped one.
      std::map<int, std::pair<int, int>> votes;  // root -> (negative, total)
      for (int s = 0; s < n; ++s) {
        if (unknown[static_cast<size_t>(s)] < 0) continue;
        auto& v = votes[uf.find(s)];
        v.first += h[static_cast<size_t>(s)].z() < 0.0;
        v.second += 1;
      }
      bool changed = false;
      for (int s = 0; s < n; ++s) {
        const auto v = votes.find(uf.find(s));
        const bool repin = v != votes.end() && 2 * v->second.first > v->second.second;
        if (unknown[static_cast<size_t>(s)] < 0) {
          if (repin) fixed[static_cast<size_t>(s)] = -Vec3::UnitZ(), changed = true;
          continue;
        }
        const bool negative = h[static_cast<size_t>(s)].z() < 0.0;
        if (negative != repin) {
          targets[static_cast<size_t>(s)] = -Vec3::UnitZ();
          changed = true;
        }
      }
      if (changed) build_and_solve(targets);
    }
  }

  for (int s = 0; s < n; ++s) {
    auto& corr = result.corrections[static_cast<size_t>(s)];
    corr.h = h[static_cast<size_t>(s)];
    corr.transform = Mat33::Identity();
    corr.transform.row(2) = corr.h.transpose();
  }

  for (size_t l = 0; l < used.size(); ++l) {
    const FacetPointSet& A = sets[static_cast<size_t>(used[l].a)];
    const FacetPointSet& B = sets[static_cast<size_t>(used[l].b)];
    const Vec3 ha = h[static_cast<size_t>(used[l].a)], hb = h[static_cast<size_t>(used[l].b)];
    EdgeReport e;
    e.a = A.triangle_id;
    e.b = B.triangle_id;
    e.pairs = static_cast<int>(used[l].c->pairs.size());
    const double k = additive ? link_k[l] : 0.0;
    for (const auto& [i, j] : used[l].c->pairs) {
      const double before = seam_gap(A, i, Vec3::UnitZ(), B, j, Vec3::UnitZ());
      const double after = seam_gap(A, i, ha, B, j, hb);
      e.gap_before += before * before;
      e.gap_after += after * after;
      result.residual += (corrected(A, i, ha) - corrected(B, j, hb) + Vec3::Constant(k)).squaredNorm();
    }
    e.gap_before = std::sqrt(e.gap_before / e.pairs);
    e.gap_after = std::sqrt(e.gap_after / e.pairs);
    result.edges.push_back(e);
  }
  for (const auto& c : links) {
    if (c.pairs.empty()) {
      result.warnings.push_back("no overlap pairs between triangles " + std::to_string(c.a) + " and " +
                                std::to_string(c.b));
    }
  }
  if (result.components > 1) {
    result.warnings.push_back("alignment graph has " + std::to_string(result.components) +
                              " components; each is pinned separately");
  }
  return result;
}

AlignmentResult solve_corrections(std::span<const FacetPointSet> sets, const CoarseMesh& mesh,
                                  std::span<const double> curvatures, const AlignOptions& options,
                                  double pair_radius_factor) {
  std::map<int, int> position;
  for (size_t k = 0; k < sets.size(); ++k) position[sets[k].triangle_id] = static_cast<int>(k);
  std::vector<Correspondences> links;
  for (const auto& [ta, tb] : mesh.adjacent_pairs()) {
    const auto ia = position.find(ta), ib = position.find(tb);
    if (ia == position.end() || ib == position.end()) continue;
    const FacetPointSet& a = sets[static_cast<size_t>(ia->second)];
    const FacetPointSet& b = sets[static_cast<size_t>(ib->second)];
    links.push_back(overlap_correspondences(a, b, default_pair_radius(a, b, pair_radius_factor)));
  }
  return solve_corrections(sets, links, curvatures, options);
}

}  // namespace pmvps
