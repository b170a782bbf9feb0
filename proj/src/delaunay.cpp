#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pmvps/error.hpp"
#include "pmvps/geometry.hpp"

namespace pmvps {

namespace {

using Real = long double;

struct Predicates {
  std::span<const Vec2> pts;
  Real scale2;  // squared extent, for relative tolerances

  Real orient(int a, int b, int c) const {
    const Real bx = Real(pts[b].x()) - pts[a].x(), by = Real(pts[b].y()) - pts[a].y();
    const Real cx = Real(pts[c].x()) - pts[a].x(), cy = Real(pts[c].y()) - pts[a].y();
    const Real v = bx * cy - by * cx;
    return std::abs(v) <= Real(1e-13) * scale2 ? Real(0) : v;
  }

  // > 0 when d lies strictly inside the circumcircle of the counter-clockwise triangle (a, b, c).
  Real incircle(int a, int b, int c, int d) const {
    const Real dx = pts[d].x(), dy = pts[d].y();
    const Real adx = pts[a].x() - dx, ady = pts[a].y() - dy;
    const Real bdx = pts[b].x() - dx, bdy = pts[b].y() - dy;
    const Real cdx = pts[c].x() - dx, cdy = pts[c].y() - dy;
    const Real ad = adx * adx + ady * ady;
    const Real bd = bdx * bdx + bdy * bdy;
    const Real cd = cdx * cdx + cdy * cdy;
    const Real v = adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
    const Real mag = std::max({ad, bd, cd});
    return std::abs(v) <= Real(1e-12) * mag * mag ? Real(0) : v;
  }
};

using EdgeKey = std::pair<int, int>;
EdgeKey key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

class Triangulation {
 public:
  explicit Triangulation(const Predicates& pred) : pred_(pred) {}

  void add(int a, int b, int c) {
    if (pred_.orient(a, b, c) < 0) std::swap(b, c);
    const int t = static_cast<int>(tris_.size());
    tris_.push_back({a, b, c});
    for (int k = 0; k < 3; ++k) attach(key(tris_[t][k], tris_[t][(k + 1) % 3]), t);
  }

  void make_delaunay() {
    std::vector<EdgeKey> stack;
    for (const auto& [e, owners] : edges_) stack.push_back(e);
    while (!stack.empty()) {
      const EdgeKey e = stack.back();
      stack.pop_back();
      auto it = edges_.find(e);
      if (it == edges_.end() || it->second[1] < 0) continue;
      const int t1 = it->second[0], t2 = it->second[1];
      const int c = opposite(t1, e), d = opposite(t2, e);
      // Orient so that t1 = (a, b, c) counter-clockwise.
      int a = e.first, b = e.second;
      if (!has_directed_edge(t1, a, b)) std::swap(a, b);
      if (pred_.incircle(a, b, c, d) <= 0) continue;
      if (pred_.orient(c, a, d) <= 0 || pred_.orient(d, b, c) <= 0) continue;

      detach(key(a, b), t1);
      detach(key(a, b), t2);
      detach(key(b, c), t1);
      detach(key(a, d), t2);
      tris_[t1] = {a, d, c};
      tris_[t2] = {d, b, c};
      attach(key(c, d), t1);
      attach(key(c, d), t2);
      attach(key(a, d), t1);
      attach(key(b, c), t2);
      for (const auto& next : {key(a, d), key(d, b), key(b, c), key(c, a)}) stack.push_back(next);
    }
  }

  const std::vector<TriangleIndices>& triangles() const { return tris_; }

 private:
  void attach(const EdgeKey& e, int t) {
    auto [it, inserted] = edges_.try_emplace(e, std::array<int, 2>{t, -1});
    if (!inserted) it->second[1] = t;
  }

  void detach(const EdgeKey& e, int t) {
    auto it = edges_.find(e);
    if (it == edges_.end()) return;
    auto& o = it->second;
    if (o[0] == t) {
      o[0] = o[1];
      o[1] = -1;
    } else if (o[1] == t) {
      o[1] = -1;
    }
    if (o[0] < 0) edges_.erase(it);
  }

  int opposite(int t, const EdgeKey& e) const {
    for (int v : tris_[t]) {
      if (v != e.first && v != e.second) return v;
    }
    return -1;
  }

  bool has_directed_edge(int t, int a, int b) const {
    for (int k = 0; k < 3; ++k) {
      if (tris_[t][k] == a && tris_[t][(k + 1) % 3] == b) return true;
    }
    return false;
  }

  const Predicates& pred_;
  std::vector<TriangleIndices> tris_;
  std::map<EdgeKey, std::array<int, 2>> edges_;
};

}  // namespace

std::vector<TriangleIndices> delaunay_triangulate(std::span<const Vec2> pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "triangulation needs at least 3 points");
  for (const auto& p : pts) {
    if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite 2D point");
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pts[a].x() != pts[b].x()) return pts[a].x() < pts[b].x();
    if (pts[a].y() != pts[b].y()) return pts[a].y() < pts[b].y();
    return a < b;
  });

  Eigen::Vector2d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo).norm(), 1e-300);
  for (int i = 1; i < n; ++i) {
    if ((pts[order[i]] - pts[order[i - 1]]).norm() <= 1e-12 * extent) {
      throw Error(ErrorCode::DuplicatePoints, "points " + std::to_string(order[i - 1]) + " and " +
                                                  std::to_string(order[i]) + " coincide");
    }
  }

  const Predicates pred{pts, Real(extent) * Real(extent)};

  // Seed: leading collinear chain plus the first point off its line.
  int k = 2;
  while (k < n && pred.orient(order[0], order[1], order[k]) == 0) ++k;
  if (k == n) throw Error(ErrorCode::CollinearPoints, "all points are collinear");

  Triangulation tri(pred);
  for (int i = 0; i + 1 < k; ++i) tri.add(order[i], order[i + 1], order[k]);

  // Counter-clockwise hull.
  std::vector<int> hull;
  if (pred.orient(order[0], order[1], order[k]) > 0) {
    for (int i = 0; i < k; ++i) hull.push_back(order[i]);
  } else {
    for (int i = k - 1; i >= 0; --i) hull.push_back(order[i]);
  }
  hull.push_back(order[k]);

  for (int j = k + 1; j < n; ++j) {
    const int q = order[j];
    const int h = static_cast<int>(hull.size());
    auto visible = [&](int i) { return pred.orient(hull[i], hull[(i + 1) % h], q) < 0; };
    int start = -1;
    for (int i = 0; i < h; ++i) {
      if (!visible((i + h - 1) % h) && visible(i)) {
        start = i;
        break;
      }
    }
    if (start < 0) throw Error(ErrorCode::InvalidArgument, "triangulation sweep lost the hull");
    int end = start;
    while (visible(end % h)) {
      const int a = hull[end % h], b = hull[(end + 1) % h];
      tri.add(b, a, q);
      ++end;
    }
    // Vertices strictly between hull[start] and hull[end] leave the hull.
    std::vector<int> next;
    next.reserve(static_cast<size_t>(h + 1));
    const int last = end % h;
    for (int i = last;; i = (i + 1) % h) {
      next.push_back(hull[i]);
      if (i == start) break;
    }
    next.push_back(q);
    hull = std::move(next);
  }

  tri.make_delaunay();
  return tri.triangles();
}

}  // namespace pmvps
