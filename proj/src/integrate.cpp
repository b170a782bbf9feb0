#include "pmvps/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "pmvps/error.hpp"

namespace pmvps {

namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Orthonormal DCT-II matrix; row k is the k-th cosine basis vector.
Eigen::MatrixXd dct_matrix(int n) {
  Eigen::MatrixXd c(n, n);
  for (int k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int j = 0; j < n; ++j) c(k, j) = s * std::cos(std::numbers::pi * (j + 0.5) * k / n);
  }
  return c;
}

// Harmonic interpolation of the unknown entries of two fields with the known
// entries as Dirichlet data and natural boundaries at the box edge.
void fill_harmonic(Eigen::ArrayXXd& p, Eigen::ArrayXXd& q, const Mask& known) {
  const int rows = static_cast<int>(p.rows()), cols = static_cast<int>(p.cols());
  Eigen::ArrayXXi index = Eigen::ArrayXXi::Constant(rows, cols, -1);
  int unknown = 0;
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      if (!known(r, c)) index(r, c) = unknown++;
    }
  }
  if (unknown == 0) return;
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(unknown, 2);
  const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      const int u = index(r, c);
      if (u < 0) continue;
      double diag = 0.0;
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
        diag += 1.0;
        if (index(rr, cc) >= 0) {
          triplets.emplace_back(u, index(rr, cc), -1.0);
        } else {
          rhs(u, 0) += p(rr, cc);
          rhs(u, 1) += q(rr, cc);
        }
      }
      triplets.emplace_back(u, u, diag);
    }
  }
  Eigen::SparseMatrix<double> A(unknown, unknown);
  A.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::EmptyNormalField, "gradient fill is singular");
  const Eigen::MatrixXd x = solver.solve(rhs);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      if (index(r, c) < 0) continue;
      p(r, c) = x(index(r, c), 0);
      q(r, c) = x(index(r, c), 1);
    }
  }
}

// Divergence of the averaged forward-difference slopes, restricted to edges
// whose endpoints both lie in `domain`.
Eigen::ArrayXXd divergence(const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& q, const Mask& domain) {
  const auto rows = p.rows(), cols = p.cols();
  Eigen::ArrayXXd b = Eigen::ArrayXXd::Zero(rows, cols);
  for (Eigen::Index c = 0; c + 1 < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!domain(r, c) || !domain(r, c + 1)) continue;
      const double g = 0.5 * (p(r, c) + p(r, c + 1));
      b(r, c) -= g;
      b(r, c + 1) += g;
    }
  }
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r + 1 < rows; ++r) {
      if (!domain(r, c) || !domain(r + 1, c)) continue;
      const double g = 0.5 * (q(r, c) + q(r + 1, c));
      b(r, c) -= g;
      b(r + 1, c) += g;
    }
  }
  return b;
}

Eigen::ArrayXXd spectral_solve(const Eigen::ArrayXXd& b) {
  const int rows = static_cast<int>(b.rows()), cols = static_cast<int>(b.cols());
  const Eigen::MatrixXd cr = dct_matrix(rows), cc = dct_matrix(cols);
  Eigen::MatrixXd hat = cr * b.matrix() * cc.transpose();
  for (int j = 0; j < cols; ++j) {
    const double sj = std::sin(std::numbers::pi * j / (2.0 * cols));
    for (int i = 0; i < rows; ++i) {
      const double si = std::sin(std::numbers::pi * i / (2.0 * rows));
      const double eig = 4.0 * (si * si + sj * sj);
      hat(i, j) = (i == 0 && j == 0) ? 0.0 : hat(i, j) / eig;
    }
  }
  return (cr.transpose() * hat * cc).array();
}

Eigen::ArrayXXd masked_solve(const Eigen::ArrayXXd& b, const Mask& domain) {
  const int rows = static_cast<int>(b.rows()), cols = static_cast<int>(b.cols());
  Eigen::ArrayXXi index = Eigen::ArrayXXi::Constant(rows, cols, -1);
  int n = 0;
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      if (domain(r, c)) index(r, c) = n++;
    }
  }
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs(n);
  auto link = [&](int u, int v) {
    triplets.emplace_back(u, u, 1.0);
    triplets.emplace_back(v, v, 1.0);
    triplets.emplace_back(u, v, -1.0);
    triplets.emplace_back(v, u, -1.0);
  };
  // Union-find over the domain so the constant of every component can be pinned.
  std::vector<int> parent(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
  auto root = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) x = parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
    return x;
  };
  auto join = [&](int u, int v) {
    link(u, v);
    const int a = root(u), bb = root(v);
    if (a != bb) parent[static_cast<size_t>(std::max(a, bb))] = std::min(a, bb);
  };
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      const int u = index(r, c);
      if (u < 0) continue;
      rhs(u) = b(r, c);
      if (r + 1 < rows && index(r + 1, c) >= 0) join(u, index(r + 1, c));
      if (c + 1 < cols && index(r, c + 1) >= 0) join(u, index(r, c + 1));
    }
  }
  // The divergence sums to zero on every component, so pinning one node keeps the system consistent.
  for (int u = 0; u < n; ++u) {
    if (root(u) == u) triplets.emplace_back(u, u, 1.0);
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::EmptyNormalField, "masked Poisson system is singular");
  const Eigen::VectorXd z = solver.solve(rhs);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      if (index(r, c) >= 0) out(r, c) = z(index(r, c));
    }
  }
  return out;
}

void remove_mean(Eigen::ArrayXXd& z, const Mask& over) {
  const auto count = over.count();
  if (count == 0) return;
  z -= over.select(z, 0.0).sum() / static_cast<double>(count);
}

}  // namespace

Eigen::ArrayXXd integrate_gradients(const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& q, const Mask& known,
                                    IntegrationBackend backend) {
  if (p.rows() != q.rows() || p.cols() != q.cols() || p.rows() != known.rows() || p.cols() != known.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient fields and mask must share a shape");
  }
  if (known.count() == 0) throw Error(ErrorCode::EmptyNormalField, "no known gradients");
  Eigen::ArrayXXd z;
  if (backend == IntegrationBackend::Spectral) {
    Eigen::ArrayXXd pf = p, qf = q;
    fill_harmonic(pf, qf, known);
    const Mask all = Mask::Constant(p.rows(), p.cols(), true);
    z = spectral_solve(divergence(pf, qf, all));
  } else {
    z = masked_solve(divergence(p, q, known), known);
  }
  remove_mean(z, known);
  return z;
}

HeightField integrate_normals(const PhotometricFactors& factors, const PatchStack& stack,
                              const IntegrationOptions& options) {
  const int b = stack.columns();
  if (b == 0 || stack.rows <= 0 || stack.cols <= 0) throw Error(ErrorCode::EmptyNormalField, "patch has no pixels");
  if (factors.surface.cols() != b) throw Error(ErrorCode::ShapeMismatch, "factors do not match the stack");

  HeightField out;
  out.triangle_id = stack.triangle_id;
  out.rows = stack.rows;
  out.cols = stack.cols;
  out.pitch = stack.pitch;
  out.origin = stack.origin;
  out.pixels = stack.template_pixels;

  Eigen::ArrayXXd p = Eigen::ArrayXXd::Zero(stack.rows, stack.cols);
  Eigen::ArrayXXd q = Eigen::ArrayXXd::Zero(stack.rows, stack.cols);
  Mask reliable = Mask::Constant(stack.rows, stack.cols, false);
  Mask patch = Mask::Constant(stack.rows, stack.cols, false);
  for (int i = 0; i < b; ++i) {
    const int flat = stack.template_pixels[static_cast<size_t>(i)];
    const int r = flat % stack.rows, c = flat / stack.rows;
    patch(r, c) = true;
    if (stack.observed.col(i).count() < 4) continue;
    const Vec3 n = factors.normal(i);
    double nz = n.z();
    if (nz < options.nz_clamp) {
      nz = options.nz_clamp;
      out.clamped.push_back(i);
    }
    p(r, c) = -n.x() / nz;
    q(r, c) = -n.y() / nz;
    reliable(r, c) = true;
  }
  if (reliable.count() == 0) throw Error(ErrorCode::EmptyNormalField, "no pixel has a usable normal");

  Eigen::ArrayXXd z;
  if (options.backend == IntegrationBackend::Spectral) {
    z = integrate_gradients(p, q, reliable, IntegrationBackend::Spectral);
  } else {
    fill_harmonic(p, q, reliable);
    z = integrate_gradients(p, q, patch, IntegrationBackend::MaskedPoisson);
  }
  remove_mean(z, patch);
  z *= stack.pitch;

  out.points.resize(3, b);
  for (int i = 0; i < b; ++i) {
    const int flat = stack.template_pixels[static_cast<size_t>(i)];
    const Vec2 xy = stack.origin + stack.pitch * Vec2(flat / stack.rows, flat % stack.rows);
    out.points.col(i) << xy.x(), xy.y(), z(flat % stack.rows, flat / stack.rows);
  }
  return out;
}

void anchor_to_points(HeightField& field, const Mat23& anchors) {
  if (field.size() == 0) return;
  Eigen::Matrix3d A;
  Vec3 z;
  for (int k = 0; k < 3; ++k) {
    Eigen::Index best = 0;
    (field.points.topRows<2>().colwise() - anchors.col(k)).colwise().squaredNorm().minCoeff(&best);
    A.row(k) << 1.0, field.points(0, best), field.points(1, best);
    z(k) = field.points(2, best);
  }
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
  if (lu.rank() == 3) {
    const Vec3 plane = lu.solve(z);
    field.points.row(2) -= (plane(0) + plane(1) * field.points.row(0).array() +
                            plane(2) * field.points.row(1).array()).matrix();
  } else {
    field.points.row(2).array() -= z.mean();
  }
}

Curvature patch_curvature(const HeightField& field) {
  Curvature out;
  if (field.size() == 0 || field.rows < 3 || field.cols < 3) {
    out.flagged = true;
    return out;
  }
  Eigen::ArrayXXd z = Eigen::ArrayXXd::Zero(field.rows, field.cols);
  Mask in = Mask::Constant(field.rows, field.cols, false);
  for (int i = 0; i < field.size(); ++i) {
    const int flat = field.pixels[static_cast<size_t>(i)];
    z(flat % field.rows, flat / field.rows) = field.points(2, i);
    in(flat % field.rows, flat / field.rows) = true;
  }
  double total = 0.0;
  int count = 0;
  for (int c = 1; c + 1 < field.cols; ++c) {
    for (int r = 1; r + 1 < field.rows; ++r) {
      if (!(in(r, c) && in(r - 1, c) && in(r + 1, c) && in(r, c - 1) && in(r, c + 1))) continue;
      total += std::abs(z(r - 1, c) + z(r + 1, c) + z(r, c - 1) + z(r, c + 1) - 4.0 * z(r, c));
      ++count;
    }
  }
  if (count == 0) {
    out.flagged = true;
    return out;
  }
  out.value = total / count / (field.pitch * field.pitch);
  return out;
}

}  // namespace pmvps
