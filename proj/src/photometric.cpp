#include "pmvps/photometric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "pmvps/error.hpp"

namespace pmvps {

double shade(const Vec4& light, double albedo, const Vec3& normal) {
  if (std::abs(normal.norm() - 1.0) > 1e-6) throw Error(ErrorCode::InvalidArgument, "normal must be unit length");
  if (albedo < 0.0) throw Error(ErrorCode::InvalidArgument, "albedo must be non-negative");
  return light(0) * albedo + light.tail<3>().dot(albedo * normal);
}

ManifoldPoint project_manifold(const Vec4& column) {
  ManifoldPoint out;
  const Vec3 tail = column.tail<3>();
  const double len = tail.norm();
  if (!(len > 1e-300) || !std::isfinite(len)) {
    const double rho = std::max(0.0, column(0) / 2.0);
    out.column << rho, 0.0, 0.0, rho;
    out.degenerate = true;
    return out;
  }
  const double rho = std::max(0.0, (column(0) + len) / 2.0);
  out.column(0) = rho;
  out.column.tail<3>() = rho * (tail / len);
  return out;
}

Vec3 PhotometricFactors::normal(int i) const {
  const Vec3 t = surface.col(i).tail<3>();
  const double len = t.norm();
  return len > 0.0 ? Vec3(t / len) : Vec3::UnitZ();
}

double masked_objective(const Eigen::MatrixXd& J, const BoolMatrix& D, const LightMatrix& L, const SurfaceMatrix& N) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < J.cols(); ++i) {
    const Vec4 n = N.col(i);
    for (Eigen::Index g = 0; g < J.rows(); ++g) {
      if (!D(g, i)) continue;
      const double r = J(g, i) - L.row(g).dot(n);
      total += r * r;
    }
  }
  return total;
}

namespace {

using Mat4 = Eigen::Matrix4d;

double column_objective(const Eigen::MatrixXd& J, const BoolMatrix& D, const LightMatrix& L, const Vec4& n,
                        Eigen::Index i) {
  double total = 0.0;
  for (Eigen::Index g = 0; g < J.rows(); ++g) {
    if (!D(g, i)) continue;
    const double r = J(g, i) - L.row(g).dot(n);
    total += r * r;
  }
  return total;
}

// Proximal least squares: argmin |A-system| + eps |x - prev|^2. Never increases the plain objective.
Vec4 proximal_solve(const Mat4& normal, const Vec4& rhs, const Vec4& prev, double ridge) {
  const double eps = ridge * std::max(normal.trace() / 4.0, 1e-300) + 1e-300;
  return (normal + eps * Mat4::Identity()).ldlt().solve(rhs + eps * prev);
}

void update_lighting(const Eigen::MatrixXd& J, const BoolMatrix& D, const SurfaceMatrix& N, LightMatrix& L,
                     double ridge) {
  const Eigen::Index f = J.rows(), b = J.cols();
  std::vector<Mat4> normals(static_cast<size_t>(f), Mat4::Zero());
  std::vector<Vec4> rhs(static_cast<size_t>(f), Vec4::Zero());
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vec4 n = N.col(i);
    const Mat4 nn = n * n.transpose();
    for (Eigen::Index g = 0; g < f; ++g) {
      if (!D(g, i)) continue;
      normals[static_cast<size_t>(g)] += nn;
      rhs[static_cast<size_t>(g)] += J(g, i) * n;
    }
  }
  for (Eigen::Index g = 0; g < f; ++g) {
    if (normals[static_cast<size_t>(g)].trace() == 0.0) continue;
    const Vec4 prev = L.row(g).transpose();
    L.row(g) = proximal_solve(normals[static_cast<size_t>(g)], rhs[static_cast<size_t>(g)], prev, ridge).transpose();
  }
}

void column_system(const Eigen::MatrixXd& J, const BoolMatrix& D, const LightMatrix& L, Eigen::Index i, Mat4& normal,
                   Vec4& rhs) {
  normal.setZero();
  rhs.setZero();
  for (Eigen::Index g = 0; g < J.rows(); ++g) {
    if (!D(g, i)) continue;
    const Vec4 l = L.row(g).transpose();
    normal += l * l.transpose();
    rhs += J(g, i) * l;
  }
}

// Projected step per column, accepted only when the column objective does not grow.
void update_surface_manifold(const Eigen::MatrixXd& J, const BoolMatrix& D, const LightMatrix& L, SurfaceMatrix& N,
                             double ridge) {
  Mat4 normal;
  Vec4 rhs;
  for (Eigen::Index i = 0; i < J.cols(); ++i) {
    column_system(J, D, L, i, normal, rhs);
    if (normal.trace() == 0.0) continue;
    const Vec4 prev = N.col(i);
    const double prev_obj = column_objective(J, D, L, prev, i);
    const Vec4 free = proximal_solve(normal, rhs, prev, ridge);
    double t = 1.0;
    for (int attempt = 0; attempt < 10; ++attempt, t *= 0.5) {
      const Vec4 cand = project_manifold(prev + t * (free - prev)).column;
      if (column_objective(J, D, L, cand, i) <= prev_obj) {
        N.col(i) = cand;
        break;
      }
    }
  }
}

// Moves the free 4x4 gauge so that L has orthonormal columns; L N is unchanged. Without it the
// unconstrained iterations drift toward ill-conditioned factor pairs.
void rebalance(LightMatrix& L, SurfaceMatrix& N) {
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(L);
  const Mat4 R = qr.matrixQR().topRows<4>().triangularView<Eigen::Upper>();
  L = qr.householderQ() * Eigen::MatrixXd::Identity(L.rows(), 4);
  N = R * N;
}

// Best free surface column for the lighting L, with its observed residuals and the
// projector complement Q = I - L_i (L_i^T L_i)^-1 L_i^T over the observed rows.
struct ColumnFit {
  Vec4 n;
  std::vector<int> rows;
  Eigen::VectorXd residual;
  Eigen::MatrixXd complement;
};

ColumnFit fit_column(const Eigen::MatrixXd& J, const BoolMatrix& D, const LightMatrix& L, Eigen::Index i,
                     double ridge, bool with_complement) {
  ColumnFit c;
  for (Eigen::Index g = 0; g < J.rows(); ++g)
    if (D(g, i)) c.rows.push_back(static_cast<int>(g));
  const int m = static_cast<int>(c.rows.size());
  Eigen::MatrixXd Li(m, 4);
  Eigen::VectorXd ji(m);
  for (int k = 0; k < m; ++k) {
    Li.row(k) = L.row(c.rows[static_cast<size_t>(k)]);
    ji(k) = J(c.rows[static_cast<size_t>(k)], i);
  }
  Mat4 A = Li.transpose() * Li;
  A.diagonal().array() += ridge * std::max(A.trace() / 4.0, 1e-300) + 1e-300;
  const Eigen::LDLT<Mat4> ldlt(A);
  c.n = ldlt.solve(Li.transpose() * ji);
  c.residual = ji - Li * c.n;
  if (with_complement) {
    c.complement = Eigen::MatrixXd::Identity(m, m) - Li * ldlt.solve(Li.transpose());
  }
  return c;
}

// Columns seen in at most 4 frames are fitted exactly by any lighting, so they say nothing about L
// and only add near-singular directions to the projected problem.
bool informative(const BoolMatrix& D, Eigen::Index i) { return D.col(i).count() > 4; }

double projected_objective(const Eigen::MatrixXd& J, const BoolMatrix& D, const LightMatrix& L, double ridge) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < J.cols(); ++i)
    if (informative(D, i)) total += fit_column(J, D, L, i, ridge, false).residual.squaredNorm();
  return total;
}

// Unconstrained rank-4 fit by variable projection: the surface is eliminated per column and
// Levenberg-Marquardt runs on the lighting alone (Kaufman's approximate Jacobian). Alternating
// least squares stalls on masked matrices; this converges in a few dozen steps.
void varpro_fit(const Eigen::MatrixXd& J, const BoolMatrix& D, LightMatrix& L, SurfaceMatrix& N,
                const SolverOptions& options, double floor) {
  const Eigen::Index f = J.rows(), b = J.cols();
  const double ridge = std::max(options.ridge, 1e-12);
  {
    SurfaceMatrix dummy = N;
    rebalance(L, dummy);
  }
  double current = projected_objective(J, D, L, ridge);
  double mu = 1e-3;
  for (int it = 0; it < options.warmup_iters && current > floor; ++it) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(4 * f, 4 * f);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(4 * f);
    for (Eigen::Index i = 0; i < b; ++i) {
      if (!informative(D, i)) continue;
      const ColumnFit c = fit_column(J, D, L, i, ridge, true);
      const Mat4 nn = c.n * c.n.transpose();
      const int m = static_cast<int>(c.rows.size());
      for (int x = 0; x < m; ++x) {
        const int gx = c.rows[static_cast<size_t>(x)];
        g.segment<4>(4 * gx) += c.residual(x) * c.n;
        for (int y = 0; y < m; ++y) {
          H.block<4, 4>(4 * gx, 4 * c.rows[static_cast<size_t>(y)]) += c.complement(x, y) * nn;
        }
      }
    }
    const Eigen::VectorXd diag = H.diagonal().cwiseMax(1e-12 * std::max(H.diagonal().maxCoeff(), 1e-300));
    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Eigen::MatrixXd A = H;
      A.diagonal() += mu * diag;
      const Eigen::VectorXd step = A.ldlt().solve(g);
      LightMatrix trial = L;
      for (Eigen::Index r = 0; r < f; ++r) trial.row(r) += step.segment<4>(4 * r).transpose();
      const double value = projected_objective(J, D, trial, ridge);
      if (std::isfinite(value) && value < current) {
        SurfaceMatrix dummy = N;
        rebalance(trial, dummy);
        L = trial;
        const bool done = current - value <= options.tol * 1e-2 * current;
        current = value;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (done) it = options.warmup_iters;
      } else {
        mu *= 4.0;
      }
    }
    if (!accepted) break;
  }
  N.resize(4, b);
  for (Eigen::Index i = 0; i < b; ++i) N.col(i) = fit_column(J, D, L, i, ridge, false).n;
}

void project_all(SurfaceMatrix& N, std::vector<int>* degenerate) {
  if (degenerate) degenerate->clear();
  for (Eigen::Index i = 0; i < N.cols(); ++i) {
    const auto p = project_manifold(N.col(i));
    N.col(i) = p.column;
    if (p.degenerate && degenerate) degenerate->push_back(static_cast<int>(i));
  }
}

void check_observations(const BoolMatrix& D) {
  if (D.rows() < 4) {
    throw Error(ErrorCode::UnderConstrained, "need at least 4 frames, got " + std::to_string(D.rows()));
  }
  if (D.count() == 0) throw Error(ErrorCode::AllUnobserved, "stack has no observed entries");
  Eigen::Index usable_frames = 0;
  for (Eigen::Index g = 0; g < D.rows(); ++g) usable_frames += D.row(g).any() ? 1 : 0;
  if (usable_frames < 4) {
    throw Error(ErrorCode::UnderConstrained, "only " + std::to_string(usable_frames) + " frames carry observations");
  }
  bool any_column = false;
  for (Eigen::Index i = 0; i < D.cols() && !any_column; ++i) any_column = D.col(i).count() >= 4;
  if (!any_column) throw Error(ErrorCode::UnderConstrained, "no column is observed in 4 or more frames");
}

void initial_factorization(const Eigen::MatrixXd& J, const BoolMatrix& D, LightMatrix& L, SurfaceMatrix& N) {
  const Eigen::Index f = J.rows(), b = J.cols();
  double global_sum = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index g = 0; g < f; ++g) global_sum += D(g, i) ? J(g, i) : 0.0;
  }
  const double global_mean = global_sum / static_cast<double>(D.count());
  Eigen::MatrixXd filled(f, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto count = D.col(i).count();
    double mean = global_mean;
    if (count > 0) {
      double s = 0.0;
      for (Eigen::Index g = 0; g < f; ++g) s += D(g, i) ? J(g, i) : 0.0;
      mean = s / static_cast<double>(count);
    }
    for (Eigen::Index g = 0; g < f; ++g) filled(g, i) = D(g, i) ? J(g, i) : mean;
  }
  const Eigen::MatrixXd gram = filled * filled.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  // Eigenvalues ascending: take the last four.
  L = eig.eigenvectors().rightCols<4>().rowwise().reverse();
  N = L.transpose() * filled;
}

bool converged(double prev, double cur, double tol, double floor) {
  if (cur <= floor) return true;
  return prev - cur <= tol * prev;
}

}  // namespace

std::optional<Eigen::Matrix4d> cone_gauge(const SurfaceMatrix& surface) {
  Eigen::Matrix<double, 10, 10> gram = Eigen::Matrix<double, 10, 10>::Zero();
  int used = 0;
  for (Eigen::Index i = 0; i < surface.cols(); ++i) {
    const double len = surface.col(i).norm();
    if (!(len > 0.0) || !std::isfinite(len)) continue;
    const Vec4 x = surface.col(i) / len;
    Eigen::Matrix<double, 10, 1> row;
    row << x(0) * x(0), x(1) * x(1), x(2) * x(2), x(3) * x(3), 2 * x(0) * x(1), 2 * x(0) * x(2), 2 * x(0) * x(3),
        2 * x(1) * x(2), 2 * x(1) * x(3), 2 * x(2) * x(3);
    gram += row * row.transpose();
    ++used;
  }
  if (used < 9) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 10, 10>> eig(gram);
  const Eigen::Matrix<double, 10, 1> q = eig.eigenvectors().col(0);
  Mat4 Q;
  Q << q(0), q(4), q(5), q(6),  //
      q(4), q(1), q(7), q(8),   //
      q(5), q(7), q(2), q(9),   //
      q(6), q(8), q(9), q(3);
  Eigen::SelfAdjointEigenSolver<Mat4> qe(Q);
  Vec4 lambda = qe.eigenvalues();
  Mat4 vectors = qe.eigenvectors();
  int positive = 0;
  for (int k = 0; k < 4; ++k) positive += lambda(k) > 0.0 ? 1 : 0;
  if (positive == 3) {
    lambda = -lambda.reverse().eval();
    vectors = vectors.rowwise().reverse().eval();
    positive = 1;
  }
  if (positive != 1) return std::nullopt;
  const double biggest = lambda.cwiseAbs().maxCoeff();
  if (lambda.cwiseAbs().minCoeff() < 1e-10 * biggest) return std::nullopt;
  // Ascending order: lambda(3) is the positive one.
  Mat4 A;
  A.row(0) = std::sqrt(lambda(3)) * vectors.col(3).transpose();
  for (int k = 0; k < 3; ++k) A.row(k + 1) = std::sqrt(-lambda(k)) * vectors.col(k).transpose();
  return A;
}

PhotometricFactors solve_masked(const Eigen::MatrixXd& J, const BoolMatrix& D,
                                const std::optional<PhotometricFactors>& init, const SolverOptions& options) {
  if (J.rows() != D.rows() || J.cols() != D.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "intensity and mask sizes differ");
  }
  check_observations(D);
  double data_norm = 0.0;
  for (Eigen::Index i = 0; i < J.cols(); ++i) {
    for (Eigen::Index g = 0; g < J.rows(); ++g) data_norm += D(g, i) ? J(g, i) * J(g, i) : 0.0;
  }
  const double floor = 1e-24 * std::max(data_norm, 1e-300);

  PhotometricFactors out;
  LightMatrix L;
  SurfaceMatrix N;
  if (init) {
    if (init->lighting.rows() != J.rows() || init->surface.cols() != J.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "initial factors do not match the stack");
    }
    L = init->lighting;
    N = init->surface;
    project_all(N, nullptr);
  } else {
    // The mean-filled start can land in a poor basin of the projected problem; a few seeded
    // random starts make the unconstrained fit reliable. An exact fit ends the search.
    const double exact = 1e-16 * data_norm;  // round-off level of an exact rank-4 fit
    initial_factorization(J, D, L, N);
    varpro_fit(J, D, L, N, options, exact);
    double best_fit = masked_objective(J, D, L, N);
    std::mt19937_64 rng(0x5eedULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int k = 0; k < options.restarts && best_fit > exact; ++k) {
      LightMatrix Lk(J.rows(), 4);
      for (Eigen::Index r = 0; r < Lk.rows(); ++r)
        for (int c = 0; c < 4; ++c) Lk(r, c) = gauss(rng);
      SurfaceMatrix Nk;
      varpro_fit(J, D, Lk, Nk, options, exact);
      const double value = masked_objective(J, D, Lk, Nk);
      if (value < best_fit) {
        best_fit = value;
        L = std::move(Lk);
        N = std::move(Nk);
      }
    }
    // Candidate gauges: the cone fit, and the raw basis. Keep whichever projects better.
    SurfaceMatrix plain = N;
    project_all(plain, nullptr);
    double best = masked_objective(J, D, L, plain);
    SurfaceMatrix chosen_n = plain;
    LightMatrix chosen_l = L;
    if (const auto A = cone_gauge(N)) {
      Mat4 gauge = *A;
      SurfaceMatrix gauged = gauge * N;
      if (gauged.row(0).sum() < 0.0) {
        gauge = -gauge;
        gauged = -gauged;
      }
      const Eigen::FullPivLU<Mat4> lu(gauge);
      if (lu.isInvertible()) {
        LightMatrix gl = L * lu.inverse();
        project_all(gauged, nullptr);
        const double obj = masked_objective(J, D, gl, gauged);
        if (obj <= best) {
          best = obj;
          chosen_n = gauged;
          chosen_l = gl;
        }
      }
    }
    L = chosen_l;
    N = chosen_n;
  }

  double prev = masked_objective(J, D, L, N);
  out.trace.push_back(prev);
  for (int it = 0; it < options.max_iters; ++it) {
    update_lighting(J, D, N, L, options.ridge);
    update_surface_manifold(J, D, L, N, options.ridge);
    const double cur = masked_objective(J, D, L, N);
    out.trace.push_back(cur);
    out.iterations = it + 1;
    const bool done = converged(prev, cur, options.tol, floor);
    prev = cur;
    if (done) {
      out.converged = true;
      break;
    }
  }
  project_all(N, &out.degenerate_columns);
  out.lighting = std::move(L);
  out.surface = std::move(N);
  out.residual = masked_objective(J, D, out.lighting, out.surface);
  return out;
}

PhotometricFactors solve_patch(const PatchStack& stack, const std::optional<PhotometricFactors>& init,
                               const SolverOptions& options) {
  return solve_masked(stack.intensities, stack.observed, init, options);
}

LightMatrix rotate_lighting(const LightMatrix& world, const Mat33& rotation) {
  LightMatrix out(world.rows(), 4);
  out.col(0) = world.col(0);
  out.rightCols<3>() = world.rightCols<3>() * rotation.transpose();
  return out;
}

LightMatrix estimate_lighting_from_facets(std::span<const PatchStack> stacks, std::span<const Vec3> facet_normals,
                                          int frames, const FacetLightingOptions& options) {
  if (stacks.size() != facet_normals.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one facet normal per stack is required");
  }
  const auto m = static_cast<Eigen::Index>(stacks.size());
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(frames, m);
  BoolMatrix available = BoolMatrix::Constant(frames, m, false);
  for (Eigen::Index mu = 0; mu < m; ++mu) {
    const auto& s = stacks[static_cast<size_t>(mu)];
    if (s.columns() == 0) continue;
    for (int g = 0; g < std::min(frames, s.frames()); ++g) {
      const auto count = s.observed.row(g).count();
      if (count < options.min_row_coverage * s.columns()) continue;
      double sum = 0.0;
      for (int i = 0; i < s.columns(); ++i) sum += s.observed(g, i) ? s.intensities(g, i) : 0.0;
      Y(g, mu) = sum / static_cast<double>(count);
      available(g, mu) = true;
    }
  }

  Eigen::Matrix<double, 4, Eigen::Dynamic> V(4, m);
  for (Eigen::Index mu = 0; mu < m; ++mu) {
    V(0, mu) = 1.0;
    V.block<3, 1>(1, mu) = facet_normals[static_cast<size_t>(mu)].normalized();
  }
  Eigen::VectorXd rho = Eigen::VectorXd::Ones(m);
  LightMatrix L = LightMatrix::Zero(frames, 4);
  for (int it = 0; it < options.iterations; ++it) {
    for (int g = 0; g < frames; ++g) {
      Mat4 A = Mat4::Zero();
      Vec4 r = Vec4::Zero();
      for (Eigen::Index mu = 0; mu < m; ++mu) {
        if (!available(g, mu)) continue;
        const Vec4 v = rho(mu) * V.col(mu);
        A += v * v.transpose();
        r += Y(g, mu) * v;
      }
      if (A.trace() == 0.0) continue;
      const double eps = 1e-9 * A.trace() / 4.0;
      L.row(g) = (A + eps * Mat4::Identity()).ldlt().solve(r).transpose();
    }
    for (Eigen::Index mu = 0; mu < m; ++mu) {
      double num = 0.0, den = 0.0;
      for (int g = 0; g < frames; ++g) {
        if (!available(g, mu)) continue;
        const double s = L.row(g).dot(V.col(mu));
        num += Y(g, mu) * s;
        den += s * s;
      }
      if (den > 0.0 && num > 0.0) rho(mu) = num / den;
    }
    const double mean = rho.mean();
    if (mean > 0.0) {
      rho /= mean;
      L *= mean;
    }
  }
  return L;
}

PhotometricFactors factors_from_lighting(const PatchStack& stack, const LightMatrix& lighting) {
  if (lighting.rows() != stack.frames()) throw Error(ErrorCode::ShapeMismatch, "lighting rows must match frames");
  PhotometricFactors out;
  out.lighting = lighting;
  out.surface = SurfaceMatrix::Zero(4, stack.columns());
  Mat4 normal;
  Vec4 rhs;
  for (int i = 0; i < stack.columns(); ++i) {
    column_system(stack.intensities, stack.observed, lighting, i, normal, rhs);
    Vec4 x = Vec4::Zero();
    if (normal.trace() > 0.0) {
      const double eps = 1e-9 * normal.trace() / 4.0;
      x = (normal + eps * Mat4::Identity()).ldlt().solve(rhs);
    }
    const auto p = project_manifold(x);
    out.surface.col(i) = p.column;
    if (p.degenerate) out.degenerate_columns.push_back(i);
  }
  out.residual = masked_objective(stack.intensities, stack.observed, out.lighting, out.surface);
  return out;
}

Eigen::Matrix4d fit_gauge(const SurfaceMatrix& estimate, const SurfaceMatrix& truth) {
  if (estimate.cols() != truth.cols()) throw Error(ErrorCode::ShapeMismatch, "column counts differ");
  const Mat4 gram = estimate * estimate.transpose();
  const Mat4 cross = truth * estimate.transpose();
  return gram.transpose().ldlt().solve(cross.transpose()).transpose();
}

}  // namespace pmvps
