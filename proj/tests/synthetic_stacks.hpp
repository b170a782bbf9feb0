#pragma once

#include <random>

#include <Eigen/Core>

#include "pmvps/photometric.hpp"

// Noiseless on-manifold stacks J = L N for solver tests.
namespace testdata {

struct Stack {
  pmvps::LightMatrix L;
  pmvps::SurfaceMatrix N;
  Eigen::MatrixXd J;
  pmvps::BoolMatrix D;
};

inline pmvps::Vec3 random_unit(std::mt19937_64& rng, double min_z = 0.2) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    pmvps::Vec3 v(g(rng), g(rng), g(rng));
    v.normalize();
    if (v.z() >= min_z) return v;
  }
}

inline Stack make_stack(int f, int b, double missing, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Stack s;
  s.L.resize(f, 4);
  for (int g = 0; g < f; ++g) {
    s.L(g, 0) = 0.2 + 0.3 * u(rng);
    s.L.row(g).tail<3>() = (0.5 + 0.5 * u(rng)) * random_unit(rng, 0.3).transpose();
  }
  s.N.resize(4, b);
  for (int i = 0; i < b; ++i) {
    const double rho = 0.4 + 0.5 * u(rng);
    s.N.col(i) << rho, rho * random_unit(rng, 0.2);
  }
  s.J = s.L * s.N;
  s.D = pmvps::BoolMatrix::Constant(f, b, true);
  for (int g = 0; g < f; ++g)
    for (int i = 0; i < b; ++i) s.D(g, i) = u(rng) >= missing;
  // Keep every column usable (at least 4 observations).
  for (int i = 0; i < b; ++i) {
    for (int g = 0; s.D.col(i).count() < 4; ++g) s.D(g, i) = true;
  }
  return s;
}

}  // namespace testdata
