#include "pmvps/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pmvps/error.hpp"
#include "pmvps/image.hpp"

namespace pmvps {

namespace {

std::vector<std::string> content_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

double number(const std::string& token, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') throw Error(ErrorCode::Io, "bad number '" + token + "' in " + where);
  return v;
}

int count_after(const std::vector<std::string>& t, const char* keyword, const std::string& path) {
  if (t.size() != 2 || t[0] != keyword) throw Error(ErrorCode::Io, path + ": expected '" + keyword + " <count>'");
  const double v = number(t[1], path);
  if (v < 0 || v != std::floor(v)) throw Error(ErrorCode::Io, path + ": bad count");
  return static_cast<int>(v);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << std::setprecision(17);
  return out;
}

}  // namespace

SparsePoints read_sparse_points(const std::string& path) {
  const auto lines = content_lines(path);
  size_t at = 0;
  auto next = [&]() -> const std::string& {
    if (at >= lines.size()) throw Error(ErrorCode::Io, path + ": unexpected end of file");
    return lines[at++];
  };
  SparsePoints s;
  const int p = count_after(tokens(next()), "points", path);
  s.points.resize(p, 3);
  for (int i = 0; i < p; ++i) {
    const auto t = tokens(next());
    if (t.size() != 3) throw Error(ErrorCode::Io, path + ": point line needs 3 values");
    for (int a = 0; a < 3; ++a) s.points(i, a) = number(t[static_cast<size_t>(a)], path);
  }
  const int f = count_after(tokens(next()), "frames", path);
  for (int g = 0; g < f; ++g) {
    const auto t = tokens(next());
    if (t.size() != static_cast<size_t>(2 * p + 1)) {
      throw Error(ErrorCode::Io, path + ": frame line needs a label and " + std::to_string(2 * p) + " values");
    }
    s.labels.push_back(t[0]);
    Points2 proj(p, 2);
    for (int i = 0; i < p; ++i) {
      proj(i, 0) = number(t[static_cast<size_t>(1 + 2 * i)], path);
      proj(i, 1) = number(t[static_cast<size_t>(2 + 2 * i)], path);
    }
    s.projections.push_back(std::move(proj));
  }
  return s;
}

void write_sparse_points(const std::string& path, const SparsePoints& s) {
  auto out = open_out(path);
  out << "points " << s.points.rows() << '\n';
  for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
    out << s.points(i, 0) << ' ' << s.points(i, 1) << ' ' << s.points(i, 2) << '\n';
  }
  out << "frames " << s.projections.size() << '\n';
  for (size_t g = 0; g < s.projections.size(); ++g) {
    out << (g < s.labels.size() ? s.labels[g] : "frame" + std::to_string(g));
    for (Eigen::Index i = 0; i < s.projections[g].rows(); ++i) {
      for (int a = 0; a < 2; ++a) {
        const double v = s.projections[g](i, a);
        out << ' ';
        if (std::isfinite(v)) {
          out << v;
        } else {
          out << "nan";
        }
      }
    }
    out << '\n';
  }
}

Eigen::Matrix3Xd read_xyz(const std::string& path) {
  const auto lines = content_lines(path);
  Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(lines.size()));
  for (size_t i = 0; i < lines.size(); ++i) {
    const auto t = tokens(lines[i]);
    if (t.size() < 3) throw Error(ErrorCode::Io, path + ": expected x y z");
    for (int a = 0; a < 3; ++a) pts(a, static_cast<Eigen::Index>(i)) = number(t[static_cast<size_t>(a)], path);
  }
  return pts;
}

void write_xyz(const std::string& path, const Eigen::Matrix3Xd& points) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    out << points(0, i) << ' ' << points(1, i) << ' ' << points(2, i) << '\n';
  }
}

void write_ply(const std::string& path, const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd* colors) {
  auto out = open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.cols() << '\n'
      << "property double x\nproperty double y\nproperty double z\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    out << points(0, i) << ' ' << points(1, i) << ' ' << points(2, i);
    if (colors) {
      for (int a = 0; a < 3; ++a) out << ' ' << std::lround(255.0 * std::clamp((*colors)(a, i), 0.0, 1.0));
    }
    out << '\n';
  }
}

void write_obj(const std::string& path, const Eigen::Matrix3Xd& vertices, const std::vector<TriangleIndices>& tris) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < vertices.cols(); ++i) {
    out << "v " << vertices(0, i) << ' ' << vertices(1, i) << ' ' << vertices(2, i) << '\n';
  }
  for (const auto& t : tris) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

std::vector<TriangleIndices> grid_triangles(const DenseSurface& surface) {
  const int R = surface.grid_rows, C = surface.grid_cols;
  std::vector<int> at(static_cast<size_t>(R) * C, -1);
  for (int i = 0; i < surface.size(); ++i) at[static_cast<size_t>(surface.cells[static_cast<size_t>(i)])] = i;
  std::vector<TriangleIndices> tris;
  for (int c = 0; c + 1 < C; ++c) {
    for (int r = 0; r + 1 < R; ++r) {
      const int a = at[static_cast<size_t>(c * R + r)], b = at[static_cast<size_t>((c + 1) * R + r)];
      const int d = at[static_cast<size_t>(c * R + r + 1)], e = at[static_cast<size_t>((c + 1) * R + r + 1)];
      if (a >= 0 && b >= 0 && d >= 0) tris.push_back({a, d, b});
      if (b >= 0 && d >= 0 && e >= 0) tris.push_back({b, d, e});
    }
  }
  return tris;
}

void write_heatmap(const std::string& path, const DenseSurface& surface, const Eigen::VectorXd& values, double scale) {
  if (values.size() != surface.size()) throw Error(ErrorCode::ShapeMismatch, "one value per surface point");
  const int R = surface.grid_rows, C = surface.grid_cols;
  Eigen::ArrayXXd red = Eigen::ArrayXXd::Zero(R, C), green = red, blue = red;
  const double s = scale > 0.0 ? scale : std::max(values.maxCoeff(), 1e-300);
  for (int i = 0; i < surface.size(); ++i) {
    const int k = surface.cells[static_cast<size_t>(i)];
    const double t = std::clamp(values(i) / s, 0.0, 1.0);
    red(k % R, k / R) = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
    green(k % R, k / R) = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
    blue(k % R, k / R) = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
  }
  write_ppm(path, red, green, blue);
}

}  // namespace pmvps
