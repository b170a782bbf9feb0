#include "pmvps/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "pmvps/error.hpp"

namespace pmvps {

void validate(const ImageFrame& frame) {
  if (!frame.pixels.allFinite()) throw Error(ErrorCode::InvalidArgument, "image has non-finite pixels");
  if (frame.pixels.size() > 0 && (frame.pixels.minCoeff() < 0.0 || frame.pixels.maxCoeff() > 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "image values must lie in [0, 1]");
  }
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

ImageFrame read_netpbm(const std::string& path, int frame_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  const std::string magic = token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw Error(ErrorCode::Io, path + ": unsupported raster format " + magic);
  }
  const int width = std::stoi(token(in));
  const int height = std::stoi(token(in));
  const int maxval = std::stoi(token(in));
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) throw Error(ErrorCode::Io, path + ": bad header");
  const bool rgb = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  const int channels = rgb ? 3 : 1;

  std::vector<double> values(static_cast<size_t>(width) * height * channels);
  if (binary) {
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(values.size() * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw Error(ErrorCode::Io, path + ": truncated data");
    for (size_t i = 0; i < values.size(); ++i) {
      values[i] = bytes == 2 ? (raw[2 * i] << 8 | raw[2 * i + 1]) : raw[i];
    }
  } else {
    for (auto& v : values) {
      const std::string t = token(in);
      if (t.empty()) throw Error(ErrorCode::Io, path + ": truncated data");
      v = std::stod(t);
    }
  }

  ImageFrame frame;
  frame.frame_id = frame_id;
  frame.pixels.resize(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const size_t base = (static_cast<size_t>(r) * width + c) * channels;
      const double v = rgb ? luminance(values[base], values[base + 1], values[base + 2]) : values[base];
      frame.pixels(r, c) = std::clamp(v / maxval, 0.0, 1.0);
    }
  }
  return frame;
}

void write_pgm16(const std::string& path, const Eigen::ArrayXXd& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << "P5\n" << pixels.cols() << " " << pixels.rows() << "\n65535\n";
  for (Eigen::Index r = 0; r < pixels.rows(); ++r) {
    for (Eigen::Index c = 0; c < pixels.cols(); ++c) {
      const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(pixels(r, c), 0.0, 1.0) * 65535.0));
      out.put(static_cast<char>(v >> 8));
      out.put(static_cast<char>(v & 0xff));
    }
  }
}

void write_ppm(const std::string& path, const Eigen::ArrayXXd& r, const Eigen::ArrayXXd& g,
               const Eigen::ArrayXXd& b) {
  if (r.rows() != g.rows() || r.rows() != b.rows() || r.cols() != g.cols() || r.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "colour channels differ in size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << "P6\n" << r.cols() << " " << r.rows() << "\n255\n";
  auto byte = [](double v) { return static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (Eigen::Index y = 0; y < r.rows(); ++y) {
    for (Eigen::Index x = 0; x < r.cols(); ++x) {
      out.put(byte(r(y, x)));
      out.put(byte(g(y, x)));
      out.put(byte(b(y, x)));
    }
  }
}

}  // namespace pmvps
