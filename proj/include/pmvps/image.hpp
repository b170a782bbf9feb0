#pragma once

#include <string>

#include <Eigen/Core>

namespace pmvps {

/// Grayscale frame, values in [0, 1]; pixels(row, col). Column-major storage so
/// flat index = col * rows + row (column-wise vectorization).
struct ImageFrame {
  Eigen::ArrayXXd pixels;
  int frame_id = 0;

  int rows() const { return static_cast<int>(pixels.rows()); }
  int cols() const { return static_cast<int>(pixels.cols()); }
};

/// Throws InvalidArgument if any value is non-finite or outside [0, 1].
void validate(const ImageFrame& frame);

/// Rec. 709 luminance of an RGB triple.
inline double luminance(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

/// Reads binary or ASCII PGM/PPM (8 or 16 bit). RGB is converted to luminance;
/// values are normalized by maxval.
ImageFrame read_netpbm(const std::string& path, int frame_id = 0);
/// 16-bit binary PGM.
void write_pgm16(const std::string& path, const Eigen::ArrayXXd& pixels);
/// 8-bit binary PPM from three [0,1] channels.
void write_ppm(const std::string& path, const Eigen::ArrayXXd& r, const Eigen::ArrayXXd& g,
               const Eigen::ArrayXXd& b);

}  // namespace pmvps
