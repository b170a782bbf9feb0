#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "pmvps/decompose.hpp"
#include "pmvps/geometry.hpp"
#include "pmvps/image.hpp"

namespace pmvps {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using BoolVector = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Fronto-parallel raster of one enlarged facet.
///
/// Pixel (row, col) sits at template coordinates origin + pitch * (col, row).
struct TemplateRaster {
  int triangle_id = -1;
  FacetFrame frame;
  Mat23 triangle = Mat23::Zero();  // enlarged template triangle, template coordinates
  double enlargement = 1.0;
  double pitch = 1.0;
  Vec2 origin = Vec2::Zero();
  int rows = 0;
  int cols = 0;
  std::vector<int> pixels;  // flat col-major indices inside the enlarged triangle

  Vec2 position(int flat) const {
    return origin + pitch * Vec2(flat / rows, flat % rows);
  }
  int size() const { return static_cast<int>(pixels.size()); }
};

/// Pitch so that the template holds about as many pixels as the largest source
/// patch, coarsened if needed so the raster stays within max_size x max_size.
double template_pitch(const Mat33& facet, std::span<const Mat23> source_triangles, double enlargement, int max_size);

TemplateRaster make_template(const FacetFrame& frame, double enlargement, double pitch, int triangle_id = -1);

enum class Sampling { Bilinear, Nearest };

struct RegisteredRow {
  Eigen::VectorXd values;
  BoolVector mapped;
  int frame_id = -1;
};

/// Resample one view of a patch onto its template through barycentric transfer.
///
/// Template pixel k with barycentric coordinates lambda in the template triangle
/// reads the source image at (enlarged source triangle) * lambda. Points that
/// leave the image or the source triangle stay unmapped; an empty or
/// out-of-view mask gives an all-unmapped row.
RegisteredRow register_patch(const ImageFrame& frame, const PatchMask& mask, const Mat23& source_vertices2d,
                             const TemplateRaster& tmpl, Sampling sampling = Sampling::Bilinear);

struct IntensityThresholds {
  double dark = 0.02;
  double saturated = 0.98;
};

/// Multi-view intensity matrix of one patch with its observation mask.
struct PatchStack {
  Eigen::MatrixXd intensities;  // f x b
  BoolMatrix observed;          // f x b
  std::vector<int> template_pixels;
  int rows = 0;
  int cols = 0;
  double pitch = 1.0;
  Vec2 origin = Vec2::Zero();
  int triangle_id = -1;
  std::vector<int> frame_ids;
  std::vector<int> weak_columns;  // observed in fewer than 4 frames

  int frames() const { return static_cast<int>(intensities.rows()); }
  int columns() const { return static_cast<int>(intensities.cols()); }
  long observed_count() const { return static_cast<long>(observed.count()); }
};

/// Stack registered rows; entries darker than thresholds.dark or brighter than
/// thresholds.saturated become unobserved.
PatchStack assemble_stack(std::span<const RegisteredRow> rows, const TemplateRaster& tmpl,
                          const IntensityThresholds& thresholds = {});

double missing_fraction(const PatchStack& stack);

double sample_bilinear(const Eigen::ArrayXXd& image, double x, double y);

}  // namespace pmvps
