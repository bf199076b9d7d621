#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>

namespace bustr::corpus {

using Pixels = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskPixels = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BusImage {
  Pixels pixels;  // intensities in [0,1]
  double spacing_mm_per_px = 0.2;

  int rows() const { return static_cast<int>(pixels.rows()); }
  int cols() const { return static_cast<int>(pixels.cols()); }
};

struct LesionMask {
  MaskPixels pixels;  // 0 or 1

  int rows() const { return static_cast<int>(pixels.rows()); }
  int cols() const { return static_cast<int>(pixels.cols()); }
  long count() const;
};

struct RadiomicsFeatures {
  long area_px = 0;
  double equiv_diameter_mm = 0.0;
  double bbox_w_mm = 0.0;
  double bbox_h_mm = 0.0;
  double mean_intensity = 0.0;
  double std_intensity = 0.0;
};

/// Statistics over the masked pixels only. EmptyMask / ShapeMismatch.
RadiomicsFeatures extract_radiomics(const BusImage& image, const LesionMask& mask);

/// Zero-pads the short axis symmetrically to a square, then resamples
/// bilinearly (pixel-centre aligned) to target x target.
BusImage pad_and_resize(const BusImage& image, int target);

/// 8-bit grayscale PNG. Intensities are rounded to k/255.
void write_png(const std::filesystem::path& path, const Pixels& pixels);
Pixels read_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const LesionMask& mask);
LesionMask read_mask_png(const std::filesystem::path& path);

/// Rounds every intensity to the nearest multiple of 1/255.
void quantize_8bit(Pixels& pixels);

}  // namespace bustr::corpus
