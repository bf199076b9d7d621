#include "bustr/corpus/image.hpp"

#include "bustr/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace bustr::corpus {

long LesionMask::count() const {
  long n = 0;
  for (Eigen::Index i = 0; i < pixels.size(); ++i) n += pixels.data()[i] != 0;
  return n;
}

RadiomicsFeatures extract_radiomics(const BusImage& image, const LesionMask& mask) {
  if (image.rows() != mask.rows() || image.cols() != mask.cols()) {
    fail(ErrorCode::shape_mismatch, "mask and image sizes differ");
  }
  long n = 0;
  double total = 0.0;
  int r0 = mask.rows(), r1 = -1, c0 = mask.cols(), c1 = -1;
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask.pixels(r, c)) continue;
      ++n;
      total += image.pixels(r, c);
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (n == 0) fail(ErrorCode::empty_mask, "lesion mask has no foreground pixels");
  const double mean = total / static_cast<double>(n);
  double ss = 0.0;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (mask.pixels(r, c)) ss += (image.pixels(r, c) - mean) * (image.pixels(r, c) - mean);
    }
  }
  RadiomicsFeatures f;
  f.area_px = n;
  f.equiv_diameter_mm = 2.0 * std::sqrt(static_cast<double>(n) / M_PI) * image.spacing_mm_per_px;
  f.bbox_w_mm = (c1 - c0 + 1) * image.spacing_mm_per_px;
  f.bbox_h_mm = (r1 - r0 + 1) * image.spacing_mm_per_px;
  f.mean_intensity = mean;
  f.std_intensity = std::sqrt(ss / static_cast<double>(n));
  return f;
}

BusImage pad_and_resize(const BusImage& image, int target) {
  if (target < 16) fail(ErrorCode::bad_geometry, "resize target below 16");
  const int side = std::max(image.rows(), image.cols());
  Pixels square = Pixels::Zero(side, side);
  const int top = (side - image.rows()) / 2;
  const int left = (side - image.cols()) / 2;
  square.block(top, left, image.rows(), image.cols()) = image.pixels;

  BusImage out;
  out.spacing_mm_per_px = image.spacing_mm_per_px * static_cast<double>(side) / target;
  if (side == target) {
    out.pixels = std::move(square);
    return out;
  }
  out.pixels.resize(target, target);
  const double scale = static_cast<double>(side) / target;
  auto coord = [&](int i, int& lo, int& hi, double& w) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(side - 1));
    lo = static_cast<int>(std::floor(s));
    hi = std::min(lo + 1, side - 1);
    w = s - lo;
  };
  for (int r = 0; r < target; ++r) {
    int r_lo, r_hi;
    double wr;
    coord(r, r_lo, r_hi, wr);
    for (int c = 0; c < target; ++c) {
      int c_lo, c_hi;
      double wc;
      coord(c, c_lo, c_hi, wc);
      const double top_v = square(r_lo, c_lo) * (1 - wc) + square(r_lo, c_hi) * wc;
      const double bot_v = square(r_hi, c_lo) * (1 - wc) + square(r_hi, c_hi) * wc;
      out.pixels(r, c) = top_v * (1 - wr) + bot_v * wr;
    }
  }
  return out;
}

void quantize_8bit(Pixels& pixels) {
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(pixels.data()[i], 0.0, 1.0);
    pixels.data()[i] = std::round(v * 255.0) / 255.0;
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void write_gray8(const std::filesystem::path& path, int rows, int cols, const std::vector<std::uint8_t>& data) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(ErrorCode::io_failure, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io_failure, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < rows; ++r) {
    png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(r) * cols));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_gray8(const std::filesystem::path& path, int& rows, int& cols) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(ErrorCode::missing_file, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::schema_mismatch, "not a readable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  cols = static_cast<int>(png_get_image_width(png, info));
  rows = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> data(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) png_read_row(png, data.data() + static_cast<std::size_t>(r) * cols, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Pixels& pixels) {
  std::vector<std::uint8_t> data(static_cast<std::size_t>(pixels.size()));
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    data[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(std::clamp(pixels.data()[i], 0.0, 1.0) * 255.0));
  }
  write_gray8(path, static_cast<int>(pixels.rows()), static_cast<int>(pixels.cols()), data);
}

Pixels read_png(const std::filesystem::path& path) {
  int rows = 0, cols = 0;
  const auto data = read_gray8(path, rows, cols);
  Pixels out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = data[static_cast<std::size_t>(i)] / 255.0;
  return out;
}

void write_mask_png(const std::filesystem::path& path, const LesionMask& mask) {
  std::vector<std::uint8_t> data(static_cast<std::size_t>(mask.pixels.size()));
  for (Eigen::Index i = 0; i < mask.pixels.size(); ++i) data[static_cast<std::size_t>(i)] = mask.pixels.data()[i] ? 255 : 0;
  write_gray8(path, mask.rows(), mask.cols(), data);
}

LesionMask read_mask_png(const std::filesystem::path& path) {
  int rows = 0, cols = 0;
  const auto data = read_gray8(path, rows, cols);
  LesionMask m;
  m.pixels.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.pixels.size(); ++i) m.pixels.data()[i] = data[static_cast<std::size_t>(i)] >= 128;
  return m;
}

}  // namespace bustr::corpus
