#ifndef CSE_RASTER_HPP_
#define CSE_RASTER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "cse/common.hpp"

namespace cse {

// Binary image raster; data holds 0/1 per pixel, row-major.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  bool at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
  std::size_t count() const;
};

Raster make_raster(int height, int width);

// Binary PGM (P5, maxval 255); set pixels are written as 255.
void write_pgm(const Raster& mask, const std::string& path);
Raster read_pgm(const std::string& path);

// 8-bit grayscale / 24-bit RGB image writers for diagnostics.
void write_pgm_gray(const std::vector<std::uint8_t>& gray, int height, int width,
                    const std::string& path);
void write_ppm_rgb(const std::vector<std::uint8_t>& rgb, int height, int width,
                   const std::string& path);

// Labels 4-connected components; returns label map (-1 = background) and the
// number of components.
int label_components(const Raster& mask, std::vector<int>& labels);

// Fills enclosed background regions (those not reachable from the border).
void fill_holes(Raster& mask);

// Exact squared Euclidean distance to the nearest set pixel, per pixel.
// Pixels of an empty mask get a value larger than any canvas distance.
std::vector<double> squared_distance_transform(const Raster& mask);

// Minimum center-to-center Euclidean distance between the two pixel sets;
// returns +inf when either is empty and 0 when they intersect.
double min_mask_distance(const Raster& a, const Raster& b);

}  // namespace cse

#endif  // CSE_RASTER_HPP_
