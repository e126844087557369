#include "cse/feature_map.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cse {
namespace {

constexpr char kMagic[4] = {'C', 'S', 'E', 'F'};

void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("CSEF: truncated " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

FeatureMap make_feature_map(int height, int width, int channels) {
  if (height < 2 || width < 2 || channels < 1)
    throw std::invalid_argument("FeatureMap: H, W must be >= 2 and d_x >= 1");
  FeatureMap map;
  map.height = height;
  map.width = width;
  map.channels = channels;
  map.values.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
  return map;
}

void validate(const FeatureMap& map) {
  if (map.height < 2 || map.width < 2 || map.channels < 1)
    throw std::invalid_argument("FeatureMap: H, W must be >= 2 and d_x >= 1");
  if (map.values.size() != static_cast<std::size_t>(map.height) * map.width * map.channels)
    throw std::invalid_argument("FeatureMap: value buffer size mismatch");
  for (float v : map.values)
    if (!std::isfinite(v)) throw std::invalid_argument("FeatureMap: non-finite value");
}

template <typename T>
SampledGrid<T> bilinear_sample(const FeatureMap& map, const GridSpec& grid) {
  validate(grid);
  SampledGrid<T> out;
  out.rows = grid.rows;
  out.cols = grid.cols;
  out.channels = map.channels;
  out.grid = grid;
  out.values.resize(static_cast<std::size_t>(grid.node_count()) * map.channels);

  const double max_x = map.width - 1;
  const double max_y = map.height - 1;
  for (int r = 0; r < grid.rows; ++r) {
    const double sy = std::clamp(grid.node_y(r), 0.0, max_y);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, map.height - 1);
    const double fy = sy - y0;
    for (int c = 0; c < grid.cols; ++c) {
      const double sx = std::clamp(grid.node_x(c), 0.0, max_x);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, map.width - 1);
      const double fx = sx - x0;
      T* dst = out.node(grid.node_id(r, c));
      for (int ch = 0; ch < map.channels; ++ch) {
        const double v00 = map.at(y0, x0, ch);
        const double v01 = map.at(y0, x1, ch);
        const double v10 = map.at(y1, x0, ch);
        const double v11 = map.at(y1, x1, ch);
        const double top = v00 + fx * (v01 - v00);
        const double bottom = v10 + fx * (v11 - v10);
        dst[ch] = static_cast<T>(top + fy * (bottom - top));
      }
    }
  }
  return out;
}

template SampledGrid<float> bilinear_sample<float>(const FeatureMap&, const GridSpec&);
template SampledGrid<double> bilinear_sample<double>(const FeatureMap&, const GridSpec&);

void write_feature_map(const FeatureMap& map, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("CSEF: cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32le(os, static_cast<std::uint32_t>(map.height));
  write_u32le(os, static_cast<std::uint32_t>(map.width));
  write_u32le(os, static_cast<std::uint32_t>(map.channels));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(map.values.data()),
           static_cast<std::streamsize>(map.values.size() * sizeof(float)));
  if (!os) throw FormatError("CSEF: write failed: " + path);
}

FeatureMap read_feature_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("CSEF: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("CSEF: bad magic in " + path);
  const auto h = read_u32le(is, "height");
  const auto w = read_u32le(is, "width");
  const auto d = read_u32le(is, "channels");
  if (h < 2 || w < 2 || d < 1 || static_cast<std::uint64_t>(h) * w * d > (1ull << 31))
    throw FormatError("CSEF: implausible dimensions in " + path);
  FeatureMap map;
  map.height = static_cast<int>(h);
  map.width = static_cast<int>(w);
  map.channels = static_cast<int>(d);
  map.values.resize(static_cast<std::size_t>(h) * w * d);
  if (!is.read(reinterpret_cast<char*>(map.values.data()),
               static_cast<std::streamsize>(map.values.size() * sizeof(float))))
    throw FormatError("CSEF: truncated body in " + path);
  char extra;
  if (is.read(&extra, 1)) throw FormatError("CSEF: trailing bytes in " + path);
  return map;
}

}  // namespace cse
