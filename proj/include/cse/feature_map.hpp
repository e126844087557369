#ifndef CSE_FEATURE_MAP_HPP_
#define CSE_FEATURE_MAP_HPP_

#include <string>
#include <vector>

#include "cse/grid.hpp"

namespace cse {

// Dense H x W x d_x feature tensor in row-major, channel-minor order.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;

  float at(int y, int x, int ch) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  float& at(int y, int x, int ch) {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
};

FeatureMap make_feature_map(int height, int width, int channels);
void validate(const FeatureMap& map);

// The S x S x d_x block of features sampled at the grid nodes.
template <typename T>
struct SampledGrid {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  GridSpec grid;
  std::vector<T> values;  // node-major, channel-minor

  const T* node(int id) const { return values.data() + static_cast<std::size_t>(id) * channels; }
  T* node(int id) { return values.data() + static_cast<std::size_t>(id) * channels; }
};

// Samples the feature map at every grid node with bilinear interpolation over
// the four surrounding pixel centers; sample coordinates are clamped to the
// map border first.
template <typename T>
SampledGrid<T> bilinear_sample(const FeatureMap& map, const GridSpec& grid);

// "CSEF" binary feature-map container: magic, u32le H, W, d_x, then
// H*W*d_x float32le values in row-major channel-minor order.
void write_feature_map(const FeatureMap& map, const std::string& path);
FeatureMap read_feature_map(const std::string& path);

}  // namespace cse

#endif  // CSE_FEATURE_MAP_HPP_
