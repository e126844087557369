#include "cse/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <utility>

namespace cse {

std::size_t Raster::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Raster make_raster(int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("Raster: empty dimensions");
  Raster r;
  r.height = height;
  r.width = width;
  r.data.assign(static_cast<std::size_t>(height) * width, 0);
  return r;
}

void write_pgm(const Raster& mask, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("PGM: cannot open for writing: " + path);
  os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(mask.width));
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) row[c] = mask.at(r, c) ? 255 : 0;
    os.write(reinterpret_cast<const char*>(row.data()), mask.width);
  }
  if (!os) throw FormatError("PGM: write failed: " + path);
}

namespace {

int read_pnm_int(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comment lines
  int ch = is.peek();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    ch = is.peek();
  }
  int value = 0;
  if (!(is >> value)) throw FormatError("PNM: malformed header in " + path);
  return value;
}

}  // namespace

Raster read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("PGM: cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw FormatError("PGM: expected P5 in " + path);
  const int width = read_pnm_int(is, path);
  const int height = read_pnm_int(is, path);
  const int maxval = read_pnm_int(is, path);
  if (width < 1 || height < 1 || maxval != 255)
    throw FormatError("PGM: unsupported header in " + path);
  is.get();  // single whitespace after maxval
  Raster mask = make_raster(height, width);
  std::vector<unsigned char> row(static_cast<std::size_t>(width));
  for (int r = 0; r < height; ++r) {
    if (!is.read(reinterpret_cast<char*>(row.data()), width))
      throw FormatError("PGM: truncated body in " + path);
    for (int c = 0; c < width; ++c) mask.set(r, c, row[c] > 127);
  }
  return mask;
}

void write_pgm_gray(const std::vector<std::uint8_t>& gray, int height, int width,
                    const std::string& path) {
  if (gray.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("write_pgm_gray: buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("PGM: cannot open for writing: " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!os) throw FormatError("PGM: write failed: " + path);
}

void write_ppm_rgb(const std::vector<std::uint8_t>& rgb, int height, int width,
                   const std::string& path) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
    throw std::invalid_argument("write_ppm_rgb: buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("PPM: cannot open for writing: " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw FormatError("PPM: write failed: " + path);
}

int label_components(const Raster& mask, std::vector<int>& labels) {
  const std::size_t n = mask.data.size();
  labels.assign(n, -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (mask.data[start] == 0 || labels[start] >= 0) continue;
    stack.push_back(start);
    labels[start] = next;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int r = static_cast<int>(i) / mask.width;
      const int c = static_cast<int>(i) % mask.width;
      const int dr[4] = {1, -1, 0, 0};
      const int dc[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nr = r + dr[k], nc = c + dc[k];
        if (!mask.in_bounds(nr, nc)) continue;
        const std::size_t j = static_cast<std::size_t>(nr) * mask.width + nc;
        if (mask.data[j] == 0 || labels[j] >= 0) continue;
        labels[j] = next;
        stack.push_back(j);
      }
    }
    ++next;
  }
  return next;
}

void fill_holes(Raster& mask) {
  // Flood the background from the border; anything unreached is a hole. The
  // background floods 8-connectedly, the complement of 4-connected foreground,
  // so holes are exactly the regions an outer crack contour encloses.
  Raster outside = make_raster(mask.height, mask.width);
  std::vector<std::pair<int, int>> stack;
  auto push = [&](int r, int c) {
    if (!mask.in_bounds(r, c) || mask.at(r, c) || outside.at(r, c)) return;
    outside.set(r, c, true);
    stack.emplace_back(r, c);
  };
  for (int c = 0; c < mask.width; ++c) {
    push(0, c);
    push(mask.height - 1, c);
  }
  for (int r = 0; r < mask.height; ++r) {
    push(r, 0);
    push(r, mask.width - 1);
  }
  while (!stack.empty()) {
    const auto [r, c] = stack.back();
    stack.pop_back();
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) push(r + dr, c + dc);
  }
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (!mask.at(r, c) && !outside.at(r, c)) mask.set(r, c, true);
}

namespace {

// Felzenszwalb-Huttenlocher 1D lower envelope of parabolas.
void edt_1d(const std::vector<double>& f, std::vector<double>& out, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  out.resize(n);
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    out[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const Raster& mask) {
  const int h = mask.height, w = mask.width;
  const double inf = 1e18;
  std::vector<double> dist(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = mask.data[i] ? 0.0 : inf;

  std::vector<double> f, out;
  std::vector<int> v;
  std::vector<double> z;
  // columns
  f.resize(h);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = dist[static_cast<std::size_t>(r) * w + c];
    edt_1d(f, out, v, z);
    for (int r = 0; r < h; ++r) dist[static_cast<std::size_t>(r) * w + c] = out[r];
  }
  // rows
  f.resize(w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = dist[static_cast<std::size_t>(r) * w + c];
    edt_1d(f, out, v, z);
    for (int c = 0; c < w; ++c) dist[static_cast<std::size_t>(r) * w + c] = out[c];
  }
  return dist;
}

double min_mask_distance(const Raster& a, const Raster& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("min_mask_distance: dimension mismatch");
  if (a.count() == 0 || b.count() == 0) return std::numeric_limits<double>::infinity();
  const std::vector<double> d2 = squared_distance_transform(a);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < b.data.size(); ++i)
    if (b.data[i]) best = std::min(best, d2[i]);
  return std::sqrt(best);
}

}  // namespace cse
