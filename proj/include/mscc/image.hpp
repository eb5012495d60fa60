#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mscc {

/// Row-major H x W plane.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t size() const { return data.size(); }
  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  bool same_size(const auto& other) const { return height == other.height && width == other.width; }
  bool operator==(const Grid&) const = default;
};

/// Grayscale intensities in [0, 1].
struct GrayImage : Grid<double> {
  using Grid::Grid;
};

/// Per-pixel foreground probability in [0, 1].
struct ProbabilityMap : Grid<double> {
  using Grid::Grid;
};

/// Two-valued mask, 1 = foreground.
struct BinaryMask : Grid<std::uint8_t> {
  using Grid::Grid;
  std::size_t area() const;
};

/// Interleaved 8-bit RGB.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t* px(int r, int c) { return &data[(static_cast<std::size_t>(r) * width + c) * 3]; }
  const std::uint8_t* px(int r, int c) const { return &data[(static_cast<std::size_t>(r) * width + c) * 3]; }
  bool operator==(const RgbImage&) const = default;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoded file contents before any normalization: 1 (gray) or 3 (RGB)
/// channels, values scaled to [0, 1] by the file's max value.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;
};

/// Reads PGM (P2/P5, 8 or 16 bit), PPM (P3/P6) or PNG (any color type).
RawImage read_image(const std::filesystem::path& path);

GrayImage to_gray(const RawImage& raw);  // 0.299 R + 0.587 G + 0.114 B

void write_pgm8(const std::filesystem::path& path, const GrayImage& image);
void write_pgm8(const std::filesystem::path& path, const BinaryMask& mask);  // 0/255
void write_pgm16(const std::filesystem::path& path, const ProbabilityMap& prob);  // p * 65535
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);
void write_png(const std::filesystem::path& path, const BinaryMask& mask);

GrayImage read_gray(const std::filesystem::path& path);
ProbabilityMap read_probability(const std::filesystem::path& path);
/// Any nonzero sample is foreground.
BinaryMask read_mask(const std::filesystem::path& path);

/// Bilinear resample on pixel centers (edge samples clamped).
GrayImage resize_bilinear(const GrayImage& image, int height, int width);
/// Nearest-neighbour resample on pixel centers.
GrayImage resize_nearest(const GrayImage& image, int height, int width);

/// The eight images of the dihedral group: rotation by index%4 quarter turns
/// (counter-clockwise), preceded by a horizontal mirror when index >= 4.
template <typename G>
G dihedral(const G& in, int index) {
  G cur = in;
  if (index >= 4) {
    for (int r = 0; r < in.height; ++r)
      for (int c = 0; c < in.width; ++c) cur.at(r, c) = in.at(r, in.width - 1 - c);
  }
  for (int q = 0; q < index % 4; ++q) {
    G next(cur.width, cur.height);
    for (int r = 0; r < next.height; ++r)
      for (int c = 0; c < next.width; ++c) next.at(r, c) = cur.at(c, cur.width - 1 - r);
    cur = std::move(next);
  }
  return cur;
}

}  // namespace mscc
