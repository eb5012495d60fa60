#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mscc/image.hpp"
#include "mscc/metrics.hpp"

namespace mscc::fusion {

/// Foreground iff p >= threshold; threshold must lie in (0, 1).
BinaryMask binarize(const ProbabilityMap& prob, double threshold = 0.5);

/// Square (Chebyshev) dilation: a pixel is set iff some foreground pixel
/// lies within max(|dr|, |dc|) <= radius.
BinaryMask dilate(const BinaryMask& mask, int radius);

/// patch_mask AND dilate(pixel_mask, radius).
BinaryMask buffer_filter(const BinaryMask& patch_mask, const BinaryMask& pixel_mask, int radius);

/// Pixelwise OR.
BinaryMask combine(const BinaryMask& a, const BinaryMask& b);

/// combine(pixel, buffer_filter(patch, pixel, radius)).
inline BinaryMask fuse(const BinaryMask& pixel_mask, const BinaryMask& patch_mask, int radius) {
  return combine(pixel_mask, buffer_filter(patch_mask, pixel_mask, radius));
}

/// 2, 4, ..., 40.
std::vector<int> default_sweep_radii();

struct SweepRow {
  int radius = 0;
  metrics::Metrics values;
  std::size_t filtered_area = 0;  // area of the buffer-filtered patch mask
};

std::vector<SweepRow> sweep_buffer(const BinaryMask& patch_mask, const BinaryMask& pixel_mask, const BinaryMask& gt,
                                   std::span<const int> radii);

/// Row-wise mean of several sweeps over the same radius grid.
std::vector<SweepRow> average_sweeps(const std::vector<std::vector<SweepRow>>& sweeps);

/// First grid radius where sign(recall - accuracy) differs from the previous
/// row's; without a crossing, the radius minimizing |recall - accuracy|
/// (earliest on ties).
int select_buffer(std::span<const SweepRow> table);

/// radius,dice,jaccard,recall,accuracy,voe
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> table);

struct Rgb {
  std::uint8_t r, g, b;
};

inline constexpr Rgb kPixelOnly{255, 0, 0};
inline constexpr Rgb kPatchOnly{0, 255, 0};
inline constexpr Rgb kOverlap{255, 255, 0};
inline constexpr Rgb kGtOutline{128, 0, 128};

/// Gray original with mask colors blended at 0.5 and the ground-truth
/// boundary (foreground pixels 4-adjacent to background) painted opaque.
RgbImage render_overlay(const GrayImage& original, const BinaryMask& pixel_mask, const BinaryMask& patch_mask,
                        const BinaryMask* gt = nullptr);

/// Foreground pixels with a background 4-neighbour inside the image.
BinaryMask boundary(const BinaryMask& mask);

}  // namespace mscc::fusion
