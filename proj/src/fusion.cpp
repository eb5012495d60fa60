#include "mscc/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mscc::fusion {

namespace {

void require_same(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (!a.same_size(b)) {
    throw std::invalid_argument(std::string(op) + ": masks are " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  }
}

}  // namespace

BinaryMask binarize(const ProbabilityMap& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize: threshold must lie in (0, 1)");
  BinaryMask m(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.size(); ++i) m.data[i] = prob.data[i] >= threshold ? 1 : 0;
  return m;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate: radius must be nonnegative");
  if (radius == 0) return mask;
  const int h = mask.height, w = mask.width;
  // The square element separates into a horizontal then a vertical pass;
  // each pass counts foreground in a sliding window via prefix sums.
  BinaryMask rows(h, w);
  std::vector<int> prefix(static_cast<std::size_t>(std::max(h, w)) + 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) prefix[c + 1] = prefix[c] + (mask.at(r, c) ? 1 : 0);
    for (int c = 0; c < w; ++c) {
      const int lo = std::max(0, c - radius), hi = std::min(w - 1, c + radius);
      rows.at(r, c) = prefix[hi + 1] - prefix[lo] > 0 ? 1 : 0;
    }
  }
  BinaryMask out(h, w);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) prefix[r + 1] = prefix[r] + rows.at(r, c);
    for (int r = 0; r < h; ++r) {
      const int lo = std::max(0, r - radius), hi = std::min(h - 1, r + radius);
      out.at(r, c) = prefix[hi + 1] - prefix[lo] > 0 ? 1 : 0;
    }
  }
  return out;
}

BinaryMask buffer_filter(const BinaryMask& patch_mask, const BinaryMask& pixel_mask, int radius) {
  require_same(patch_mask, pixel_mask, "buffer_filter");
  BinaryMask out = dilate(pixel_mask, radius);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (out.data[i] && patch_mask.data[i]) ? 1 : 0;
  return out;
}

BinaryMask combine(const BinaryMask& a, const BinaryMask& b) {
  require_same(a, b, "combine");
  BinaryMask out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
  return out;
}

std::vector<int> default_sweep_radii() {
  std::vector<int> r;
  for (int v = 2; v <= 40; v += 2) r.push_back(v);
  return r;
}

std::vector<SweepRow> sweep_buffer(const BinaryMask& patch_mask, const BinaryMask& pixel_mask, const BinaryMask& gt,
                                   std::span<const int> radii) {
  require_same(patch_mask, pixel_mask, "sweep_buffer");
  require_same(pixel_mask, gt, "sweep_buffer");
  std::vector<SweepRow> rows;
  for (int r : radii) {
    auto filtered = buffer_filter(patch_mask, pixel_mask, r);
    rows.push_back({r, metrics::evaluate(combine(pixel_mask, filtered), gt), filtered.area()});
  }
  return rows;
}

std::vector<SweepRow> average_sweeps(const std::vector<std::vector<SweepRow>>& sweeps) {
  if (sweeps.empty()) return {};
  std::vector<SweepRow> out;
  for (std::size_t k = 0; k < sweeps.front().size(); ++k) {
    std::vector<metrics::Metrics> values;
    std::size_t area = 0;
    for (const auto& s : sweeps) {
      if (s.size() != sweeps.front().size() || s[k].radius != sweeps.front()[k].radius) {
        throw std::invalid_argument("average_sweeps: sweeps use different radius grids");
      }
      values.push_back(s[k].values);
      area += s[k].filtered_area;
    }
    out.push_back({sweeps.front()[k].radius, metrics::mean(values), area});
  }
  return out;
}

int select_buffer(std::span<const SweepRow> table) {
  if (table.empty()) throw std::invalid_argument("select_buffer: empty sweep table");
  auto diff = [](const SweepRow& row) { return row.values.recall - row.values.accuracy; };
  auto sign = [](double v) { return (v > 0) - (v < 0); };
  for (std::size_t k = 0; k < table.size(); ++k) {
    const int s = sign(diff(table[k]));
    if (s == 0) return table[k].radius;
    if (k > 0 && s != sign(diff(table[k - 1]))) return table[k].radius;
  }
  auto best = std::min_element(table.begin(), table.end(), [&](const SweepRow& a, const SweepRow& b) {
    return std::abs(diff(a)) < std::abs(diff(b));
  });
  return best->radius;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "radius,dice,jaccard,recall,accuracy,voe\n";
  for (const auto& row : table) {
    const auto& m = row.values;
    out << row.radius << ',' << metrics::format_value(m.dice) << ',' << metrics::format_value(m.jaccard) << ','
        << metrics::format_value(m.recall) << ',' << metrics::format_value(m.accuracy) << ','
        << metrics::format_value(m.voe) << '\n';
  }
}

BinaryMask boundary(const BinaryMask& mask) {
  BinaryMask out(mask.height, mask.width);
  const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || cc < 0 || rr >= mask.height || cc >= mask.width) continue;
        if (!mask.at(rr, cc)) {
          out.at(r, c) = 1;
          break;
        }
      }
    }
  return out;
}

RgbImage render_overlay(const GrayImage& original, const BinaryMask& pixel_mask, const BinaryMask& patch_mask,
                        const BinaryMask* gt) {
  if (!original.same_size(pixel_mask)) throw std::invalid_argument("render_overlay: image and pixel mask differ in size");
  require_same(pixel_mask, patch_mask, "render_overlay");
  if (gt) require_same(pixel_mask, *gt, "render_overlay");
  RgbImage out(original.height, original.width);
  const BinaryMask outline = gt ? boundary(*gt) : BinaryMask(original.height, original.width);
  for (int r = 0; r < original.height; ++r)
    for (int c = 0; c < original.width; ++c) {
      auto* px = out.px(r, c);
      if (outline.at(r, c)) {
        px[0] = kGtOutline.r;
        px[1] = kGtOutline.g;
        px[2] = kGtOutline.b;
        continue;
      }
      const double g = std::round(std::clamp(original.at(r, c), 0.0, 1.0) * 255.0);
      const bool a = pixel_mask.at(r, c), b = patch_mask.at(r, c);
      if (!a && !b) {
        px[0] = px[1] = px[2] = static_cast<std::uint8_t>(g);
        continue;
      }
      const Rgb color = a && b ? kOverlap : (a ? kPixelOnly : kPatchOnly);
      px[0] = static_cast<std::uint8_t>(std::lround(0.5 * g + 0.5 * color.r));
      px[1] = static_cast<std::uint8_t>(std::lround(0.5 * g + 0.5 * color.g));
      px[2] = static_cast<std::uint8_t>(std::lround(0.5 * g + 0.5 * color.b));
    }
  return out;
}

}  // namespace mscc::fusion
