#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "mscc/fusion.hpp"

using namespace mscc;
using namespace mscc::fusion;
namespace fs = std::filesystem;

namespace {

BinaryMask random_mask(int h, int w, std::mt19937_64& gen, double density) {
  std::bernoulli_distribution b(density);
  BinaryMask m(h, w);
  for (auto& v : m.data) v = b(gen);
  return m;
}

// Brute-force Chebyshev dilation.
BinaryMask dilate_oracle(const BinaryMask& m, int radius) {
  BinaryMask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      for (int rr = 0; rr < m.height && !out.at(r, c); ++rr)
        for (int cc = 0; cc < m.width; ++cc)
          if (m.at(rr, cc) && std::max(std::abs(rr - r), std::abs(cc - c)) <= radius) {
            out.at(r, c) = 1;
            break;
          }
  return out;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i] && !b.data[i]) return false;
  return true;
}

SweepRow row(int radius, double recall, double accuracy) {
  SweepRow r;
  r.radius = radius;
  r.values.recall = recall;
  r.values.accuracy = accuracy;
  return r;
}

}  // namespace

TEST(Binarize, ThresholdRule) {
  ProbabilityMap p(1, 4);
  p.data = {0.2, 0.5, 0.7, 0.49999};
  auto m = binarize(p, 0.5);
  EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 1, 1, 0}));
  ProbabilityMap again(1, 4);
  for (std::size_t i = 0; i < 4; ++i) again.data[i] = m.data[i];
  EXPECT_EQ(binarize(again), m);
  EXPECT_THROW(binarize(p, 0.0), std::invalid_argument);
  EXPECT_THROW(binarize(p, 1.0), std::invalid_argument);
}

TEST(Dilate, MatchesBruteForce) {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 40; ++t) {
    auto m = random_mask(9 + t % 5, 12, gen, 0.05);
    const int r = t % 6;
    EXPECT_EQ(dilate(m, r), dilate_oracle(m, r)) << t;
  }
}

TEST(Dilate, SinglePixelAndIdentity) {
  BinaryMask m(5, 5);
  m.at(2, 2) = 1;
  EXPECT_EQ(dilate(m, 0), m);
  auto d = dilate(m, 1);
  EXPECT_EQ(d.area(), 9u);
  EXPECT_EQ(d.at(1, 1), 1);
  EXPECT_EQ(d.at(0, 0), 0);
  EXPECT_EQ(dilate(m, 10).area(), 25u);
  EXPECT_THROW(dilate(m, -1), std::invalid_argument);
}

TEST(BufferFilter, DistanceArithmetic) {
  BinaryMask pixel(64, 100), patch(64, 100);
  pixel.at(10, 10) = 1;
  for (int r = 8; r < 16; ++r)
    for (int c = 40; c < 48; ++c) patch.at(r, c) = 1;  // nearest column is 30 away
  EXPECT_EQ(buffer_filter(patch, pixel, 26).area(), 0u);
  EXPECT_EQ(buffer_filter(patch, pixel, 29).area(), 0u);
  EXPECT_EQ(buffer_filter(patch, pixel, 30).area(), 8u);
  EXPECT_EQ(buffer_filter(patch, BinaryMask(64, 100), 40).area(), 0u);
  EXPECT_THROW(buffer_filter(patch, BinaryMask(64, 99), 1), std::invalid_argument);
}

TEST(Combine, BooleanAlgebra) {
  std::mt19937_64 gen(2);
  auto a = random_mask(8, 8, gen, 0.3), b = random_mask(8, 8, gen, 0.3);
  EXPECT_EQ(combine(a, BinaryMask(8, 8)), a);
  EXPECT_EQ(combine(a, b), combine(b, a));
  EXPECT_EQ(combine(a, a), a);
  BinaryMask left(4, 8), right(4, 8);
  for (int r = 0; r < 4; ++r) left.at(r, 0) = right.at(r, 7) = 1;
  EXPECT_EQ(combine(left, right).area(), left.area() + right.area());
}

TEST(Fuse, RandomTripleInvariants) {
  std::mt19937_64 gen(3);
  const auto radii = default_sweep_radii();
  for (int t = 0; t < 200; ++t) {
    auto pixel = random_mask(32, 32, gen, 0.02), patch = random_mask(32, 32, gen, 0.3),
         gt = random_mask(32, 32, gen, 0.2);
    for (int r : {0, 2, 7}) {
      auto f = buffer_filter(patch, pixel, r);
      EXPECT_TRUE(subset(f, patch));
      EXPECT_TRUE(subset(f, dilate(pixel, r)));
      EXPECT_TRUE(subset(pixel, fuse(pixel, patch, r)));
    }
    auto sweep = sweep_buffer(patch, pixel, gt, radii);
    for (std::size_t k = 1; k < sweep.size(); ++k) EXPECT_GE(sweep[k].filtered_area, sweep[k - 1].filtered_area);
    EXPECT_EQ(fuse(pixel, patch, 0), pixel);
    auto inner = buffer_filter(patch, pixel, 0);  // patch restricted to pixel
    for (int r : {0, 4, 40}) EXPECT_EQ(buffer_filter(inner, pixel, r), inner);
  }
}

TEST(Sweep, RowsFollowGrid) {
  std::mt19937_64 gen(4);
  auto pixel = random_mask(16, 16, gen, 0.1), patch = random_mask(16, 16, gen, 0.3), gt = random_mask(16, 16, gen, 0.2);
  const auto radii = default_sweep_radii();
  ASSERT_EQ(radii.size(), 20u);
  EXPECT_EQ(radii.front(), 2);
  EXPECT_EQ(radii.back(), 40);
  auto rows = sweep_buffer(patch, pixel, gt, radii);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].radius, radii[k]);
    auto direct = metrics::evaluate(fuse(pixel, patch, radii[k]), gt);
    EXPECT_EQ(rows[k].values.dice, direct.dice);
  }
  auto avg = average_sweeps({rows, rows});
  EXPECT_EQ(avg[3].values.recall, rows[3].values.recall);
  EXPECT_EQ(avg[3].filtered_area, 2 * rows[3].filtered_area);
}

TEST(SelectBuffer, SingleCrossing) {
  std::vector<SweepRow> table;
  for (int r = 2; r <= 40; r += 2) {
    // recall climbs through accuracy between radius 24 and 26
    const double recall = 0.80 + 0.005 * r, accuracy = 0.925;
    table.push_back(row(r, recall, accuracy));
  }
  EXPECT_EQ(select_buffer(table), 26);
}

TEST(SelectBuffer, NoCrossingPicksClosest) {
  std::vector<SweepRow> table;
  for (int r = 2; r <= 40; r += 2) table.push_back(row(r, 0.7 + 0.002 * r, 0.9));
  EXPECT_EQ(select_buffer(table), 40);
  std::vector<SweepRow> falling;
  for (int r = 2; r <= 40; r += 2) falling.push_back(row(r, 0.95 - 0.001 * r, 0.9));
  EXPECT_EQ(select_buffer(falling), 40);
  std::vector<SweepRow> flat = {row(2, 0.8, 0.9), row(4, 0.85, 0.9), row(6, 0.85, 0.9)};
  EXPECT_EQ(select_buffer(flat), 4);
  EXPECT_THROW(select_buffer(std::vector<SweepRow>{}), std::invalid_argument);
}

TEST(SelectBuffer, ExactTouchCounts) {
  std::vector<SweepRow> table = {row(2, 0.8, 0.9), row(4, 0.9, 0.9), row(6, 0.95, 0.9)};
  EXPECT_EQ(select_buffer(table), 4);
}

TEST(Overlay, ColorsAndOutline) {
  GrayImage img(6, 6, 0.4);
  BinaryMask pixel(6, 6), patch(6, 6), gt(6, 6);
  pixel.at(0, 0) = 1;
  patch.at(0, 5) = 1;
  pixel.at(5, 5) = patch.at(5, 5) = 1;
  for (int r = 2; r <= 4; ++r)
    for (int c = 2; c <= 4; ++c) gt.at(r, c) = 1;
  auto o = render_overlay(img, pixel, patch, &gt);
  const int g = 102;  // round(0.4 * 255)
  auto expect = [&](int r, int c, int R, int G, int B) {
    EXPECT_EQ(o.px(r, c)[0], R) << r << "," << c;
    EXPECT_EQ(o.px(r, c)[1], G) << r << "," << c;
    EXPECT_EQ(o.px(r, c)[2], B) << r << "," << c;
  };
  expect(0, 0, (g + 255 + 1) / 2, g / 2, g / 2);
  expect(0, 5, g / 2, (g + 255 + 1) / 2, g / 2);
  expect(5, 5, (g + 255 + 1) / 2, (g + 255 + 1) / 2, g / 2);
  expect(1, 1, g, g, g);
  expect(2, 2, 128, 0, 128);  // boundary
  expect(3, 3, g, g, g);      // interior of the object is not outlined
  auto no_gt = render_overlay(img, pixel, patch);
  EXPECT_EQ(no_gt.px(2, 2)[0], g);
}

TEST(Overlay, ImageEdgeIsNotBackground) {
  BinaryMask full(4, 4, 1);
  EXPECT_EQ(boundary(full).area(), 0u);
  BinaryMask m(4, 4, 1);
  m.at(1, 1) = 0;
  auto b = boundary(m);
  EXPECT_EQ(b.area(), 4u);
  EXPECT_EQ(b.at(0, 1), 1);
  EXPECT_EQ(b.at(0, 0), 0);
}

TEST(SweepCsv, Layout) {
  std::vector<SweepRow> table = {row(2, 0.5, 0.25)};
  auto path = fs::temp_directory_path() / "mscc_sweep.csv";
  write_sweep_csv(path, table);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header, "radius,dice,jaccard,recall,accuracy,voe");
  EXPECT_EQ(line, "2,0.0000,0.0000,0.5000,0.2500,0.0000");
  fs::remove(path);
}
