#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mscc/patchseg.hpp"

using namespace mscc;
using namespace mscc::patch;
namespace fs = std::filesystem;

namespace {

GrayImage ramp(int h, int w) {
  GrayImage img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) img.at(r, c) = (r * w + c) / static_cast<double>(h * w);
  return img;
}

BinaryMask random_mask(int h, int w, unsigned seed, double density = 0.3) {
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution b(density);
  BinaryMask m(h, w);
  for (auto& v : m.data) v = b(gen);
  return m;
}

PatchSet flat_patches(std::size_t per_class, int size = 8) {
  PatchSet set;
  set.patch_size = size;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool white = i % 2 == 1;
    set.patches.push_back({GrayImage(size, size, white ? 1.0 : 0.0), 0, static_cast<int>(i), "toy"});
    set.labels.push_back(white ? PatchLabel::WithObject : PatchLabel::WithoutObject);
  }
  return set;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("mscc_patch_" + name); }

}  // namespace

TEST(Label, StrictlyGreaterThanCriterion) {
  BinaryMask m(8, 8, 0);
  for (int i = 0; i < 32; ++i) m.data[i] = 1;
  EXPECT_EQ(assign_label(m, 0.5), PatchLabel::WithoutObject);  // exactly half
  m.data[32] = 1;
  EXPECT_EQ(assign_label(m, 0.5), PatchLabel::WithObject);
  EXPECT_EQ(assign_label(BinaryMask(8, 8, 0), 0.0), PatchLabel::WithoutObject);
  EXPECT_EQ(assign_label(BinaryMask(8, 8, 1), 0.99), PatchLabel::WithObject);
  m.data[0] = 2;
  EXPECT_THROW(assign_label(m), std::invalid_argument);
  EXPECT_THROW(assign_label(BinaryMask(8, 8, 0), 1.5), std::invalid_argument);
}

TEST(Label, MatchesCountingOracle) {
  for (unsigned seed = 1; seed <= 30; ++seed) {
    auto m = random_mask(8, 8, seed, seed / 31.0);
    std::size_t fg = 0;
    for (auto v : m.data) fg += v;
    for (double crit : {0.25, 0.5, 0.75})
      EXPECT_EQ(assign_label(m, crit) == PatchLabel::WithObject, fg * 1.0 / 64 > crit);
  }
}

TEST(Mesh, TilesRowMajorAndCountsCells) {
  auto img = ramp(256, 256);
  auto set = mesh_patches(img, nullptr, 8, 0.5, "a");
  ASSERT_EQ(set.size(), 1024u);
  EXPECT_FALSE(set.labeled());
  EXPECT_EQ(set.patches[33].grid_row, 1);
  EXPECT_EQ(set.patches[33].grid_col, 1);
  EXPECT_EQ(set.patches[33].pixels.at(0, 0), img.at(8, 8));
  EXPECT_EQ(set.patches[33].pixels.at(7, 7), img.at(15, 15));
  EXPECT_EQ(set.patches[5].image_id, "a");
}

TEST(Mesh, ReassembleIsIdentity) {
  for (int size : {4, 8, 16}) {
    auto img = ramp(32, 48);
    EXPECT_EQ(reassemble(mesh_patches(img, nullptr, size), 32, 48), img);
  }
}

TEST(Mesh, IndivisibleDimensionIsNamed) {
  try {
    mesh_patches(ramp(64, 60));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
  try {
    mesh_patches(ramp(62, 64));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos) << e.what();
  }
  BinaryMask small(32, 32);
  EXPECT_THROW(mesh_patches(ramp(64, 64), &small), std::invalid_argument);
}

TEST(Mesh, LabelsFollowGroundTruth) {
  auto gt = random_mask(32, 32, 4, 0.5);
  auto set = mesh_patches(ramp(32, 32), &gt, 8, 0.5);
  ASSERT_TRUE(set.labeled());
  for (std::size_t k = 0; k < set.size(); ++k) {
    BinaryMask cell(8, 8);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) cell.at(r, c) = gt.at(set.patches[k].grid_row * 8 + r, set.patches[k].grid_col * 8 + c);
    EXPECT_EQ(set.labels[k], assign_label(cell));
  }
}

TEST(Reconstruct, PaintsLabeledCells) {
  std::vector<PatchLabel> labels(16, PatchLabel::WithoutObject);
  labels[5] = PatchLabel::WithObject;  // row 1, col 1
  auto m = reconstruct_mask(labels, 32, 32, 8);
  EXPECT_EQ(m.area(), 64u);
  EXPECT_EQ(m.at(8, 8), 1);
  EXPECT_EQ(m.at(15, 15), 1);
  EXPECT_EQ(m.at(16, 16), 0);
  EXPECT_THROW(reconstruct_mask(labels, 32, 40, 8), std::invalid_argument);
}

TEST(Reconstruct, MeshOfReconstructionRecoversLabels) {
  std::mt19937_64 gen(3);
  std::vector<PatchLabel> labels(64);
  for (auto& l : labels) l = gen() % 2 ? PatchLabel::WithObject : PatchLabel::WithoutObject;
  auto m = reconstruct_mask(labels, 64, 64, 8);
  auto set = mesh_patches(GrayImage(64, 64), &m, 8, 0.5);
  EXPECT_EQ(set.labels, labels);
}

TEST(Augment, EightDistinctVariantsWithLabels) {
  PatchSet set;
  set.patches.push_back({ramp(8, 8), 0, 0, "x"});
  set.labels.push_back(PatchLabel::WithObject);
  auto aug = augment_patches(set);
  ASSERT_EQ(aug.size(), 8u);
  std::set<std::vector<double>> distinct;
  for (std::size_t i = 0; i < 8; ++i) {
    distinct.insert(aug.patches[i].pixels.data);
    EXPECT_EQ(aug.labels[i], PatchLabel::WithObject);
  }
  EXPECT_EQ(distinct.size(), 8u);
  EXPECT_EQ(aug.patches[0].pixels, set.patches[0].pixels);
}

TEST(Balance, SamplesWithoutReplacementDeterministically) {
  auto pool = flat_patches(50);
  auto a = balance(pool, 30, 9), b = balance(pool, 30, 9), c = balance(pool, 30, 10);
  ASSERT_EQ(a.size(), 30u);
  std::set<int> cols;
  for (const auto& p : a.patches) cols.insert(p.grid_col);
  EXPECT_EQ(cols.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(a.patches[i].grid_col, b.patches[i].grid_col);
  bool differs = false;
  for (std::size_t i = 0; i < 30; ++i) differs |= a.patches[i].grid_col != c.patches[i].grid_col;
  EXPECT_TRUE(differs);
  EXPECT_THROW(balance(pool, 101, 1), std::invalid_argument);
}

TEST(Balance, TrainingSetHasEqualClasses) {
  for (std::size_t minority : {1u, 5u, 12u, 30u}) {
    PatchSet set;
    for (std::size_t i = 0; i < 40 + minority; ++i) {
      const bool obj = i < minority;
      set.patches.push_back({ramp(8, 8), 0, static_cast<int>(i), "m"});
      set.labels.push_back(obj ? PatchLabel::WithObject : PatchLabel::WithoutObject);
    }
    auto bal = balanced_training_set(set, 4);
    const auto with = bal.count(PatchLabel::WithObject), without = bal.count(PatchLabel::WithoutObject);
    EXPECT_EQ(with, without) << minority;
    EXPECT_EQ(with, std::min<std::size_t>(40, 8 * minority)) << minority;
  }
}

TEST(Balance, RejectsMissingClass) {
  auto set = filter_label(flat_patches(4), PatchLabel::WithObject);
  EXPECT_EQ(set.size(), 4u);
  EXPECT_THROW(balanced_training_set(set, 1), std::invalid_argument);
}

TEST(Training, ToyBlackWhiteSeparation) {
  auto set = flat_patches(32);
  PatchTrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-4;
  cfg.batch_size = 4;
  cfg.seed = 5;
  auto result = train_patch_classifier(set, cfg);
  ASSERT_EQ(result.curves.size(), 2u);
  EXPECT_LE(result.curves[1].loss, result.curves[0].loss);
  auto pred = classify(result.model, set);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) correct += pred[i] == set.labels[i];
  EXPECT_GT(correct / 64.0, 0.95);
}

TEST(Training, SameSeedSameCurves) {
  auto set = flat_patches(8);
  PatchTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  auto a = train_patch_classifier(set, cfg), b = train_patch_classifier(set, cfg);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(a.curves[e].loss, b.curves[e].loss);
    EXPECT_EQ(a.curves[e].accuracy, b.curves[e].accuracy);
  }
  EXPECT_EQ(encode_checkpoint(a.model.to_checkpoint()), encode_checkpoint(b.model.to_checkpoint()));
}

TEST(Training, RejectsUnlabeledOrSingleClass) {
  PatchTrainConfig cfg;
  EXPECT_THROW(train_patch_classifier(mesh_patches(ramp(16, 16)), cfg), std::invalid_argument);
  EXPECT_THROW(train_patch_classifier(filter_label(flat_patches(4), PatchLabel::WithoutObject), cfg),
               std::invalid_argument);
}

TEST(Cache, RoundTrip) {
  auto gt = random_mask(16, 24, 2, 0.5);
  auto set = mesh_patches(ramp(16, 24), &gt, 8, 0.5, "cls/img 1");
  auto path = temp_path("rt.bin");
  write_patch_cache(path, set);
  auto back = read_patch_cache(path);
  EXPECT_EQ(back.patch_size, 8);
  EXPECT_EQ(back.criterion, 0.5);
  ASSERT_EQ(back.size(), set.size());
  EXPECT_EQ(back.labels, set.labels);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back.patches[i].pixels, set.patches[i].pixels);
    EXPECT_EQ(back.patches[i].image_id, set.patches[i].image_id);
    EXPECT_EQ(back.patches[i].grid_col, set.patches[i].grid_col);
  }

  auto unlabeled = mesh_patches(ramp(8, 8));
  write_patch_cache(path, unlabeled);
  EXPECT_FALSE(read_patch_cache(path).labeled());
  fs::remove(path);
}

TEST(Cache, TruncationIsDetected) {
  auto path = temp_path("trunc.bin");
  write_patch_cache(path, mesh_patches(ramp(16, 16)));
  const auto full = fs::file_size(path);
  fs::resize_file(path, full - 8);
  EXPECT_THROW(read_patch_cache(path), std::runtime_error);
  fs::resize_file(path, full + 8);
  EXPECT_THROW(read_patch_cache(path), std::runtime_error);
  fs::remove(path);
  EXPECT_THROW(read_patch_cache(path), std::runtime_error);
}
