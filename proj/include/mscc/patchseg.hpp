#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mscc/image.hpp"
#include "mscc/model.hpp"

namespace mscc::patch {

enum class PatchLabel : std::uint8_t { WithoutObject = 0, WithObject = 1 };

struct Patch {
  GrayImage pixels;
  int grid_row = 0;
  int grid_col = 0;
  std::string image_id;
};

/// Patches plus (optionally) one label per patch. `criterion` is the object
/// fraction threshold the labels were produced with.
struct PatchSet {
  int patch_size = 8;
  double criterion = 0.5;
  std::vector<Patch> patches;
  std::vector<PatchLabel> labels;

  std::size_t size() const { return patches.size(); }
  bool labeled() const { return !patches.empty() && labels.size() == patches.size(); }
  std::size_t count(PatchLabel label) const;
  /// Appends `other`, which must use the same patch size.
  void append(const PatchSet& other);
};

/// WithObject iff the foreground fraction is strictly greater than
/// `criterion`. Throws on non-binary masks.
PatchLabel assign_label(const BinaryMask& gt_patch, double criterion = 0.5);

/// Non-overlapping row-major tiling. With `gt`, every patch is labeled.
PatchSet mesh_patches(const GrayImage& image, const BinaryMask* gt = nullptr, int size = 8,
                      double criterion = 0.5, const std::string& image_id = "");

/// Inverse of meshing for the pixel content of one image's patches.
GrayImage reassemble(const PatchSet& set, int height, int width);

/// Eight dihedral variants per patch (see mscc::dihedral), labels copied.
PatchSet augment_patches(const PatchSet& set);

/// Seeded uniform sample of `count` patches without replacement.
PatchSet balance(const PatchSet& pool, std::size_t count, std::uint64_t seed);

/// Patches carrying `label`.
PatchSet filter_label(const PatchSet& set, PatchLabel label);

/// The two-class training set: the minority class is augmented x8 and then
/// sampled down to the majority count. If even the augmented minority is
/// smaller, the majority is sampled down to it instead.
PatchSet balanced_training_set(const PatchSet& set, std::uint64_t seed);

struct PatchTrainConfig {
  int epochs = 15;
  double lr = 1.0e-4;
  int batch_size = 32;
  std::uint64_t seed = 1;
};

struct PatchEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

using PatchEpochObserver = std::function<void(const PatchEpoch&)>;

struct PatchTrainResult {
  Model model;
  AdamState optimizer;
  std::vector<PatchEpoch> curves;
};

/// Categorical cross-entropy with Adam over shuffled mini-batches; the
/// batch order is drawn from `seed`. Loss and accuracy per epoch are batch
/// means taken during training.
PatchTrainResult train_patch_classifier(const PatchSet& balanced, const PatchTrainConfig& config,
                                        const PatchEpochObserver& observer = {});

/// Inference-mode labels (argmax; a tie means WithoutObject).
std::vector<PatchLabel> classify(Model& model, const PatchSet& set, int batch_size = 256);

/// Paints each WithObject cell as a size x size foreground block.
/// `labels` is row-major over the (height/size) x (width/size) grid.
BinaryMask reconstruct_mask(std::span<const PatchLabel> labels, int height, int width, int size = 8);

/// Text records `image_id,row,col,label` followed by a little-endian f64
/// pixel blob, one patch after another.
void write_patch_cache(const std::filesystem::path& path, const PatchSet& set);
PatchSet read_patch_cache(const std::filesystem::path& path);

}  // namespace mscc::patch
