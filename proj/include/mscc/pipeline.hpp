#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mscc/config.hpp"
#include "mscc/dataset.hpp"
#include "mscc/fusion.hpp"
#include "mscc/metrics.hpp"
#include "mscc/model.hpp"
#include "mscc/patchseg.hpp"

namespace mscc::pipeline {

struct PixelEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

using PixelEpochObserver = std::function<void(const PixelEpoch&)>;

struct PixelTrainResult {
  Model model;
  AdamState optimizer;
  std::vector<PixelEpoch> curves;
};

/// The configured segmentation network for 1 x image_size x image_size input.
net::NetworkSpec pixel_network(const Config& config);

/// Binary cross-entropy with Adam over seeded mini-batches of `train`.
/// Training loss/accuracy are running means over the epoch's batches;
/// validation figures come from an inference-mode pass over `val`. A
/// non-finite loss throws NonFiniteError naming the epoch and batch.
PixelTrainResult train_pixel(const std::vector<data::ImagePair>& train, const std::vector<data::ImagePair>& val,
                             const Config& config, const PixelEpochObserver& observer = {});

ProbabilityMap predict(Model& model, const GrayImage& image);

/// Binarize the network output, then run the dense CRF seeded with it.
BinaryMask crf_refine(const GrayImage& image, const ProbabilityMap& prob, const Config& config);

/// Mesh and label every pair, then balance the classes.
patch::PatchSet training_patches(const std::vector<data::ImagePair>& pairs, const Config& config);

BinaryMask patch_mask(Model& classifier, const GrayImage& image, const Config& config);

struct StageMasks {
  ProbabilityMap prob;
  BinaryMask pixel;     // binarized network output
  BinaryMask crf;       // CRF-refined pixel mask
  BinaryMask patch;     // reconstructed patch-level mask
  BinaryMask filtered;  // patch mask inside the buffer
  BinaryMask fused;
};

StageMasks segment(Model& pixel_model, Model& patch_model, const GrayImage& image, const Config& config, int radius);

/// Mean sweep over `pairs` and the radius select_buffer picks from it.
struct RadiusChoice {
  int radius = 0;
  std::vector<fusion::SweepRow> table;
};
RadiusChoice choose_radius(Model& pixel_model, Model& patch_model, const std::vector<data::ImagePair>& pairs,
                           const Config& config);

void write_pixel_curves(const std::filesystem::path& path, const std::vector<PixelEpoch>& curves);
void write_patch_curves(const std::filesystem::path& path, const std::vector<patch::PatchEpoch>& curves);

/// Test-split means of each stage.
struct StageSummary {
  metrics::Metrics pixel;
  metrics::Metrics crf;
  metrics::Metrics fused;
};

struct InferenceResult {
  metrics::MetricsReport fused;
  StageSummary stages;
  std::size_t images = 0;
};

/// Segments every pair, writing under `out_dir`:
///   masks/<class>/<stem>_{prob,pixel,crf,patch,fused}.pgm, overlays/<class>/<stem>.png,
///   metrics_per_image.csv, metrics_per_class.csv, metrics_overall.csv (fused masks),
///   metrics_stages.csv (stage,dice,jaccard,recall,accuracy,voe).
InferenceResult infer_and_fuse(Model& pixel_model, Model& patch_model, const std::vector<data::ImagePair>& pairs,
                               const Config& config, int radius, const std::filesystem::path& out_dir);

using Logger = std::function<void(const std::string&)>;

/// Whole workflow on a manifest with assigned splits: train both networks,
/// fix the buffer radius, segment the test split. Writes pixel.ckpt,
/// pixel_curves.csv, patch.ckpt, patch_curves.csv, sweep.csv (validation
/// sweep), config.txt and the infer_and_fuse outputs.
InferenceResult run(const data::Manifest& manifest, const Config& config, const std::filesystem::path& out_dir,
                    const Logger& log = {});

}  // namespace mscc::pipeline
