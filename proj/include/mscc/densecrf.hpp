#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mscc/image.hpp"

namespace mscc::crf {

/// Kernel weights and scales of the two-kernel pairwise term. Intensities
/// are in [0, 1], so sigma_beta = 20/255 matches the usual 0-255 setting.
struct CrfParams {
  double w1 = 10.0;  ///< appearance kernel weight
  double w2 = 3.0;   ///< smoothness kernel weight
  double sigma_alpha = 60.0;
  double sigma_beta = 20.0 / 255.0;
  double sigma_gamma = 3.0;
  int num_labels = 2;
  int num_iterations = 10;
  /// Restrict messages to a Chebyshev window of radius
  /// ceil(3 max(sigma_alpha, sigma_gamma)). Off means exact all-pairs.
  bool truncated = false;

  void validate() const;
};

/// Positions p_i (x = column, y = row, in pixels) and intensities I_i
/// (`channels` values per pixel).
struct PixelFeatures {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> intensity;

  std::size_t size() const { return x.size(); }
  static PixelFeatures from_gray(const GrayImage& image);
  /// Same pixels in a new order: result pixel k is source pixel order[k].
  PixelFeatures permuted(std::span<const std::size_t> order) const;
};

/// Pixel-major cost table: cost[i * num_labels + l] = U_i(l).
struct UnaryPotentials {
  int num_labels = 2;
  std::vector<double> cost;

  std::size_t num_pixels() const { return cost.size() / static_cast<std::size_t>(num_labels); }
  double at(std::size_t i, int l) const { return cost[i * num_labels + l]; }
};

/// Pixel-major label distributions, same layout as UnaryPotentials.
struct MarginalField {
  int num_labels = 2;
  std::vector<double> q;

  std::size_t num_pixels() const { return q.size() / static_cast<std::size_t>(num_labels); }
  double at(std::size_t i, int l) const { return q[i * num_labels + l]; }
};

/// U(fg) = -log clamp(p), U(bg) = -log clamp(1 - p); label 0 is background.
UnaryPotentials unary_from_probabilities(const ProbabilityMap& prob, double eps = 1e-6);

/// Treats a binary mask as p in {1 - confidence, confidence}.
UnaryPotentials unary_from_mask(const BinaryMask& mask, double confidence = 0.9);

double pairwise_kernel(std::size_t i, std::size_t j, const PixelFeatures& feats, const CrfParams& params);

/// Per-pixel softmax(-U).
MarginalField initial_marginals(const UnaryPotentials& unary);

/// One synchronous update under Potts compatibility:
/// Q'_i(l) ∝ exp(-U_i(l) - sum_{j != i} k(f_i, f_j) (1 - Q_j(l))).
MarginalField mean_field_step(const MarginalField& q, const UnaryPotentials& unary, const PixelFeatures& feats,
                              const CrfParams& params);

using IterationObserver = std::function<void(int iteration, const MarginalField& q)>;

/// Starts from softmax(-U) and applies params.num_iterations steps. The
/// observer (if any) sees the field after initialization (iteration 0) and
/// after every step.
MarginalField mean_field_infer(const UnaryPotentials& unary, const PixelFeatures& feats, const CrfParams& params,
                               const IterationObserver& observer = {});

/// Unary sum plus k(f_i, f_j) over unordered pairs with differing labels.
double energy(std::span<const int> labeling, const UnaryPotentials& unary, const PixelFeatures& feats,
              const CrfParams& params);

/// Per-pixel argmax; ties go to the lower label.
std::vector<int> map_labeling(const MarginalField& q);

/// map_labeling reshaped into a mask (label != 0 is foreground).
BinaryMask map_mask(const MarginalField& q, int height, int width);

}  // namespace mscc::crf
