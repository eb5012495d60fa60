#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mscc/densecrf.hpp"

namespace mscc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Run settings. Defaults are the desk-scale preset (64 px images, mU-Net
/// at half width, weak CRF kernels tuned on synthetic validation data);
/// paper_scale() restores 256 px at full width and the CrfParams defaults.
struct Config {
  int image_size = 64;
  int patch_size = 8;
  std::string arch = "b3";
  double width_scale = 0.5;

  double pixel_lr = 1.5e-4;
  int pixel_epochs = 50;
  int pixel_batch = 4;

  double patch_lr = 1.0e-4;
  int patch_epochs = 15;
  int patch_batch = 32;
  double patch_criterion = 0.5;

  double threshold = 0.5;
  crf::CrfParams crf = desk_crf();
  /// The CRF reads the network probabilities; with crf_soft off it reads
  /// the binarized output as p in {1-c, c} instead.
  double crf_confidence = 0.9;
  bool crf_soft = true;

  int buffer_radius = 26;
  /// Pick the radius from a validation sweep instead of buffer_radius.
  bool select_radius = false;
  std::vector<int> sweep_radii = {2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30, 32, 34, 36, 38, 40};

  std::uint64_t seed = 1;

  static Config paper_scale();
  static crf::CrfParams desk_crf();

  /// Applies one `key = value` setting; unknown keys and bad values throw.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Round-trippable `key = value` text.
  std::string to_text() const;
};

/// Reads `key = value` lines ('#' starts a comment) on top of `base`, then
/// validates the result.
Config parse_config(const std::string& text, Config base = {});
Config load_config(const std::filesystem::path& path, Config base = {});

/// MSCC_SEED from the environment, if set and numeric.
std::optional<std::uint64_t> seed_from_env();

}  // namespace mscc
