#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mscc/image.hpp"

namespace mscc::data {

enum class Split { Unassigned, Train, Val, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Sample {
  std::string class_name;
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path gt;
  Split split = Split::Unassigned;

  /// "<class>/<stem>", unique within a manifest.
  std::string id() const { return class_name + "/" + stem; }
};

/// Samples ordered by (class, stem).
struct Manifest {
  std::vector<Sample> samples;

  std::vector<std::string> classes() const;
  std::size_t count(Split split) const;
  std::vector<Sample> select(Split split) const;
};

/// CSV `class,stem,image,gt,split`. Relative paths are written relative to
/// the manifest's directory and resolved against it when read.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Carries one line per problem found while scanning a dataset.
class IngestError : public std::runtime_error {
 public:
  explicit IngestError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Scans `root/<class>/{images,gt}` (or `root/class/<class>/...`), pairs
/// files by stem, and writes normalized copies to `out_dir` (bilinear,
/// grayscale images; nearest-neighbour GT re-binarized at 0.5), plus
/// `out_dir/manifest.csv`. All problems are collected before throwing.
Manifest ingest(const std::filesystem::path& root, const std::filesystem::path& out_dir, int image_size);

/// Per class (in stem order): seeded shuffle, ceil(n/4) train, ceil(n/4)
/// val, rest test. Classes with fewer than 4 samples are rejected.
void split_1_1_2(Manifest& manifest, std::uint64_t seed);

struct ImagePair {
  std::string id;
  std::string class_name;
  GrayImage image;
  BinaryMask gt;
};

ImagePair load_pair(const Sample& sample);
std::vector<ImagePair> load_pairs(const Manifest& manifest, Split split);

/// Eight dihedral variants per pair; ids get a "#k" suffix.
std::vector<ImagePair> augment_images(const std::vector<ImagePair>& pairs);

struct SynthOptions {
  int classes = 3;
  int per_class = 20;
  int size = 64;
  double min_area = 0.05;
  double max_area = 0.60;
  double noise = 0.06;
  double blur_sigma = 0.8;
  std::uint64_t seed = 1;
};

/// Renders one synthetic image/GT pair. Family (class % 3): 0 ellipses,
/// 1 multi-lobe blobs, 2 thick curved filaments.
ImagePair synth_pair(int class_index, int index, const SynthOptions& options);

/// Writes `out_dir/<class>/{images,gt}/<stem>.png` and the manifest.
Manifest synth_dataset(const std::filesystem::path& out_dir, const SynthOptions& options);

}  // namespace mscc::data
