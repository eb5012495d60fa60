#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mscc/image.hpp"

namespace mscc::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  double dice = 0.0;
  double jaccard = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double voe = 0.0;
};

/// Throws on size mismatch or any value other than 0/1.
ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt);

/// Dice 2TP/(2TP+FP+FN), Jaccard TP/(TP+FP+FN), Recall TP/(TP+FN),
/// Accuracy (TP+TN)/total, VOE 1 - Jaccard. With no foreground in either
/// mask, Dice = Jaccard = 1; with no ground-truth foreground, Recall = 1.
Metrics compute_metrics(const ConfusionCounts& counts);

inline Metrics evaluate(const BinaryMask& pred, const BinaryMask& gt) {
  return compute_metrics(confusion_counts(pred, gt));
}

struct MetricsRow {
  std::string image_id;
  Metrics values;
};

struct ClassSummary {
  std::string class_name;
  std::size_t images = 0;
  Metrics mean;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::map<std::string, std::string> class_of;
  std::vector<ClassSummary> classes;  // sorted by class name
  ClassSummary overall;               // class_name "overall"
};

/// Unweighted means per class and over all rows. Every row's image must
/// appear in `class_of`.
MetricsReport aggregate(std::vector<MetricsRow> rows, const std::map<std::string, std::string>& class_of);

Metrics mean(const std::vector<Metrics>& values);

/// Fixed 4-decimal rendering used by every metrics CSV.
std::string format_value(double v);

/// metrics_per_image.csv: image_id,class,dice,jaccard,recall,accuracy,voe
void write_per_image_csv(const std::filesystem::path& path, const MetricsReport& report);
/// metrics_per_class.csv: class,images,dice,jaccard,recall,accuracy,voe
void write_per_class_csv(const std::filesystem::path& path, const MetricsReport& report);
/// metrics_overall.csv: images,dice,jaccard,recall,accuracy,voe
void write_overall_csv(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace mscc::metrics
