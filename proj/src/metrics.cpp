#include "mscc/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mscc::metrics {

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_size(gt)) {
    throw std::invalid_argument("metrics: prediction is " + std::to_string(pred.height) + "x" +
                                std::to_string(pred.width) + " but ground truth is " + std::to_string(gt.height) +
                                "x" + std::to_string(gt.width));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred.data[i], g = gt.data[i];
    if (p > 1 || g > 1) throw std::invalid_argument("metrics: masks must hold only 0 and 1");
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

Metrics compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("metrics: empty masks");
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
             tn = static_cast<double>(c.tn);
  Metrics m;
  const double uni = tp + fp + fn;
  m.dice = uni == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
  m.jaccard = uni == 0 ? 1.0 : tp / uni;
  m.recall = tp + fn == 0 ? 1.0 : tp / (tp + fn);
  m.accuracy = (tp + tn) / static_cast<double>(c.total());
  m.voe = 1.0 - m.jaccard;
  return m;
}

Metrics mean(const std::vector<Metrics>& values) {
  Metrics m;
  if (values.empty()) return m;
  for (const auto& v : values) {
    m.dice += v.dice;
    m.jaccard += v.jaccard;
    m.recall += v.recall;
    m.accuracy += v.accuracy;
    m.voe += v.voe;
  }
  const double n = static_cast<double>(values.size());
  m.dice /= n;
  m.jaccard /= n;
  m.recall /= n;
  m.accuracy /= n;
  m.voe /= n;
  return m;
}

MetricsReport aggregate(std::vector<MetricsRow> rows, const std::map<std::string, std::string>& class_of) {
  if (rows.empty()) throw std::invalid_argument("aggregate: no rows");
  MetricsReport report;
  std::map<std::string, std::vector<Metrics>> by_class;
  std::vector<Metrics> all;
  for (const auto& row : rows) {
    auto it = class_of.find(row.image_id);
    if (it == class_of.end()) throw std::invalid_argument("aggregate: no class for image '" + row.image_id + "'");
    report.class_of[row.image_id] = it->second;
    by_class[it->second].push_back(row.values);
    all.push_back(row.values);
  }
  for (const auto& [name, values] : by_class) report.classes.push_back({name, values.size(), mean(values)});
  report.overall = {"overall", all.size(), mean(all)};
  report.rows = std::move(rows);
  return report;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void put(std::ostream& out, const Metrics& m) {
  out << format_value(m.dice) << ',' << format_value(m.jaccard) << ',' << format_value(m.recall) << ','
      << format_value(m.accuracy) << ',' << format_value(m.voe) << '\n';
}

}  // namespace

void write_per_image_csv(const std::filesystem::path& path, const MetricsReport& report) {
  auto out = open_csv(path);
  out << "image_id,class,dice,jaccard,recall,accuracy,voe\n";
  for (const auto& row : report.rows) {
    out << row.image_id << ',' << report.class_of.at(row.image_id) << ',';
    put(out, row.values);
  }
}

void write_per_class_csv(const std::filesystem::path& path, const MetricsReport& report) {
  auto out = open_csv(path);
  out << "class,images,dice,jaccard,recall,accuracy,voe\n";
  for (const auto& c : report.classes) {
    out << c.class_name << ',' << c.images << ',';
    put(out, c.mean);
  }
}

void write_overall_csv(const std::filesystem::path& path, const MetricsReport& report) {
  auto out = open_csv(path);
  out << "images,dice,jaccard,recall,accuracy,voe\n" << report.overall.images << ',';
  put(out, report.overall.mean);
}

}  // namespace mscc::metrics
