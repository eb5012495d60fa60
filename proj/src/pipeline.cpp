#include "mscc/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "mscc/checkpoint.hpp"

namespace mscc::pipeline {

namespace fs = std::filesystem;

net::NetworkSpec pixel_network(const Config& config) {
  return net::build_architecture(net::parse_architecture(config.arch), {1, config.image_size, config.image_size},
                                 config.width_scale);
}

namespace {

void require_size(const data::ImagePair& p, const Config& config) {
  if (p.image.height != config.image_size || p.image.width != config.image_size) {
    throw ShapeError("image " + p.id + " is " + std::to_string(p.image.height) + "x" + std::to_string(p.image.width) +
                     ", expected " + std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
  }
}

struct Batch {
  Tensor x;
  Tensor y;
};

Batch make_batch(const std::vector<data::ImagePair>& pairs, std::span<const std::size_t> idx) {
  const auto h = static_cast<std::size_t>(pairs[idx[0]].image.height);
  const auto w = static_cast<std::size_t>(pairs[idx[0]].image.width);
  Batch b{Tensor({idx.size(), 1, h, w}), Tensor({idx.size(), 1, h, w})};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& p = pairs[idx[k]];
    std::copy(p.image.data.begin(), p.image.data.end(), b.x.data() + k * h * w);
    for (std::size_t i = 0; i < h * w; ++i) b.y[k * h * w + i] = p.gt.data[i];
  }
  return b;
}

double pixel_accuracy(const Tensor& prob, const Tensor& target) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) hits += ((prob[i] >= 0.5) == (target[i] > 0.5)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(prob.size());
}

}  // namespace

PixelTrainResult train_pixel(const std::vector<data::ImagePair>& train, const std::vector<data::ImagePair>& val,
                             const Config& config, const PixelEpochObserver& observer) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_pixel: no training pairs");
  for (const auto& p : train) require_size(p, config);
  for (const auto& p : val) require_size(p, config);

  PixelTrainResult result{Model(pixel_network(config), config.seed), AdamState{}, {}};
  result.optimizer.config.lr = config.pixel_lr;
  Rng rng(config.seed * 0x2545f4914f6cdd1dULL + 17);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.pixel_batch);

  for (int epoch = 1; epoch <= config.pixel_epochs; ++epoch) {
    shuffle(order, rng);
    PixelEpoch stat{epoch, 0, 0, 0, 0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
      auto b = make_batch(train, idx);
      result.model.zero_grad();
      Var prob = result.model.forward(b.x, ops::Mode::Train);
      Var loss = ops::binary_cross_entropy(prob, b.y);
      const double l = loss->value[0];
      ++batches;
      if (!std::isfinite(l)) {
        throw NonFiniteError("pixel training: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      backward(loss);
      try {
        adam_step(result.model.parameters(), result.optimizer);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("pixel training: epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                             ": " + e.what());
      }
      stat.train_loss += l;
      stat.train_acc += pixel_accuracy(prob->value, b.y);
    }
    stat.train_loss /= static_cast<double>(batches);
    stat.train_acc /= static_cast<double>(batches);

    if (!val.empty()) {
      std::vector<std::size_t> all(val.size());
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t start = 0; start < all.size(); start += batch) {
        std::span<const std::size_t> idx(all.data() + start, std::min(batch, all.size() - start));
        auto b = make_batch(val, idx);
        Var prob = result.model.forward(b.x, ops::Mode::Infer);
        const double weight = static_cast<double>(idx.size()) / static_cast<double>(val.size());
        stat.val_loss += weight * ops::binary_cross_entropy(prob, b.y)->value[0];
        stat.val_acc += weight * pixel_accuracy(prob->value, b.y);
      }
    }
    result.curves.push_back(stat);
    if (observer) observer(stat);
  }
  return result;
}

ProbabilityMap predict(Model& model, const GrayImage& image) {
  Tensor x({1, 1, static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width)}, image.data);
  Var out = model.forward(x, ops::Mode::Infer);
  ProbabilityMap p(image.height, image.width);
  std::copy(out->value.data(), out->value.data() + p.size(), p.data.begin());
  return p;
}

BinaryMask crf_refine(const GrayImage& image, const ProbabilityMap& prob, const Config& config) {
  auto unary = config.crf_soft ? crf::unary_from_probabilities(prob)
                               : crf::unary_from_mask(fusion::binarize(prob, config.threshold), config.crf_confidence);
  auto q = crf::mean_field_infer(unary, crf::PixelFeatures::from_gray(image), config.crf);
  return crf::map_mask(q, image.height, image.width);
}

patch::PatchSet training_patches(const std::vector<data::ImagePair>& pairs, const Config& config) {
  patch::PatchSet all;
  for (const auto& p : pairs)
    all.append(patch::mesh_patches(p.image, &p.gt, config.patch_size, config.patch_criterion, p.id));
  return patch::balanced_training_set(all, config.seed * 0x9e3779b97f4a7c15ULL + 3);
}

BinaryMask patch_mask(Model& classifier, const GrayImage& image, const Config& config) {
  auto set = patch::mesh_patches(image, nullptr, config.patch_size);
  auto labels = patch::classify(classifier, set);
  return patch::reconstruct_mask(labels, image.height, image.width, config.patch_size);
}

StageMasks segment(Model& pixel_model, Model& patch_model, const GrayImage& image, const Config& config, int radius) {
  StageMasks s;
  s.prob = predict(pixel_model, image);
  s.pixel = fusion::binarize(s.prob, config.threshold);
  s.crf = crf_refine(image, s.prob, config);
  s.patch = patch_mask(patch_model, image, config);
  s.filtered = fusion::buffer_filter(s.patch, s.crf, radius);
  s.fused = fusion::combine(s.crf, s.filtered);
  return s;
}

RadiusChoice choose_radius(Model& pixel_model, Model& patch_model, const std::vector<data::ImagePair>& pairs,
                           const Config& config) {
  if (pairs.empty()) throw std::invalid_argument("choose_radius: no pairs to sweep");
  std::vector<std::vector<fusion::SweepRow>> sweeps;
  for (const auto& p : pairs) {
    auto prob = predict(pixel_model, p.image);
    auto crf_mask = crf_refine(p.image, prob, config);
    auto pm = patch_mask(patch_model, p.image, config);
    sweeps.push_back(fusion::sweep_buffer(pm, crf_mask, p.gt, config.sweep_radii));
  }
  RadiusChoice c;
  c.table = fusion::average_sweeps(sweeps);
  c.radius = fusion::select_buffer(c.table);
  return c;
}

void write_pixel_curves(const fs::path& path, const std::vector<PixelEpoch>& curves) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const auto& e : curves) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.train_acc, e.val_loss,
                  e.val_acc);
    out << buf;
  }
}

void write_patch_curves(const fs::path& path, const std::vector<patch::PatchEpoch>& curves) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "epoch,loss,accuracy\n";
  char buf[96];
  for (const auto& e : curves) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", e.epoch, e.loss, e.accuracy);
    out << buf;
  }
}

InferenceResult infer_and_fuse(Model& pixel_model, Model& patch_model, const std::vector<data::ImagePair>& pairs,
                               const Config& config, int radius, const fs::path& out_dir) {
  config.validate();
  if (pairs.empty()) throw std::invalid_argument("infer_and_fuse: no images");
  std::vector<metrics::MetricsRow> rows;
  std::map<std::string, std::string> class_of;
  std::vector<metrics::Metrics> pixel_m, crf_m;
  for (const auto& p : pairs) {
    require_size(p, config);
    auto s = segment(pixel_model, patch_model, p.image, config, radius);
    const std::string stem = p.id.substr(p.id.find('/') + 1);
    const fs::path mask_dir = out_dir / "masks" / p.class_name;
    const fs::path overlay_dir = out_dir / "overlays" / p.class_name;
    fs::create_directories(mask_dir);
    fs::create_directories(overlay_dir);
    write_pgm16(mask_dir / (stem + "_prob.pgm"), s.prob);
    write_pgm8(mask_dir / (stem + "_pixel.pgm"), s.pixel);
    write_pgm8(mask_dir / (stem + "_crf.pgm"), s.crf);
    write_pgm8(mask_dir / (stem + "_patch.pgm"), s.patch);
    write_pgm8(mask_dir / (stem + "_fused.pgm"), s.fused);
    write_png(overlay_dir / (stem + ".png"), fusion::render_overlay(p.image, s.crf, s.filtered, &p.gt));

    rows.push_back({p.id, metrics::evaluate(s.fused, p.gt)});
    class_of[p.id] = p.class_name;
    pixel_m.push_back(metrics::evaluate(s.pixel, p.gt));
    crf_m.push_back(metrics::evaluate(s.crf, p.gt));
  }
  InferenceResult r;
  r.images = pairs.size();
  r.fused = metrics::aggregate(std::move(rows), class_of);
  r.stages = {metrics::mean(pixel_m), metrics::mean(crf_m), r.fused.overall.mean};
  metrics::write_per_image_csv(out_dir / "metrics_per_image.csv", r.fused);
  metrics::write_per_class_csv(out_dir / "metrics_per_class.csv", r.fused);
  metrics::write_overall_csv(out_dir / "metrics_overall.csv", r.fused);

  std::ofstream stages(out_dir / "metrics_stages.csv");
  stages << "stage,dice,jaccard,recall,accuracy,voe\n";
  for (const auto& [name, m] : {std::pair{"pixel", r.stages.pixel}, {"crf", r.stages.crf}, {"fused", r.stages.fused}}) {
    stages << name << ',' << metrics::format_value(m.dice) << ',' << metrics::format_value(m.jaccard) << ','
           << metrics::format_value(m.recall) << ',' << metrics::format_value(m.accuracy) << ','
           << metrics::format_value(m.voe) << '\n';
  }
  return r;
}

InferenceResult run(const data::Manifest& manifest, const Config& config, const fs::path& out_dir, const Logger& log) {
  config.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  fs::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.txt");
    cfg << config.to_text();
  }
  const auto train = data::load_pairs(manifest, data::Split::Train);
  const auto val = data::load_pairs(manifest, data::Split::Val);
  const auto test = data::load_pairs(manifest, data::Split::Test);
  if (train.empty() || test.empty()) throw std::invalid_argument("run: manifest needs train and test samples");
  say("pairs: train " + std::to_string(train.size()) + ", val " + std::to_string(val.size()) + ", test " +
      std::to_string(test.size()));

  const auto augmented = data::augment_images(train);
  auto pixel = train_pixel(augmented, val, config, [&](const PixelEpoch& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "pixel epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f", e.epoch,
                  e.train_loss, e.train_acc, e.val_loss, e.val_acc);
    say(buf);
  });
  write_checkpoint(out_dir / "pixel.ckpt", pixel.model.to_checkpoint(&pixel.optimizer, {{"role", "pixel"}}));
  write_pixel_curves(out_dir / "pixel_curves.csv", pixel.curves);

  auto patches = training_patches(train, config);
  say("patch training set: " + std::to_string(patches.size()) + " patches");
  auto patch_run = patch::train_patch_classifier(
      patches, {config.patch_epochs, config.patch_lr, config.patch_batch, config.seed},
      [&](const patch::PatchEpoch& e) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "patch epoch %d: loss %.4f acc %.4f", e.epoch, e.loss, e.accuracy);
        say(buf);
      });
  write_checkpoint(out_dir / "patch.ckpt", patch_run.model.to_checkpoint(&patch_run.optimizer, {{"role", "patch"}}));
  write_patch_curves(out_dir / "patch_curves.csv", patch_run.curves);

  int radius = config.buffer_radius;
  if (!val.empty()) {
    auto choice = choose_radius(pixel.model, patch_run.model, val, config);
    fusion::write_sweep_csv(out_dir / "sweep.csv", choice.table);
    say("validation sweep crossing at radius " + std::to_string(choice.radius));
    if (config.select_radius) radius = choice.radius;
  }
  say("buffer radius " + std::to_string(radius));
  return infer_and_fuse(pixel.model, patch_run.model, test, config, radius, out_dir);
}

}  // namespace mscc::pipeline
