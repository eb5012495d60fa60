#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mscc/config.hpp"
#include "mscc/dataset.hpp"
#include "mscc/densecrf.hpp"
#include "mscc/fusion.hpp"
#include "mscc/metrics.hpp"
#include "mscc/netspec.hpp"
#include "mscc/pipeline.hpp"

using namespace mscc;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

Config resolve_config(const Globals& g) {
  Config cfg;
  if (auto env = seed_from_env()) cfg.seed = *env;
  if (!g.config_path.empty()) cfg = load_config(g.config_path, cfg);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_given) cfg.seed = g.seed;
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

data::Split split_arg(const std::string& s) { return data::parse_split(s); }

std::vector<data::ImagePair> pairs_of(const std::string& manifest, const std::string& split) {
  auto pairs = data::load_pairs(data::read_manifest(manifest), split_arg(split));
  if (pairs.empty()) throw std::invalid_argument("no '" + split + "' samples in " + manifest);
  return pairs;
}

Model load_model(const std::string& path) { return Model::from_checkpoint(read_checkpoint(path)); }

bool is_binary(const ProbabilityMap& p) {
  for (double v : p.data)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

void print_metrics(const metrics::Metrics& m) {
  std::printf("dice %s jaccard %s recall %s accuracy %s voe %s\n", metrics::format_value(m.dice).c_str(),
              metrics::format_value(m.jaccard).c_str(), metrics::format_value(m.recall).c_str(),
              metrics::format_value(m.accuracy).c_str(), metrics::format_value(m.voe).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale CNN-CRF segmentation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override one config key (key=value), repeatable");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_given = true; }, "seed (falls back to MSCC_SEED)");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic image/GT dataset");
  data::SynthOptions so;
  std::string synth_out;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--classes", so.classes);
  synth->add_option("--per-class", so.per_class);
  synth->add_option("--size", so.size);
  synth->add_option("--noise", so.noise);
  synth->callback([&] {
    so.seed = resolve_config(g).seed;
    auto m = data::synth_dataset(synth_out, so);
    std::printf("wrote %zu pairs to %s\n", m.samples.size(), synth_out.c_str());
  });

  // ingest
  auto* ingest = app.add_subcommand("ingest", "normalize a class/<name>/{images,gt} tree");
  std::string ingest_root, ingest_out;
  int ingest_size = 0;
  ingest->add_option("--root", ingest_root)->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", ingest_out)->required();
  ingest->add_option("--size", ingest_size, "defaults to image_size");
  ingest->callback([&] {
    const int size = ingest_size > 0 ? ingest_size : resolve_config(g).image_size;
    try {
      auto m = data::ingest(ingest_root, ingest_out, size);
      std::printf("ingested %zu pairs in %zu classes\n", m.samples.size(), m.classes().size());
    } catch (const data::IngestError& e) {
      for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
      throw;
    }
  });

  // split
  auto* split = app.add_subcommand("split", "assign train/val/test per class (1:1:2)");
  std::string split_manifest, split_out;
  split->add_option("--manifest", split_manifest)->required()->check(CLI::ExistingFile);
  split->add_option("--out", split_out, "defaults to rewriting --manifest");
  split->callback([&] {
    auto m = data::read_manifest(split_manifest);
    data::split_1_1_2(m, resolve_config(g).seed);
    data::write_manifest(split_out.empty() ? split_manifest : split_out, m);
    std::printf("train %zu val %zu test %zu\n", m.count(data::Split::Train), m.count(data::Split::Val),
                m.count(data::Split::Test));
  });

  // augment
  auto* augment = app.add_subcommand("augment", "write the x8 dihedral variants of the training split");
  std::string aug_manifest, aug_out;
  augment->add_option("--manifest", aug_manifest)->required()->check(CLI::ExistingFile);
  augment->add_option("--out", aug_out)->required();
  augment->callback([&] {
    auto pairs = data::augment_images(pairs_of(aug_manifest, "train"));
    data::Manifest out;
    for (const auto& p : pairs) {
      std::string stem = p.id.substr(p.id.find('/') + 1);
      for (auto& ch : stem)
        if (ch == '#') ch = '_';
      const fs::path img = fs::path(aug_out) / p.class_name / "images" / (stem + ".png");
      const fs::path gt = fs::path(aug_out) / p.class_name / "gt" / (stem + ".png");
      fs::create_directories(img.parent_path());
      fs::create_directories(gt.parent_path());
      write_png(img, p.image);
      write_png(gt, p.gt);
      out.samples.push_back({p.class_name, stem, img, gt, data::Split::Train});
    }
    data::write_manifest(fs::path(aug_out) / "manifest.csv", out);
    std::printf("wrote %zu augmented pairs\n", pairs.size());
  });

  // train-pixel
  auto* train_px = app.add_subcommand("train-pixel", "train the pixel-level network");
  std::string tp_manifest, tp_out, tp_arch;
  train_px->add_option("--manifest", tp_manifest)->required()->check(CLI::ExistingFile);
  train_px->add_option("--out", tp_out)->required();
  train_px->add_option("--arch", tp_arch, "unet, b1, b2 or b3")->check(CLI::IsMember({"unet", "b1", "b2", "b3"}));
  train_px->callback([&] {
    auto cfg = resolve_config(g);
    if (!tp_arch.empty()) cfg.arch = tp_arch;
    auto m = data::read_manifest(tp_manifest);
    auto train = data::augment_images(data::load_pairs(m, data::Split::Train));
    auto val = data::load_pairs(m, data::Split::Val);
    auto r = pipeline::train_pixel(train, val, cfg, [](const pipeline::PixelEpoch& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f", e.epoch,
                    e.train_loss, e.train_acc, e.val_loss, e.val_acc);
      log_line(buf);
    });
    fs::create_directories(tp_out);
    write_checkpoint(fs::path(tp_out) / "pixel.ckpt", r.model.to_checkpoint(&r.optimizer, {{"role", "pixel"}}));
    pipeline::write_pixel_curves(fs::path(tp_out) / "pixel_curves.csv", r.curves);
  });

  // train-patch
  auto* train_pa = app.add_subcommand("train-patch", "build the balanced patch set and train the classifier");
  std::string pa_manifest, pa_cache, pa_out;
  train_pa->add_option("--manifest", pa_manifest, "build patches from the training split");
  train_pa->add_option("--cache", pa_cache, "patch cache to read (or write, with --manifest)");
  train_pa->add_option("--out", pa_out)->required();
  train_pa->callback([&] {
    auto cfg = resolve_config(g);
    patch::PatchSet set;
    if (!pa_manifest.empty()) {
      set = pipeline::training_patches(pairs_of(pa_manifest, "train"), cfg);
      if (!pa_cache.empty()) patch::write_patch_cache(pa_cache, set);
    } else if (!pa_cache.empty()) {
      set = patch::read_patch_cache(pa_cache);
    } else {
      throw CLI::ValidationError("train-patch", "needs --manifest or --cache");
    }
    log_line("patches: " + std::to_string(set.size()));
    auto r = patch::train_patch_classifier(set, {cfg.patch_epochs, cfg.patch_lr, cfg.patch_batch, cfg.seed},
                                           [](const patch::PatchEpoch& e) {
                                             char buf[96];
                                             std::snprintf(buf, sizeof buf, "epoch %d: loss %.4f acc %.4f", e.epoch,
                                                           e.loss, e.accuracy);
                                             log_line(buf);
                                           });
    fs::create_directories(pa_out);
    write_checkpoint(fs::path(pa_out) / "patch.ckpt", r.model.to_checkpoint(&r.optimizer, {{"role", "patch"}}));
    pipeline::write_patch_curves(fs::path(pa_out) / "patch_curves.csv", r.curves);
  });

  // crf
  auto* crf_cmd = app.add_subcommand("crf", "dense CRF on a probability map or binary mask");
  std::string crf_image, crf_input, crf_out, crf_energy;
  std::optional<double> w1, w2, sa, sb, sg, conf;
  std::optional<int> iters;
  bool crf_binary = false;
  crf_cmd->add_option("--image", crf_image, "source grayscale image")->required()->check(CLI::ExistingFile);
  crf_cmd->add_option("--input", crf_input, "16-bit probability PGM or 8-bit mask")->required()->check(CLI::ExistingFile);
  crf_cmd->add_option("--out", crf_out, "MAP mask (PGM)")->required();
  crf_cmd->add_option("--energy", crf_energy, "per-iteration energy CSV");
  crf_cmd->add_option("--w1", w1);
  crf_cmd->add_option("--w2", w2);
  crf_cmd->add_option("--sa", sa);
  crf_cmd->add_option("--sb", sb);
  crf_cmd->add_option("--sg", sg);
  crf_cmd->add_option("--iters", iters);
  crf_cmd->add_option("--confidence", conf);
  crf_cmd->add_flag("--binary", crf_binary, "treat the input as a mask even if it is not 0/1 valued");
  crf_cmd->callback([&] {
    auto cfg = resolve_config(g);
    auto& p = cfg.crf;
    if (w1) p.w1 = *w1;
    if (w2) p.w2 = *w2;
    if (sa) p.sigma_alpha = *sa;
    if (sb) p.sigma_beta = *sb;
    if (sg) p.sigma_gamma = *sg;
    if (iters) p.num_iterations = *iters;
    if (conf) cfg.crf_confidence = *conf;
    cfg.validate();
    auto image = read_gray(crf_image);
    auto input = read_probability(crf_input);
    if (!image.same_size(input)) throw std::invalid_argument("crf: image and input differ in size");
    auto unary = (crf_binary || is_binary(input))
                     ? crf::unary_from_mask(fusion::binarize(input, cfg.threshold), cfg.crf_confidence)
                     : crf::unary_from_probabilities(input);
    auto feats = crf::PixelFeatures::from_gray(image);
    std::ofstream energy_csv;
    if (!crf_energy.empty()) {
      energy_csv.open(crf_energy);
      energy_csv << "iteration,energy\n";
    }
    auto q = crf::mean_field_infer(unary, feats, p, [&](int it, const crf::MarginalField& field) {
      if (!energy_csv.is_open()) return;
      auto lab = crf::map_labeling(field);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%d,%.6f\n", it, crf::energy(lab, unary, feats, p));
      energy_csv << buf;
    });
    write_pgm8(crf_out, crf::map_mask(q, image.height, image.width));
  });

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "buffer-filter a patch mask and merge it with a CRF mask");
  std::string fu_pixel, fu_patch, fu_out, fu_filtered;
  std::optional<int> fu_radius;
  fuse_cmd->add_option("--pixel", fu_pixel, "CRF mask")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--patch", fu_patch, "patch-level mask")->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--radius", fu_radius, "defaults to buffer_radius");
  fuse_cmd->add_option("--out", fu_out)->required();
  fuse_cmd->add_option("--filtered", fu_filtered, "also write the buffer-filtered patch mask");
  fuse_cmd->callback([&] {
    const int radius = fu_radius ? *fu_radius : resolve_config(g).buffer_radius;
    auto px = read_mask(fu_pixel), pa = read_mask(fu_patch);
    auto filtered = fusion::buffer_filter(pa, px, radius);
    if (!fu_filtered.empty()) write_pgm8(fu_filtered, filtered);
    write_pgm8(fu_out, fusion::combine(px, filtered));
  });

  // infer
  auto* infer = app.add_subcommand("infer", "segment a split with trained networks and write all artifacts");
  std::string in_manifest, in_pixel, in_patch, in_out, in_split = "test";
  std::optional<int> in_radius;
  infer->add_option("--manifest", in_manifest)->required()->check(CLI::ExistingFile);
  infer->add_option("--pixel-ckpt", in_pixel)->required()->check(CLI::ExistingFile);
  infer->add_option("--patch-ckpt", in_patch)->required()->check(CLI::ExistingFile);
  infer->add_option("--out", in_out)->required();
  infer->add_option("--split", in_split);
  infer->add_option("--radius", in_radius, "defaults to buffer_radius");
  infer->callback([&] {
    auto cfg = resolve_config(g);
    auto px = load_model(in_pixel), pa = load_model(in_patch);
    auto r = pipeline::infer_and_fuse(px, pa, pairs_of(in_manifest, in_split), cfg,
                                      in_radius ? *in_radius : cfg.buffer_radius, in_out);
    std::printf("%zu images; fused ", r.images);
    print_metrics(r.fused.overall.mean);
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score predicted masks against ground truth");
  std::string ev_pred, ev_gt, ev_manifest, ev_masks, ev_stage = "fused", ev_split = "test", ev_out;
  evaluate->add_option("--pred", ev_pred, "single predicted mask");
  evaluate->add_option("--gt", ev_gt, "single ground-truth mask");
  evaluate->add_option("--manifest", ev_manifest, "score a whole split");
  evaluate->add_option("--masks", ev_masks, "masks/ directory written by infer");
  evaluate->add_option("--stage", ev_stage, "pixel, crf, patch or fused");
  evaluate->add_option("--split", ev_split);
  evaluate->add_option("--out", ev_out, "directory for the metrics CSVs");
  evaluate->callback([&] {
    if (!ev_pred.empty() && !ev_gt.empty()) {
      print_metrics(metrics::evaluate(read_mask(ev_pred), read_mask(ev_gt)));
      return;
    }
    if (ev_manifest.empty() || ev_masks.empty()) throw CLI::ValidationError("evaluate", "needs --pred/--gt or --manifest/--masks");
    std::vector<metrics::MetricsRow> rows;
    std::map<std::string, std::string> class_of;
    for (const auto& s : data::read_manifest(ev_manifest).select(split_arg(ev_split))) {
      auto pred = read_mask(fs::path(ev_masks) / s.class_name / (s.stem + "_" + ev_stage + ".pgm"));
      rows.push_back({s.id(), metrics::evaluate(pred, data::load_pair(s).gt)});
      class_of[s.id()] = s.class_name;
    }
    auto rep = metrics::aggregate(rows, class_of);
    if (!ev_out.empty()) {
      fs::create_directories(ev_out);
      metrics::write_per_image_csv(fs::path(ev_out) / "metrics_per_image.csv", rep);
      metrics::write_per_class_csv(fs::path(ev_out) / "metrics_per_class.csv", rep);
      metrics::write_overall_csv(fs::path(ev_out) / "metrics_overall.csv", rep);
    }
    for (const auto& c : rep.classes) {
      std::printf("%s (%zu): ", c.class_name.c_str(), c.images);
      print_metrics(c.mean);
    }
    std::printf("overall (%zu): ", rep.overall.images);
    print_metrics(rep.overall.mean);
  });

  // sweep-buffer
  auto* sweep = app.add_subcommand("sweep-buffer", "mean fusion metrics over the radius grid and the selected radius");
  std::string sw_manifest, sw_pixel, sw_patch, sw_out, sw_split = "val";
  sweep->add_option("--manifest", sw_manifest)->required()->check(CLI::ExistingFile);
  sweep->add_option("--pixel-ckpt", sw_pixel)->required()->check(CLI::ExistingFile);
  sweep->add_option("--patch-ckpt", sw_patch)->required()->check(CLI::ExistingFile);
  sweep->add_option("--split", sw_split);
  sweep->add_option("--out", sw_out, "sweep CSV")->required();
  sweep->callback([&] {
    auto cfg = resolve_config(g);
    auto px = load_model(sw_pixel), pa = load_model(sw_patch);
    auto choice = pipeline::choose_radius(px, pa, pairs_of(sw_manifest, sw_split), cfg);
    fusion::write_sweep_csv(sw_out, choice.table);
    std::printf("selected radius %d\n", choice.radius);
  });

  // render
  auto* render = app.add_subcommand("render", "color overlay of pixel and patch masks");
  std::string re_image, re_pixel, re_patch, re_gt, re_out;
  render->add_option("--image", re_image)->required()->check(CLI::ExistingFile);
  render->add_option("--pixel", re_pixel)->required()->check(CLI::ExistingFile);
  render->add_option("--patch", re_patch)->required()->check(CLI::ExistingFile);
  render->add_option("--gt", re_gt, "draw the ground-truth outline")->check(CLI::ExistingFile);
  render->add_option("--out", re_out, "PNG")->required();
  render->callback([&] {
    std::optional<BinaryMask> gt;
    if (!re_gt.empty()) gt = read_mask(re_gt);
    write_png(re_out, fusion::render_overlay(read_gray(re_image), read_mask(re_pixel), read_mask(re_patch),
                                             gt ? &*gt : nullptr));
  });

  // params
  auto* params = app.add_subcommand("params", "per-layer parameter counts of an architecture");
  std::string pr_arch = "b3";
  std::optional<int> pr_size;
  std::optional<double> pr_scale;
  bool pr_layers = false, pr_spec = false;
  params->add_option("--arch", pr_arch, "unet, b1, b2, b3 or patch")
      ->check(CLI::IsMember({"unet", "b1", "b2", "b3", "patch"}));
  params->add_option("--size", pr_size, "input side length (default image_size)");
  params->add_option("--width-scale", pr_scale, "default width_scale");
  params->add_flag("--layers", pr_layers, "list every layer");
  params->add_flag("--spec", pr_spec, "print the serialized network instead");
  params->callback([&] {
    const auto cfg = resolve_config(g);
    const int side = pr_size.value_or(cfg.image_size);
    auto spec = pr_arch == "patch" ? net::build_patch_classifier(8)
                                   : net::build_architecture(net::parse_architecture(pr_arch), {1, side, side},
                                                             pr_scale.value_or(cfg.width_scale));
    if (pr_spec) {
      std::cout << net::serialize(spec);
      return;
    }
    auto count = net::count_parameters(spec);
    if (pr_layers) {
      for (const auto& l : count.layers)
        if (l.trainable + l.non_trainable > 0)
          std::printf("%-28s %-9s %10zu %8zu\n", l.name.c_str(), std::string(net::to_string(l.kind)).c_str(),
                      l.trainable, l.non_trainable);
    }
    std::printf("%s trainable %zu non_trainable %zu total %zu\n", spec.name.c_str(), count.trainable,
                count.non_trainable, count.total());
  });

  // run
  auto* run = app.add_subcommand("run", "train both networks, pick the radius, segment the test split");
  std::string ru_manifest, ru_out;
  run->add_option("--manifest", ru_manifest, "split manifest")->required()->check(CLI::ExistingFile);
  run->add_option("--out", ru_out)->required();
  run->callback([&] {
    auto cfg = resolve_config(g);
    auto m = data::read_manifest(ru_manifest);
    if (m.count(data::Split::Unassigned) > 0) data::split_1_1_2(m, cfg.seed);
    auto r = pipeline::run(m, cfg, ru_out, log_line);
    std::printf("pixel ");
    print_metrics(r.stages.pixel);
    std::printf("crf   ");
    print_metrics(r.stages.crf);
    std::printf("fused ");
    print_metrics(r.stages.fused);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
