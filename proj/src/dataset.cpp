#include "mscc/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "mscc/tensor.hpp"

namespace mscc::data {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "none";
  }
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  if (text == "none" || text.empty()) return Split::Unassigned;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

std::vector<std::string> Manifest::classes() const {
  std::set<std::string> names;
  for (const auto& s : samples) names.insert(s.class_name);
  return {names.begin(), names.end()};
}

std::size_t Manifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.split == split; }));
}

std::vector<Sample> Manifest::select(Split split) const {
  std::vector<Sample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out), [&](const Sample& s) { return s.split == split; });
  return out;
}

namespace {

void sort_samples(std::vector<Sample>& samples) {
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    return std::tie(a.class_name, a.stem) < std::tie(b.class_name, b.stem);
  });
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (p.is_relative()) return p.generic_string();
  auto rel = p.lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..") return p.generic_string();
  return rel.generic_string();
}

fs::path absolute_dir(const fs::path& file) {
  return fs::absolute(file).lexically_normal().parent_path();
}

}  // namespace

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const auto base = absolute_dir(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "class,stem,image,gt,split\n";
  for (const auto& s : manifest.samples) {
    const auto image = relative_to(fs::absolute(s.image).lexically_normal(), base);
    const auto gt = relative_to(fs::absolute(s.gt).lexically_normal(), base);
    for (const auto* field : {&s.class_name, &s.stem, &image, &gt})
      if (field->find_first_of(",\n") != std::string::npos) {
        throw std::invalid_argument("manifest: field '" + *field + "' contains a separator");
      }
    out << s.class_name << ',' << s.stem << ',' << image << ',' << gt << ',' << to_string(s.split) << '\n';
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = absolute_dir(path);
  std::string line;
  if (!std::getline(in, line) || line != "class,stem,image,gt,split") {
    throw std::runtime_error("manifest " + path.string() + ": bad header");
  }
  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream rec(line);
    std::string item;
    while (std::getline(rec, item, ',')) f.push_back(item);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw std::runtime_error("manifest " + path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    Sample s{f[0], f[1], fs::path(f[2]), fs::path(f[3]), parse_split(f[4])};
    if (s.image.is_relative()) s.image = base / s.image;
    if (s.gt.is_relative()) s.gt = base / s.gt;
    m.samples.push_back(std::move(s));
  }
  sort_samples(m.samples);
  return m;
}

IngestError::IngestError(std::vector<std::string> problems)
    : std::runtime_error([&] {
        std::string msg = "ingest found " + std::to_string(problems.size()) + " problem(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

std::map<std::string, fs::path> files_by_stem(const fs::path& dir, const std::string& label,
                                              std::vector<std::string>& problems) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) {
    problems.push_back(label + ": missing directory " + dir.string());
    return out;
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_image_file(e.path())) continue;
    auto stem = e.path().stem().string();
    if (!out.emplace(stem, e.path()).second) problems.push_back(label + ": duplicate stem '" + stem + "'");
  }
  return out;
}

}  // namespace

Manifest ingest(const fs::path& root, const fs::path& out_dir, int image_size) {
  if (image_size <= 0) throw std::invalid_argument("ingest: image size must be positive");
  const fs::path base = fs::is_directory(root / "class") ? root / "class" : root;
  if (!fs::is_directory(base)) throw IngestError({"dataset root " + root.string() + " is not a directory"});

  std::vector<std::string> problems;
  std::vector<std::string> class_names;
  for (const auto& e : fs::directory_iterator(base))
    if (e.is_directory()) class_names.push_back(e.path().filename().string());
  std::sort(class_names.begin(), class_names.end());
  if (class_names.empty()) problems.push_back("no class directories under " + base.string());

  struct Pending {
    std::string class_name, stem;
    fs::path image, gt;
  };
  std::vector<Pending> pending;
  for (const auto& name : class_names) {
    auto images = files_by_stem(base / name / "images", name, problems);
    auto gts = files_by_stem(base / name / "gt", name, problems);
    for (const auto& [stem, path] : images) {
      auto it = gts.find(stem);
      if (it == gts.end()) {
        problems.push_back(name + "/" + stem + ": no ground truth with a matching stem");
      } else {
        pending.push_back({name, stem, path, it->second});
      }
    }
    for (const auto& [stem, path] : gts)
      if (!images.count(stem)) problems.push_back(name + "/" + stem + ": ground truth without an image");
  }

  Manifest m;
  for (const auto& p : pending) {
    try {
      auto image = to_gray(read_image(p.image));
      auto gt_gray = to_gray(read_image(p.gt));
      image = resize_bilinear(image, image_size, image_size);
      gt_gray = resize_nearest(gt_gray, image_size, image_size);
      BinaryMask gt(image_size, image_size);
      for (std::size_t i = 0; i < gt.size(); ++i) gt.data[i] = gt_gray.data[i] >= 0.5 ? 1 : 0;

      const fs::path img_out = out_dir / p.class_name / "images" / (p.stem + ".png");
      const fs::path gt_out = out_dir / p.class_name / "gt" / (p.stem + ".png");
      fs::create_directories(img_out.parent_path());
      fs::create_directories(gt_out.parent_path());
      write_png(img_out, image);
      write_png(gt_out, gt);
      m.samples.push_back({p.class_name, p.stem, img_out, gt_out, Split::Unassigned});
    } catch (const ImageIoError& e) {
      problems.push_back(p.class_name + "/" + p.stem + ": " + e.what());
    }
  }
  if (!problems.empty()) throw IngestError(std::move(problems));
  sort_samples(m.samples);
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

void split_1_1_2(Manifest& manifest, std::uint64_t seed) {
  sort_samples(manifest.samples);
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) by_class[manifest.samples[i].class_name].push_back(i);
  std::size_t class_index = 0;
  for (auto& [name, idx] : by_class) {
    if (idx.size() < 4) {
      throw std::invalid_argument("split: class '" + name + "' has " + std::to_string(idx.size()) +
                                  " samples, at least 4 are needed");
    }
    Rng rng(seed * 0x100000001b3ULL + class_index++);
    shuffle(idx, rng);
    const std::size_t quarter = (idx.size() + 3) / 4;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& s = manifest.samples[idx[k]];
      s.split = k < quarter ? Split::Train : (k < 2 * quarter ? Split::Val : Split::Test);
    }
  }
}

ImagePair load_pair(const Sample& sample) {
  ImagePair p{sample.id(), sample.class_name, read_gray(sample.image), read_mask(sample.gt)};
  if (!p.image.same_size(p.gt)) throw ImageIoError("image and ground truth of " + p.id + " differ in size");
  return p;
}

std::vector<ImagePair> load_pairs(const Manifest& manifest, Split split) {
  std::vector<ImagePair> out;
  for (const auto& s : manifest.samples)
    if (s.split == split) out.push_back(load_pair(s));
  return out;
}

std::vector<ImagePair> augment_images(const std::vector<ImagePair>& pairs) {
  std::vector<ImagePair> out;
  out.reserve(pairs.size() * 8);
  for (const auto& p : pairs)
    for (int k = 0; k < 8; ++k)
      out.push_back({p.id + "#" + std::to_string(k), p.class_name, dihedral(p.image, k), dihedral(p.gt, k)});
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Shape = std::function<bool(double, double)>;

Shape ellipse(Rng& rng, double size) {
  const double cx = rng.uniform(0.3, 0.7) * size, cy = rng.uniform(0.3, 0.7) * size;
  const double a = rng.uniform(0.12, 0.34) * size, b = a * rng.uniform(0.45, 1.0);
  const double t = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(t), st = std::sin(t);
  return [=](double x, double y) {
    const double u = (x - cx) * ct + (y - cy) * st, v = -(x - cx) * st + (y - cy) * ct;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  };
}

Shape blob(Rng& rng, double size) {
  const double cx = rng.uniform(0.35, 0.65) * size, cy = rng.uniform(0.35, 0.65) * size;
  const double r0 = rng.uniform(0.14, 0.28) * size;
  std::vector<std::array<double, 3>> harmonics;
  const int n = 2 + static_cast<int>(rng.below(3));
  for (int k = 0; k < n; ++k)
    harmonics.push_back({2.0 + k, rng.uniform(0.08, 0.22), rng.uniform(0.0, 2 * std::numbers::pi)});
  return [=](double x, double y) {
    const double dx = x - cx, dy = y - cy;
    const double th = std::atan2(dy, dx);
    double r = r0;
    for (const auto& h : harmonics) r += r0 * h[1] * std::cos(h[0] * th + h[2]);
    return dx * dx + dy * dy <= r * r;
  };
}

Shape filament(Rng& rng, double size) {
  // Quadratic Bezier centerline with a fixed half-thickness.
  std::array<double, 6> p{};
  for (auto& v : p) v = rng.uniform(0.12, 0.88) * size;
  const double half = rng.uniform(0.05, 0.085) * size;
  std::vector<std::pair<double, double>> pts;
  for (int k = 0; k <= 160; ++k) {
    const double t = k / 160.0, a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
    pts.emplace_back(a * p[0] + b * p[2] + c * p[4], a * p[1] + b * p[3] + c * p[5]);
  }
  return [=](double x, double y) {
    for (const auto& [px, py] : pts)
      if ((x - px) * (x - px) + (y - py) * (y - py) <= half * half) return true;
    return false;
  };
}

GrayImage gaussian_blur(const GrayImage& in, double sigma) {
  if (sigma <= 0) return in;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  GrayImage tmp(in.height, in.width), out(in.height, in.width);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in.at(r, std::clamp(c + i, 0, in.width - 1));
      tmp.at(r, c) = acc;
    }
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(std::clamp(r + i, 0, in.height - 1), c);
      out.at(r, c) = acc;
    }
  return out;
}

}  // namespace

ImagePair synth_pair(int class_index, int index, const SynthOptions& options) {
  if (options.size <= 0) throw std::invalid_argument("synth: size must be positive");
  Rng rng(mix(options.seed ^ mix(static_cast<std::uint64_t>(class_index) * 1000003ULL + static_cast<std::uint64_t>(index))));
  const double size = options.size;
  const int family = class_index % 3;

  BinaryMask gt(options.size, options.size);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw std::runtime_error("synth: no shape inside the area band after 1000 draws");
    Shape shape = family == 0 ? ellipse(rng, size) : family == 1 ? blob(rng, size) : filament(rng, size);
    for (int r = 0; r < options.size; ++r)
      for (int c = 0; c < options.size; ++c) gt.at(r, c) = shape(c + 0.5, r + 0.5) ? 1 : 0;
    const double frac = static_cast<double>(gt.area()) / static_cast<double>(gt.size());
    if (frac >= options.min_area && frac <= options.max_area) break;
  }

  const double background = rng.uniform(0.12, 0.3);
  const double contrast = rng.uniform(0.3, 0.5);
  const double gx = rng.uniform(-0.08, 0.08), gy = rng.uniform(-0.08, 0.08);
  const double freq = rng.uniform(0.15, 0.35), phase = rng.uniform(0.0, 2 * std::numbers::pi);
  GrayImage clean(options.size, options.size);
  for (int r = 0; r < options.size; ++r)
    for (int c = 0; c < options.size; ++c) {
      double v = background + gx * (c / size - 0.5) + gy * (r / size - 0.5);
      // Mild internal texture on the object.
      if (gt.at(r, c)) v += contrast * (0.85 + 0.15 * std::sin(freq * (c + r) + phase));
      clean.at(r, c) = v;
    }
  GrayImage image = gaussian_blur(clean, options.blur_sigma);
  for (auto& v : image.data) v = std::clamp(v + options.noise * rng.normal(), 0.0, 1.0);
  // Stored as 8-bit PNG, so quantize here to keep in-memory and on-disk
  // pairs identical.
  for (auto& v : image.data) v = std::round(v * 255.0) / 255.0;

  char stem[32];
  std::snprintf(stem, sizeof stem, "img%03d", index);
  char cls[32];
  std::snprintf(cls, sizeof cls, "class%02d", class_index);
  return {std::string(cls) + "/" + stem, cls, std::move(image), std::move(gt)};
}

Manifest synth_dataset(const fs::path& out_dir, const SynthOptions& options) {
  if (options.classes <= 0 || options.per_class <= 0) throw std::invalid_argument("synth: counts must be positive");
  Manifest m;
  for (int k = 0; k < options.classes; ++k)
    for (int i = 0; i < options.per_class; ++i) {
      auto pair = synth_pair(k, i, options);
      const std::string stem = pair.id.substr(pair.id.find('/') + 1);
      const fs::path img = out_dir / pair.class_name / "images" / (stem + ".png");
      const fs::path gt = out_dir / pair.class_name / "gt" / (stem + ".png");
      fs::create_directories(img.parent_path());
      fs::create_directories(gt.parent_path());
      write_png(img, pair.image);
      write_png(gt, pair.gt);
      m.samples.push_back({pair.class_name, stem, img, gt, Split::Unassigned});
    }
  sort_samples(m.samples);
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace mscc::data
