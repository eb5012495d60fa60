#include "mscc/patchseg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mscc::patch {

std::size_t PatchSet::count(PatchLabel label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void PatchSet::append(const PatchSet& other) {
  if (other.patches.empty()) return;
  if (patches.empty()) {
    *this = other;
    return;
  }
  if (other.patch_size != patch_size) {
    throw std::invalid_argument("patch sets with sizes " + std::to_string(patch_size) + " and " +
                                std::to_string(other.patch_size) + " cannot be merged");
  }
  if (labeled() != other.labeled()) throw std::invalid_argument("cannot merge labeled and unlabeled patch sets");
  patches.insert(patches.end(), other.patches.begin(), other.patches.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

PatchLabel assign_label(const BinaryMask& gt_patch, double criterion) {
  if (gt_patch.size() == 0) throw std::invalid_argument("assign_label: empty patch");
  if (!(criterion >= 0.0 && criterion < 1.0))
    throw std::invalid_argument("assign_label: criterion must lie in [0, 1), got " + std::to_string(criterion));
  std::size_t fg = 0;
  for (auto v : gt_patch.data) {
    if (v > 1) throw std::invalid_argument("assign_label: ground truth is not binary (value " + std::to_string(v) + ")");
    fg += v;
  }
  const double fraction = static_cast<double>(fg) / static_cast<double>(gt_patch.size());
  return fraction > criterion ? PatchLabel::WithObject : PatchLabel::WithoutObject;
}

PatchSet mesh_patches(const GrayImage& image, const BinaryMask* gt, int size, double criterion,
                      const std::string& image_id) {
  if (size <= 0) throw std::invalid_argument("mesh_patches: patch size must be positive");
  if (image.height % size != 0) {
    throw std::invalid_argument("mesh_patches: height " + std::to_string(image.height) + " is not divisible by " +
                                std::to_string(size));
  }
  if (image.width % size != 0) {
    throw std::invalid_argument("mesh_patches: width " + std::to_string(image.width) + " is not divisible by " +
                                std::to_string(size));
  }
  if (gt && !gt->same_size(image)) throw std::invalid_argument("mesh_patches: ground truth size differs from image");

  PatchSet set;
  set.patch_size = size;
  set.criterion = criterion;
  const int rows = image.height / size, cols = image.width / size;
  set.patches.reserve(static_cast<std::size_t>(rows) * cols);
  for (int gr = 0; gr < rows; ++gr)
    for (int gc = 0; gc < cols; ++gc) {
      Patch p{GrayImage(size, size), gr, gc, image_id};
      BinaryMask m(size, size);
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
          p.pixels.at(r, c) = image.at(gr * size + r, gc * size + c);
          if (gt) m.at(r, c) = gt->at(gr * size + r, gc * size + c);
        }
      if (gt) set.labels.push_back(assign_label(m, criterion));
      set.patches.push_back(std::move(p));
    }
  return set;
}

GrayImage reassemble(const PatchSet& set, int height, int width) {
  const int s = set.patch_size;
  GrayImage out(height, width);
  for (const auto& p : set.patches) {
    if ((p.grid_row + 1) * s > height || (p.grid_col + 1) * s > width) {
      throw std::invalid_argument("reassemble: patch outside a " + std::to_string(height) + "x" +
                                  std::to_string(width) + " canvas");
    }
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) out.at(p.grid_row * s + r, p.grid_col * s + c) = p.pixels.at(r, c);
  }
  return out;
}

PatchSet augment_patches(const PatchSet& set) {
  PatchSet out;
  out.patch_size = set.patch_size;
  out.criterion = set.criterion;
  out.patches.reserve(set.size() * 8);
  for (std::size_t i = 0; i < set.size(); ++i)
    for (int k = 0; k < 8; ++k) {
      Patch p = set.patches[i];
      p.pixels = dihedral(set.patches[i].pixels, k);
      out.patches.push_back(std::move(p));
      if (set.labeled()) out.labels.push_back(set.labels[i]);
    }
  return out;
}

PatchSet balance(const PatchSet& pool, std::size_t count, std::uint64_t seed) {
  if (count > pool.size()) {
    throw std::invalid_argument("balance: cannot draw " + std::to_string(count) + " patches from a pool of " +
                                std::to_string(pool.size()));
  }
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots are the sample.
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  PatchSet out;
  out.patch_size = pool.patch_size;
  out.criterion = pool.criterion;
  for (std::size_t i = 0; i < count; ++i) {
    out.patches.push_back(pool.patches[idx[i]]);
    if (pool.labeled()) out.labels.push_back(pool.labels[idx[i]]);
  }
  return out;
}

PatchSet filter_label(const PatchSet& set, PatchLabel label) {
  if (!set.labeled()) throw std::invalid_argument("filter_label: patch set is unlabeled");
  PatchSet out;
  out.patch_size = set.patch_size;
  out.criterion = set.criterion;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.labels[i] == label) {
      out.patches.push_back(set.patches[i]);
      out.labels.push_back(label);
    }
  return out;
}

PatchSet balanced_training_set(const PatchSet& set, std::uint64_t seed) {
  auto with = filter_label(set, PatchLabel::WithObject);
  auto without = filter_label(set, PatchLabel::WithoutObject);
  if (with.size() == 0 || without.size() == 0) {
    throw std::invalid_argument("balanced_training_set: both patch classes must be present");
  }
  const bool with_is_minority = with.size() <= without.size();
  PatchSet minority = augment_patches(with_is_minority ? with : without);
  PatchSet majority = with_is_minority ? without : with;
  if (minority.size() >= majority.size()) {
    minority = balance(minority, majority.size(), seed);
  } else {
    majority = balance(majority, minority.size(), seed);
  }
  PatchSet out = with_is_minority ? majority : minority;
  out.append(with_is_minority ? minority : majority);
  return out;
}

namespace {

Tensor batch_tensor(const PatchSet& set, std::span<const std::size_t> idx) {
  const std::size_t s = static_cast<std::size_t>(set.patch_size);
  Tensor x({idx.size(), 1, s, s});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& px = set.patches[idx[b]].pixels.data;
    std::copy(px.begin(), px.end(), x.data() + b * s * s);
  }
  return x;
}

}  // namespace

PatchTrainResult train_patch_classifier(const PatchSet& balanced, const PatchTrainConfig& config,
                                        const PatchEpochObserver& observer) {
  if (!balanced.labeled()) throw std::invalid_argument("train_patch_classifier: patches must be labeled");
  if (balanced.count(PatchLabel::WithObject) == 0 || balanced.count(PatchLabel::WithoutObject) == 0) {
    throw std::invalid_argument("train_patch_classifier: training data holds a single class");
  }
  if (config.epochs < 0 || config.batch_size <= 0) throw std::invalid_argument("train_patch_classifier: bad config");

  PatchTrainResult result{Model(net::build_patch_classifier(balanced.patch_size), config.seed), AdamState{}, {}};
  result.optimizer.config.lr = config.lr;
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(balanced.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0, correct = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor target({idx.size(), 2}, 0.0);
      for (std::size_t b = 0; b < idx.size(); ++b)
        target[b * 2 + static_cast<std::size_t>(balanced.labels[idx[b]])] = 1.0;

      result.model.zero_grad();
      Var prob = result.model.forward(batch_tensor(balanced, idx), ops::Mode::Train);
      Var loss = ops::categorical_cross_entropy(prob, target);
      const double l = loss->value[0];
      if (!std::isfinite(l)) {
        throw NonFiniteError("patch training: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches + 1));
      }
      backward(loss);
      try {
        adam_step(result.model.parameters(), result.optimizer);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("patch training: epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches + 1) + ": " + e.what());
      }

      double hits = 0.0;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const int pred = prob->value[b * 2 + 1] > prob->value[b * 2] ? 1 : 0;
        hits += pred == static_cast<int>(balanced.labels[idx[b]]) ? 1.0 : 0.0;
      }
      loss_sum += l;
      correct += hits / static_cast<double>(idx.size());
      ++batches;
    }
    PatchEpoch stat{epoch, batches ? loss_sum / batches : 0.0, batches ? correct / batches : 0.0};
    result.curves.push_back(stat);
    if (observer) observer(stat);
  }
  return result;
}

std::vector<PatchLabel> classify(Model& model, const PatchSet& set, int batch_size) {
  std::vector<PatchLabel> out;
  out.reserve(set.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Var prob = model.forward(batch_tensor(set, idx), ops::Mode::Infer);
    for (std::size_t b = 0; b < idx.size(); ++b)
      out.push_back(prob->value[b * 2 + 1] > prob->value[b * 2] ? PatchLabel::WithObject : PatchLabel::WithoutObject);
  }
  return out;
}

BinaryMask reconstruct_mask(std::span<const PatchLabel> labels, int height, int width, int size) {
  if (size <= 0 || height % size != 0 || width % size != 0) {
    throw std::invalid_argument("reconstruct_mask: " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not a whole number of " + std::to_string(size) + "-pixel cells");
  }
  const int rows = height / size, cols = width / size;
  if (labels.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("reconstruct_mask: expected " + std::to_string(rows * cols) + " cell labels, got " +
                                std::to_string(labels.size()));
  }
  BinaryMask m(height, width);
  for (int gr = 0; gr < rows; ++gr)
    for (int gc = 0; gc < cols; ++gc) {
      if (labels[static_cast<std::size_t>(gr) * cols + gc] != PatchLabel::WithObject) continue;
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) m.at(gr * size + r, gc * size + c) = 1;
    }
  return m;
}

void write_patch_cache(const std::filesystem::path& path, const PatchSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::ostringstream criterion;
  criterion.precision(17);
  criterion << set.criterion;
  out << "mscc-patches 1\n"
      << "size " << set.patch_size << "\n"
      << "criterion " << criterion.str() << "\n"
      << "count " << set.size() << "\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& p = set.patches[i];
    if (p.image_id.find_first_of(",\n") != std::string::npos) {
      throw std::invalid_argument("patch cache: image id '" + p.image_id + "' contains a separator");
    }
    out << p.image_id << ',' << p.grid_row << ',' << p.grid_col << ',';
    if (set.labeled()) {
      out << static_cast<int>(set.labels[i]);
    } else {
      out << '-';
    }
    out << '\n';
  }
  out << "pixels\n";
  for (const auto& p : set.patches)
    for (double v : p.pixels.data) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<char>(bits >> (8 * k));
      out.write(b, 8);
    }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PatchSet read_patch_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto fail = [&](const std::string& what) { return std::runtime_error("patch cache " + path.string() + ": " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "mscc-patches 1") throw fail("bad header");
  PatchSet set;
  std::size_t n = 0;
  auto field = [&](const std::string& key) {
    if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0) throw fail("missing '" + key + "'");
    return line.substr(key.size() + 1);
  };
  try {
    set.patch_size = std::stoi(field("size"));
    set.criterion = std::stod(field("criterion"));
    n = std::stoull(field("count"));
  } catch (const std::logic_error&) {
    throw fail("malformed header value");
  }
  if (set.patch_size <= 0) throw fail("bad patch size");
  bool labeled = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw fail("truncated records");
    std::istringstream rec(line);
    std::string id, row, col, label;
    if (!std::getline(rec, id, ',') || !std::getline(rec, row, ',') || !std::getline(rec, col, ',') ||
        !std::getline(rec, label)) {
      throw fail("malformed record " + std::to_string(i + 1));
    }
    Patch p{GrayImage(set.patch_size, set.patch_size), 0, 0, id};
    try {
      p.grid_row = std::stoi(row);
      p.grid_col = std::stoi(col);
    } catch (const std::logic_error&) {
      throw fail("malformed record " + std::to_string(i + 1));
    }
    if (label == "-") {
      labeled = false;
    } else if (label == "0" || label == "1") {
      set.labels.push_back(label == "1" ? PatchLabel::WithObject : PatchLabel::WithoutObject);
    } else {
      throw fail("bad label '" + label + "' in record " + std::to_string(i + 1));
    }
    set.patches.push_back(std::move(p));
  }
  if (!labeled) set.labels.clear();
  if (!std::getline(in, line) || line != "pixels") throw fail("missing pixel blob");
  for (auto& p : set.patches)
    for (double& v : p.pixels.data) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8)) throw fail("truncated pixel blob");
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
      v = std::bit_cast<double>(bits);
    }
  if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes");
  return set;
}

}  // namespace mscc::patch
