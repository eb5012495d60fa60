#include "mscc/densecrf.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace mscc::crf {

namespace {

// Packed all-pairs kernels are cached only up to this many pixels (64x64).
constexpr std::size_t kMaxCachedPixels = 4096;

struct KernelTerms {
  double inv_alpha, inv_beta, inv_gamma;  // 1 / (2 sigma^2)
  explicit KernelTerms(const CrfParams& p)
      : inv_alpha(0.5 / (p.sigma_alpha * p.sigma_alpha)),
        inv_beta(0.5 / (p.sigma_beta * p.sigma_beta)),
        inv_gamma(0.5 / (p.sigma_gamma * p.sigma_gamma)) {}
};

inline double kernel_value(std::size_t i, std::size_t j, const PixelFeatures& f, const CrfParams& p,
                           const KernelTerms& t) {
  const double dx = f.x[i] - f.x[j];
  const double dy = f.y[i] - f.y[j];
  const double d2 = dx * dx + dy * dy;
  double di2 = 0.0;
  for (int c = 0; c < f.channels; ++c) {
    const double d = f.intensity[i * f.channels + c] - f.intensity[j * f.channels + c];
    di2 += d * d;
  }
  double k = 0.0;
  if (p.w1 != 0.0) k += p.w1 * std::exp(-d2 * t.inv_alpha - di2 * t.inv_beta);
  if (p.w2 != 0.0) k += p.w2 * std::exp(-d2 * t.inv_gamma);
  return k;
}

void check_inputs(const UnaryPotentials& unary, const PixelFeatures& feats, const CrfParams& params) {
  params.validate();
  if (unary.num_labels != params.num_labels) {
    throw std::invalid_argument("crf: unary has " + std::to_string(unary.num_labels) + " labels, params say " +
                                std::to_string(params.num_labels));
  }
  if (unary.num_pixels() != feats.size()) {
    throw std::invalid_argument("crf: unary covers " + std::to_string(unary.num_pixels()) +
                                " pixels but features cover " + std::to_string(feats.size()));
  }
  if (feats.intensity.size() != feats.size() * static_cast<std::size_t>(feats.channels)) {
    throw std::invalid_argument("crf: intensity buffer does not match pixel count");
  }
}

// Upper-triangle kernel table, row i holding j = i+1 .. n-1.
class KernelCache {
 public:
  KernelCache(const PixelFeatures& f, const CrfParams& p) : n_(f.size()) {
    KernelTerms t(p);
    values_.resize(n_ * (n_ - 1) / 2);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) values_[k++] = kernel_value(i, j, f, p, t);
  }
  const double* row(std::size_t i) const { return values_.data() + i * (2 * n_ - i - 1) / 2; }

 private:
  std::size_t n_;
  std::vector<double> values_;
};

// msg[i*L + l] = sum_{j != i} k_ij Q_j(l); ksum[i] = sum_{j != i} k_ij.
void collect_messages(const MarginalField& q, const PixelFeatures& f, const CrfParams& p, const KernelCache* cache,
                      std::vector<double>& msg, std::vector<double>& ksum) {
  const std::size_t n = f.size();
  const int labels = q.num_labels;
  msg.assign(n * labels, 0.0);
  ksum.assign(n, 0.0);
  KernelTerms t(p);

  if (!p.truncated) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = cache ? cache->row(i) : nullptr;
      double* mi = &msg[i * labels];
      const double* qi = &q.q[i * labels];
      for (std::size_t j = i + 1; j < n; ++j) {
        const double k = row ? row[j - i - 1] : kernel_value(i, j, f, p, t);
        double* mj = &msg[j * labels];
        const double* qj = &q.q[j * labels];
        for (int l = 0; l < labels; ++l) {
          mi[l] += k * qj[l];
          mj[l] += k * qi[l];
        }
        ksum[i] += k;
        ksum[j] += k;
      }
    }
    return;
  }

  // Truncated window over the pixel grid.
  const int radius = static_cast<int>(std::ceil(3.0 * std::max(p.sigma_alpha, p.sigma_gamma)));
  std::vector<std::size_t> grid(static_cast<std::size_t>(f.width) * f.height, n);
  for (std::size_t i = 0; i < n; ++i) {
    const long gx = std::lround(f.x[i]), gy = std::lround(f.y[i]);
    if (gx < 0 || gy < 0 || gx >= f.width || gy >= f.height) {
      throw std::invalid_argument("crf: truncated path needs grid positions inside width x height");
    }
    grid[static_cast<std::size_t>(gy) * f.width + gx] = i;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int cx = static_cast<int>(std::lround(f.x[i])), cy = static_cast<int>(std::lround(f.y[i]));
    double* mi = &msg[i * labels];
    for (int yy = std::max(0, cy - radius); yy <= std::min(f.height - 1, cy + radius); ++yy)
      for (int xx = std::max(0, cx - radius); xx <= std::min(f.width - 1, cx + radius); ++xx) {
        const std::size_t j = grid[static_cast<std::size_t>(yy) * f.width + xx];
        if (j == i || j == n) continue;
        const double k = kernel_value(i, j, f, p, t);
        for (int l = 0; l < labels; ++l) mi[l] += k * q.q[j * labels + l];
        ksum[i] += k;
      }
  }
}

MarginalField step_impl(const MarginalField& q, const UnaryPotentials& unary, const PixelFeatures& feats,
                        const CrfParams& params, const KernelCache* cache) {
  std::vector<double> msg, ksum;
  collect_messages(q, feats, params, cache, msg, ksum);
  const std::size_t n = feats.size();
  const int labels = q.num_labels;
  MarginalField out{labels, std::vector<double>(q.q.size())};
  std::vector<double> logits(labels);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (int l = 0; l < labels; ++l) {
      // Potts: label l pays k_ij for every neighbour mass not on l.
      logits[l] = -unary.cost[i * labels + l] - (ksum[i] - msg[i * labels + l]);
      mx = std::max(mx, logits[l]);
    }
    double z = 0.0;
    for (int l = 0; l < labels; ++l) z += (logits[l] = std::exp(logits[l] - mx));
    for (int l = 0; l < labels; ++l) out.q[i * labels + l] = logits[l] / z;
  }
  return out;
}

}  // namespace

void CrfParams::validate() const {
  if (w1 < 0.0 || w2 < 0.0) throw std::invalid_argument("crf: kernel weights must be nonnegative");
  if (!(sigma_alpha > 0.0 && sigma_beta > 0.0 && sigma_gamma > 0.0)) {
    throw std::invalid_argument("crf: kernel scales must be positive");
  }
  if (num_labels < 2) throw std::invalid_argument("crf: need at least two labels");
  if (num_iterations < 0) throw std::invalid_argument("crf: iteration count must be nonnegative");
}

PixelFeatures PixelFeatures::from_gray(const GrayImage& image) {
  PixelFeatures f;
  f.width = image.width;
  f.height = image.height;
  f.channels = 1;
  const std::size_t n = image.size();
  f.x.resize(n);
  f.y.resize(n);
  f.intensity = image.data;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      f.x[static_cast<std::size_t>(r) * image.width + c] = c;
      f.y[static_cast<std::size_t>(r) * image.width + c] = r;
    }
  return f;
}

PixelFeatures PixelFeatures::permuted(std::span<const std::size_t> order) const {
  PixelFeatures f;
  f.width = width;
  f.height = height;
  f.channels = channels;
  for (std::size_t k : order) {
    f.x.push_back(x[k]);
    f.y.push_back(y[k]);
    for (int c = 0; c < channels; ++c) f.intensity.push_back(intensity[k * channels + c]);
  }
  return f;
}

UnaryPotentials unary_from_probabilities(const ProbabilityMap& prob, double eps) {
  UnaryPotentials u{2, std::vector<double>(prob.size() * 2)};
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = prob.data[i];
    u.cost[2 * i] = -std::log(std::clamp(1.0 - p, eps, 1.0));
    u.cost[2 * i + 1] = -std::log(std::clamp(p, eps, 1.0));
  }
  return u;
}

UnaryPotentials unary_from_mask(const BinaryMask& mask, double confidence) {
  if (!(confidence > 0.5 && confidence < 1.0)) {
    throw std::invalid_argument("crf: mask confidence must lie in (0.5, 1)");
  }
  ProbabilityMap p(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) p.data[i] = mask.data[i] ? confidence : 1.0 - confidence;
  return unary_from_probabilities(p);
}

double pairwise_kernel(std::size_t i, std::size_t j, const PixelFeatures& feats, const CrfParams& params) {
  return kernel_value(i, j, feats, params, KernelTerms(params));
}

MarginalField initial_marginals(const UnaryPotentials& unary) {
  const int labels = unary.num_labels;
  MarginalField q{labels, std::vector<double>(unary.cost.size())};
  for (std::size_t i = 0; i < unary.num_pixels(); ++i) {
    double mn = INFINITY;
    for (int l = 0; l < labels; ++l) mn = std::min(mn, unary.at(i, l));
    double z = 0.0;
    for (int l = 0; l < labels; ++l) z += (q.q[i * labels + l] = std::exp(mn - unary.at(i, l)));
    for (int l = 0; l < labels; ++l) q.q[i * labels + l] /= z;
  }
  return q;
}

MarginalField mean_field_step(const MarginalField& q, const UnaryPotentials& unary, const PixelFeatures& feats,
                              const CrfParams& params) {
  check_inputs(unary, feats, params);
  if (q.q.size() != unary.cost.size()) throw std::invalid_argument("crf: marginal field size mismatch");
  return step_impl(q, unary, feats, params, nullptr);
}

MarginalField mean_field_infer(const UnaryPotentials& unary, const PixelFeatures& feats, const CrfParams& params,
                               const IterationObserver& observer) {
  check_inputs(unary, feats, params);
  MarginalField q = initial_marginals(unary);
  if (observer) observer(0, q);
  if (params.num_iterations == 0) return q;
  std::unique_ptr<KernelCache> cache;
  if (!params.truncated && feats.size() > 1 && feats.size() <= kMaxCachedPixels) {
    cache = std::make_unique<KernelCache>(feats, params);
  }
  for (int it = 1; it <= params.num_iterations; ++it) {
    q = step_impl(q, unary, feats, params, cache.get());
    if (observer) observer(it, q);
  }
  return q;
}

double energy(std::span<const int> labeling, const UnaryPotentials& unary, const PixelFeatures& feats,
              const CrfParams& params) {
  check_inputs(unary, feats, params);
  if (labeling.size() != feats.size()) throw std::invalid_argument("crf: labeling size mismatch");
  KernelTerms t(params);
  double e = 0.0;
  for (std::size_t i = 0; i < labeling.size(); ++i) {
    if (labeling[i] < 0 || labeling[i] >= unary.num_labels) throw std::invalid_argument("crf: label out of range");
    e += unary.at(i, labeling[i]);
  }
  for (std::size_t i = 0; i < labeling.size(); ++i)
    for (std::size_t j = i + 1; j < labeling.size(); ++j)
      if (labeling[i] != labeling[j]) e += kernel_value(i, j, feats, params, t);
  return e;
}

std::vector<int> map_labeling(const MarginalField& q) {
  std::vector<int> labels(q.num_pixels());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int best = 0;
    for (int l = 1; l < q.num_labels; ++l)
      if (q.at(i, l) > q.at(i, best)) best = l;
    labels[i] = best;
  }
  return labels;
}

BinaryMask map_mask(const MarginalField& q, int height, int width) {
  auto labels = map_labeling(q);
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("crf: field does not cover " + std::to_string(height) + "x" + std::to_string(width));
  }
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.data[i] = labels[i] != 0 ? 1 : 0;
  return m;
}

}  // namespace mscc::crf
