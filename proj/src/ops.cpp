#include "mscc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace mscc::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string describe(const char* op, const Tensor& a) {
  return std::string(op) + ": got " + shape_string(a.shape());
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t out_h, out_w;
  long pad_h, pad_w;
  long stride;
  std::size_t rows() const { return channels * kernel_h * kernel_w; }
  std::size_t cols() const { return out_h * out_w; }
  bool is_pointwise() const {
    return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad_h == 0 && pad_w == 0;
  }
};

// Lays out every receptive field of one image as a column of `col`
// (rows = C*kH*kW, cols = outH*outW).
void im2col(const double* x, const ConvGeometry& g, double* col) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          long ih = static_cast<long>(oh) * g.stride - g.pad_h + static_cast<long>(ki);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            long iw = static_cast<long>(ow) * g.stride - g.pad_w + static_cast<long>(kj);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into image positions.
void col2im(const double* col, const ConvGeometry& g, double* x) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          long ih = static_cast<long>(oh) * g.stride - g.pad_h + static_cast<long>(ki);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            long iw = static_cast<long>(ow) * g.stride - g.pad_w + static_cast<long>(kj);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, Padding padding) {
  const Tensor& x = input->value;
  const Tensor& w = kernel->value;
  const Tensor& b = bias->value;
  require(x.rank() == 4, describe("conv2d input must be (N,C,H,W)", x));
  require(w.rank() == 4, describe("conv2d kernel must be (F,C,kH,kW)", w));
  require(x.dim(1) == w.dim(1), "conv2d: input " + shape_string(x.shape()) +
                                    " has " + std::to_string(x.dim(1)) +
                                    " channels but kernel " + shape_string(w.shape()) +
                                    " expects " + std::to_string(w.dim(1)));
  require(w.dim(2) % 2 == 1 && w.dim(3) % 2 == 1,
          describe("conv2d kernel spatial dims must be odd", w));
  require(b.rank() == 1 && b.dim(0) == w.dim(0),
          "conv2d: bias " + shape_string(b.shape()) + " does not match " +
              std::to_string(w.dim(0)) + " filters");
  require(stride >= 1, "conv2d: stride must be positive");
  if (!x.all_finite()) throw NonFiniteError("conv2d: input contains NaN or Inf");

  ConvGeometry g{};
  g.channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.kernel_h = w.dim(2);
  g.kernel_w = w.dim(3);
  g.stride = stride;
  g.pad_h = padding == Padding::Same ? static_cast<long>(g.kernel_h - 1) / 2 : 0;
  g.pad_w = padding == Padding::Same ? static_cast<long>(g.kernel_w - 1) / 2 : 0;
  long span_h = static_cast<long>(g.height) + 2 * g.pad_h - static_cast<long>(g.kernel_h);
  long span_w = static_cast<long>(g.width) + 2 * g.pad_w - static_cast<long>(g.kernel_w);
  require(span_h >= 0 && span_w >= 0, "conv2d: kernel " + shape_string(w.shape()) +
                                          " larger than input " + shape_string(x.shape()));
  g.out_h = static_cast<std::size_t>(span_h / stride + 1);
  g.out_w = static_cast<std::size_t>(span_w / stride + 1);

  const std::size_t batch = x.dim(0);
  const std::size_t filters = w.dim(0);
  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_plane = filters * g.cols();

  Tensor y({batch, filters, g.out_h, g.out_w});
  ConstMatMap wm(w.data(), filters, g.rows());
  ConstVecMap bv(b.data(), filters);
  Buffer col(g.is_pointwise() ? 0 : g.rows() * g.cols());
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xn = x.data() + n * in_plane;
    const double* colp = xn;
    if (!g.is_pointwise()) {
      im2col(xn, g, col.data());
      colp = col.data();
    }
    MatMap yn(y.data() + n * out_plane, filters, g.cols());
    yn.noalias() = wm * ConstMatMap(colp, g.rows(), g.cols());
    yn.colwise() += bv;
  }

  return make_node(std::move(y), {input, kernel, bias}, [g, batch, filters, in_plane, out_plane](Node& self) {
    const Var& in = self.parents[0];
    const Var& ker = self.parents[1];
    const Var& bs = self.parents[2];
    const Tensor& gy = self.value;
    auto dy = std::as_const(gy).grad();
    ConstMatMap wm(ker->value.data(), filters, g.rows());
    Buffer col(g.is_pointwise() ? 0 : g.rows() * g.cols());
    Buffer dcol(g.rows() * g.cols());
    for (std::size_t n = 0; n < batch; ++n) {
      ConstMatMap dyn(dy.data() + n * out_plane, filters, g.cols());
      if (bs->requires_grad) {
        VecMap db(bs->value.grad().data(), filters);
        db += dyn.rowwise().sum();
      }
      if (ker->requires_grad) {
        const double* xn = in->value.data() + n * in_plane;
        const double* colp = xn;
        if (!g.is_pointwise()) {
          im2col(xn, g, col.data());
          colp = col.data();
        }
        MatMap dw(ker->value.grad().data(), filters, g.rows());
        dw.noalias() += dyn * ConstMatMap(colp, g.rows(), g.cols()).transpose();
      }
      if (in->requires_grad) {
        double* dxn = in->value.grad().data() + n * in_plane;
        if (g.is_pointwise()) {
          MatMap dx(dxn, g.rows(), g.cols());
          dx.noalias() += wm.transpose() * dyn;
        } else {
          MatMap dc(dcol.data(), g.rows(), g.cols());
          dc.noalias() = wm.transpose() * dyn;
          col2im(dcol.data(), g, dxn);
        }
      }
    }
  });
}

Var transpose_conv2d(const Var& input, const Var& kernel, const Var& bias, int stride) {
  const Tensor& x = input->value;
  const Tensor& w = kernel->value;
  const Tensor& b = bias->value;
  require(x.rank() == 4, describe("transpose_conv2d input must be (N,C,H,W)", x));
  require(w.rank() == 4, describe("transpose_conv2d kernel must be (C,F,kH,kW)", w));
  require(x.dim(1) == w.dim(0), "transpose_conv2d: input " + shape_string(x.shape()) +
                                    " does not match kernel " + shape_string(w.shape()));
  require(b.rank() == 1 && b.dim(0) == w.dim(1),
          "transpose_conv2d: bias " + shape_string(b.shape()) + " does not match kernel " +
              shape_string(w.shape()));
  require(stride >= 1, "transpose_conv2d: stride must be positive");
  if (!x.all_finite()) throw NonFiniteError("transpose_conv2d: input contains NaN or Inf");

  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t filters = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t oh = h * s, ow = wd * s;
  const std::size_t taps = filters * kh * kw;
  const std::size_t in_plane = channels * h * wd, out_plane = filters * oh * ow;

  // col(f*kh*kw + ki*kw + kj, i*W + j) is the contribution of input pixel
  // (i,j) to output (i*s+ki, j*s+kj) of filter f.
  auto scatter = [=](const double* col, double* out) {
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const double* row = col + ((f * kh + ki) * kw + kj) * h * wd;
          for (std::size_t i = 0; i < h; ++i) {
            std::size_t yy = i * s + ki;
            if (yy >= oh) continue;
            for (std::size_t j = 0; j < wd; ++j) {
              std::size_t xx = j * s + kj;
              if (xx < ow) out[(f * oh + yy) * ow + xx] += row[i * wd + j];
            }
          }
        }
  };
  auto gather = [=](const double* out, double* col) {
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          double* row = col + ((f * kh + ki) * kw + kj) * h * wd;
          for (std::size_t i = 0; i < h; ++i) {
            std::size_t yy = i * s + ki;
            for (std::size_t j = 0; j < wd; ++j) {
              std::size_t xx = j * s + kj;
              row[i * wd + j] = (yy < oh && xx < ow) ? out[(f * oh + yy) * ow + xx] : 0.0;
            }
          }
        }
  };

  Tensor y({batch, filters, oh, ow});
  ConstMatMap wm(w.data(), channels, taps);
  Buffer col(taps * h * wd);
  for (std::size_t n = 0; n < batch; ++n) {
    MatMap cm(col.data(), taps, h * wd);
    cm.noalias() = wm.transpose() * ConstMatMap(x.data() + n * in_plane, channels, h * wd);
    double* yn = y.data() + n * out_plane;
    scatter(col.data(), yn);
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t p = 0; p < oh * ow; ++p) yn[f * oh * ow + p] += b[f];
  }

  return make_node(std::move(y), {input, kernel, bias},
                   [=](Node& self) {
                     const Var& in = self.parents[0];
                     const Var& ker = self.parents[1];
                     const Var& bs = self.parents[2];
                     auto dy = std::as_const(self.value).grad();
                     ConstMatMap wm(ker->value.data(), channels, taps);
                     Buffer dcol(taps * h * wd);
                     for (std::size_t n = 0; n < batch; ++n) {
                       const double* dyn = dy.data() + n * out_plane;
                       if (bs->requires_grad) {
                         auto db = bs->value.grad();
                         for (std::size_t f = 0; f < filters; ++f) {
                           double acc = 0.0;
                           for (std::size_t p = 0; p < oh * ow; ++p) acc += dyn[f * oh * ow + p];
                           db[f] += acc;
                         }
                       }
                       if (!in->requires_grad && !ker->requires_grad) continue;
                       gather(dyn, dcol.data());
                       ConstMatMap dc(dcol.data(), taps, h * wd);
                       if (in->requires_grad) {
                         MatMap dx(in->value.grad().data() + n * in_plane, channels, h * wd);
                         dx.noalias() += wm * dc;
                       }
                       if (ker->requires_grad) {
                         MatMap dw(ker->value.grad().data(), channels, taps);
                         dw.noalias() +=
                             ConstMatMap(in->value.data() + n * in_plane, channels, h * wd) *
                             dc.transpose();
                       }
                     }
                   });
}

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, Mode mode,
               RunningStats& running, const BatchNormOptions& options) {
  const Tensor& x = input->value;
  require(x.rank() == 4 || x.rank() == 2, describe("batch_norm input must be (N,C,H,W) or (N,C)", x));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  require(gamma->value.size() == channels && beta->value.size() == channels,
          "batch_norm: gamma/beta length must equal channel count " + std::to_string(channels));
  require(options.epsilon >= 0.0, "batch_norm: epsilon must be non-negative");
  if (running.mean.size() != channels) running.mean = Tensor({channels}, 0.0);
  if (running.var.size() != channels) running.var = Tensor({channels}, 1.0);

  const double count = static_cast<double>(batch * spatial);
  auto index = [=](std::size_t n, std::size_t c, std::size_t p) {
    return (n * channels + c) * spatial + p;
  };

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  Tensor y(x.shape());
  const auto& g = gamma->value;
  const auto& bt = beta->value;
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < spatial; ++p) mean += x[index(n, c, p)];
      mean /= count;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < spatial; ++p) {
          double d = x[index(n, c, p)] - mean;
          var += d * d;
        }
      var /= count;
      running.mean[c] = (1.0 - options.momentum) * running.mean[c] + options.momentum * mean;
      running.var[c] = (1.0 - options.momentum) * running.var[c] + options.momentum * var;
    } else {
      mean = running.mean[c];
      var = running.var[c];
    }
    double inv = 1.0 / std::sqrt(var + options.epsilon);
    (*inv_std)[c] = inv;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t p = 0; p < spatial; ++p) {
        std::size_t i = index(n, c, p);
        double xh = (x[i] - mean) * inv;
        (*xhat)[i] = xh;
        y[i] = g[c] * xh + bt[c];
      }
  }

  const bool train = mode == Mode::Train;
  return make_node(std::move(y), {input, gamma, beta}, [=](Node& self) {
    const Var& in = self.parents[0];
    const Var& gm = self.parents[1];
    const Var& bt2 = self.parents[2];
    auto dy = std::as_const(self.value).grad();
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < spatial; ++p) {
          std::size_t i = index(n, c, p);
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * (*xhat)[i];
        }
      if (gm->requires_grad) gm->value.grad()[c] += sum_dy_xhat;
      if (bt2->requires_grad) bt2->value.grad()[c] += sum_dy;
      if (!in->requires_grad) continue;
      auto dx = in->value.grad();
      const double scale = gm->value[c] * (*inv_std)[c];
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < spatial; ++p) {
          std::size_t i = index(n, c, p);
          if (train) {
            dx[i] += scale * (dy[i] - sum_dy / count - (*xhat)[i] * sum_dy_xhat / count);
          } else {
            dx[i] += scale * dy[i];
          }
        }
    }
  });
}

Var maxpool2x2(const Var& input) {
  const Tensor& x = input->value;
  require(x.rank() == 4, describe("maxpool2x2 input must be (N,C,H,W)", x));
  require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          describe("maxpool2x2 needs even spatial dims", x));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t k : cand)
          if (src[k] > src[best]) best = k;
        std::size_t o = pl * oh * ow + i * ow + j;
        y[o] = src[best];
        (*argmax)[o] = pl * h * w + best;
      }
  }
  return make_node(std::move(y), {input}, [argmax](Node& self) {
    auto dy = std::as_const(self.value).grad();
    auto dx = self.parents[0]->value.grad();
    for (std::size_t o = 0; o < dy.size(); ++o) dx[(*argmax)[o]] += dy[o];
  });
}

Var concat_channels(const std::vector<Var>& inputs) {
  require(!inputs.empty(), "concat_channels: no operands");
  const Tensor& first = inputs.front()->value;
  require(first.rank() == 4, describe("concat_channels operands must be (N,C,H,W)", first));
  std::size_t channels = 0;
  for (const auto& v : inputs) {
    const Tensor& t = v->value;
    require(t.rank() == 4 && t.dim(0) == first.dim(0) && t.dim(2) == first.dim(2) &&
                t.dim(3) == first.dim(3),
            "concat_channels: operand " + shape_string(t.shape()) + " does not match " +
                shape_string(first.shape()) + " on N, H, W");
    channels += t.dim(1);
  }
  const std::size_t batch = first.dim(0), plane = first.dim(2) * first.dim(3);
  Tensor y({batch, channels, first.dim(2), first.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t offset = 0;
    for (const auto& v : inputs) {
      const Tensor& t = v->value;
      const std::size_t len = t.dim(1) * plane;
      std::copy_n(t.data() + n * len, len, y.data() + (n * channels * plane) + offset);
      offset += len;
    }
  }
  return make_node(std::move(y), inputs, [batch, channels, plane](Node& self) {
    auto dy = std::as_const(self.value).grad();
    for (std::size_t n = 0; n < batch; ++n) {
      std::size_t offset = 0;
      for (const auto& v : self.parents) {
        const std::size_t len = v->value.dim(1) * plane;
        if (v->requires_grad) {
          auto dx = v->value.grad();
          const double* src = dy.data() + n * channels * plane + offset;
          double* dst = dx.data() + n * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        offset += len;
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor y(x->value.shape());
  const auto& xv = x->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_node(std::move(y), {x}, [](Node& self) {
    auto dy = std::as_const(self.value).grad();
    const Tensor& in = self.parents[0]->value;
    auto dx = self.parents[0]->value.grad();
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (in[i] > 0.0) dx[i] += dy[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor y(x->value.shape());
  const auto& xv = x->value;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double v = xv[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  return make_node(std::move(y), {x}, [](Node& self) {
    auto dy = std::as_const(self.value).grad();
    auto dx = self.parents[0]->value.grad();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      double s = self.value[i];
      dx[i] += dy[i] * s * (1.0 - s);
    }
  });
}

Var softmax(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 2, describe("softmax input must be (N,K)", xv));
  const std::size_t rows = xv.dim(0), k = xv.dim(1);
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * k;
    double* dst = y.data() + r * k;
    double mx = *std::max_element(src, src + k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    for (std::size_t i = 0; i < k; ++i) dst[i] /= sum;
  }
  return make_node(std::move(y), {x}, [rows, k](Node& self) {
    auto dy = std::as_const(self.value).grad();
    auto dx = self.parents[0]->value.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += dy[r * k + i] * self.value[r * k + i];
      for (std::size_t i = 0; i < k; ++i)
        dx[r * k + i] += self.value[r * k + i] * (dy[r * k + i] - dot);
    }
  });
}

Var flatten(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() >= 1, "flatten: scalar input");
  const std::size_t rows = xv.dim(0);
  Tensor y({rows, rows ? xv.size() / rows : 0}, std::vector<double>(xv.values().begin(), xv.values().end()));
  return make_node(std::move(y), {x}, [](Node& self) {
    accumulate(self.parents[0]->value.grad(), std::as_const(self.value).grad());
  });
}

Var dense(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& w = weight->value;
  const Tensor& b = bias->value;
  require(xv.rank() == 2, describe("dense input must be (N,in)", xv));
  require(w.rank() == 2 && w.dim(1) == xv.dim(1),
          "dense: weight " + shape_string(w.shape()) + " does not accept input " +
              shape_string(xv.shape()));
  require(b.rank() == 1 && b.dim(0) == w.dim(0),
          "dense: bias " + shape_string(b.shape()) + " does not match weight " + shape_string(w.shape()));
  const std::size_t rows = xv.dim(0), in = w.dim(1), out = w.dim(0);
  Tensor y({rows, out});
  MatMap ym(y.data(), rows, out);
  ym.noalias() = ConstMatMap(xv.data(), rows, in) * ConstMatMap(w.data(), out, in).transpose();
  ym.rowwise() += ConstVecMap(b.data(), out).transpose();
  return make_node(std::move(y), {x, weight, bias}, [rows, in, out](Node& self) {
    const Var& xin = self.parents[0];
    const Var& wt = self.parents[1];
    const Var& bs = self.parents[2];
    ConstMatMap dy(std::as_const(self.value).grad().data(), rows, out);
    if (xin->requires_grad) {
      MatMap dx(xin->value.grad().data(), rows, in);
      dx.noalias() += dy * ConstMatMap(wt->value.data(), out, in);
    }
    if (wt->requires_grad) {
      MatMap dw(wt->value.grad().data(), out, in);
      dw.noalias() += dy.transpose() * ConstMatMap(xin->value.data(), rows, in);
    }
    if (bs->requires_grad) {
      VecMap db(bs->value.grad().data(), out);
      db += dy.colwise().sum().transpose();
    }
  });
}

Var binary_cross_entropy(const Var& prob, const Tensor& target) {
  const Tensor& p = prob->value;
  require(p.shape() == target.shape(), "binary_cross_entropy: prediction " + shape_string(p.shape()) +
                                           " vs target " + shape_string(target.shape()));
  for (double t : target.values())
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("binary_cross_entropy: target outside {0,1}");
  const double m = static_cast<double>(p.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    loss -= target[i] == 1.0 ? std::log(pc) : std::log(1.0 - pc);
  }
  loss /= m;
  return make_node(Tensor::scalar(loss), {prob}, [target, m](Node& self) {
    const double g = std::as_const(self.value).grad()[0];
    const Tensor& pv = self.parents[0]->value;
    auto dx = self.parents[0]->value.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      double pi = pv[i];
      if (pi < kProbClamp || pi > 1.0 - kProbClamp) continue;
      dx[i] += g * (target[i] == 1.0 ? -1.0 / pi : 1.0 / (1.0 - pi)) / m;
    }
  });
}

Var categorical_cross_entropy(const Var& prob, const Tensor& target) {
  const Tensor& p = prob->value;
  require(p.rank() == 2 && p.shape() == target.shape(),
          "categorical_cross_entropy: prediction " + shape_string(p.shape()) + " vs target " +
              shape_string(target.shape()));
  const std::size_t rows = p.dim(0), k = p.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    int ones = 0;
    for (std::size_t i = 0; i < k; ++i) {
      double t = target[r * k + i];
      if (t == 1.0) {
        ++ones;
      } else if (t != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) {
      throw std::invalid_argument("categorical_cross_entropy: target row " + std::to_string(r) +
                                  " is not one-hot");
    }
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (target[i] == 1.0) loss -= std::log(std::clamp(p[i], kProbClamp, 1.0 - kProbClamp));
  loss /= static_cast<double>(rows);
  return make_node(Tensor::scalar(loss), {prob}, [target, rows](Node& self) {
    const double g = std::as_const(self.value).grad()[0];
    const Tensor& pv = self.parents[0]->value;
    auto dx = self.parents[0]->value.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (target[i] != 1.0) continue;
      double pi = pv[i];
      if (pi < kProbClamp || pi > 1.0 - kProbClamp) continue;
      dx[i] -= g / (pi * static_cast<double>(rows));
    }
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(x->value.size() == weights.size(), "weighted_sum: weights " + shape_string(weights.shape()) +
                                                 " vs input " + shape_string(x->value.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x->value[i] * weights[i];
  return make_node(Tensor::scalar(s), {x}, [weights](Node& self) {
    const double g = std::as_const(self.value).grad()[0];
    auto dx = self.parents[0]->value.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
  });
}

}  // namespace mscc::ops
