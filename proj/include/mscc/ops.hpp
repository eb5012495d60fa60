#pragma once

#include <span>
#include <vector>

#include "mscc/autodiff.hpp"

namespace mscc::ops {

enum class Padding { Same, Valid };
enum class Mode { Train, Infer };

/// Clamp applied to probabilities before any logarithm in the losses.
inline constexpr double kProbClamp = 1e-7;

/// 2-D cross-correlation. input (N,C,H,W), kernel (F,C,kH,kW) with odd kH
/// and kW, bias (F). "Same" pads (k-1)/2 on each side.
Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride = 1,
           Padding padding = Padding::Same);

/// Transposed convolution (scatter form). input (N,C,H,W), kernel
/// (C,F,kH,kW), bias (F). Output is (N,F,H*stride,W*stride); taps that land
/// outside that window are dropped.
Var transpose_conv2d(const Var& input, const Var& kernel, const Var& bias, int stride = 2);

struct RunningStats {
  Tensor mean;
  Tensor var;
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  /// Weight of the current batch in the running-average update.
  double momentum = 0.1;
};

/// Per-channel normalization of (N,C,H,W) or (N,C). Train mode uses the
/// biased batch variance and updates `running`; infer mode reads it.
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, Mode mode,
               RunningStats& running, const BatchNormOptions& options = {});

/// 2x2 max pool, stride 2. Ties route the gradient to the first window
/// position in row-major order.
Var maxpool2x2(const Var& input);

/// Concatenation along the channel axis, in operand order.
Var concat_channels(const std::vector<Var>& inputs);

Var relu(const Var& x);
Var sigmoid(const Var& x);
/// Softmax over the last axis of an (N,K) tensor.
Var softmax(const Var& x);

/// Reshape to (N, prod(rest)).
Var flatten(const Var& x);

/// y = x W^T + b with x (N,in), W (out,in), b (out).
Var dense(const Var& x, const Var& weight, const Var& bias);

/// Mean binary cross-entropy over every element. `target` must be 0/1.
Var binary_cross_entropy(const Var& prob, const Tensor& target);

/// Mean categorical cross-entropy over rows of an (N,K) probability tensor;
/// `target` must be one-hot with the same shape.
Var categorical_cross_entropy(const Var& prob, const Tensor& target);

/// Scalar sum(x * weights); used to reduce arbitrary outputs for gradient
/// checks.
Var weighted_sum(const Var& x, const Tensor& weights);

}  // namespace mscc::ops
