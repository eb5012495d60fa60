#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mscc/autodiff.hpp"

namespace mscc {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t input_index = 0;
  std::size_t element_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

using GraphFragment = std::function<Var(const std::vector<Var>&)>;

/// Compares reverse-mode gradients of `fragment` against central
/// differences for every element of every input.
///
/// Outputs of any shape are reduced to a scalar through a fixed random
/// projection drawn from `seed`. Relative error is
/// |a - n| / max(|a|, |n|, floor); the floor keeps exactly-zero gradients
/// from dividing by zero.
///
/// The fragment is re-evaluated for every perturbation, so it must be a
/// pure function of its inputs (batch_norm callers should hand it fresh
/// running statistics each time).
GradCheckReport finite_difference_check(const GraphFragment& fragment, std::vector<Tensor> inputs,
                                        double h = 1e-5, std::uint64_t seed = 7,
                                        double floor = 1e-3);

}  // namespace mscc
