#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mscc/autodiff.hpp"

namespace mscc {

struct NamedParameter {
  std::string name;
  Var var;
};

struct AdamConfig {
  double lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Optimizer moments, one (m, v) pair per parameter in registration order.
struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One Adam update using the gradients stored on each parameter.
///
/// The step counter advances before bias correction. Elements whose gradient
/// is exactly zero are left untouched (value and moments), so a zero
/// gradient is the identity on parameters for any optimizer state. Any
/// non-finite gradient rejects the whole step with a NonFiniteError naming
/// the parameter; nothing is modified in that case.
void adam_step(std::span<const NamedParameter> params, AdamState& state);

}  // namespace mscc
