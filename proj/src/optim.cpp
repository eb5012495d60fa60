#include "mscc/optim.hpp"

#include <cmath>

namespace mscc {

void adam_step(std::span<const NamedParameter> params, AdamState& state) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.var->value.shape(), 0.0);
      state.v.emplace_back(p.var->value.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& value = params[k].var->value;
    if (state.m[k].shape() != value.shape() || state.v[k].shape() != value.shape()) {
      throw ShapeError("adam_step: moment shape mismatch for " + params[k].name);
    }
    for (double g : value.grad()) {
      if (!std::isfinite(g)) {
        throw NonFiniteError("adam_step: non-finite gradient in parameter " + params[k].name);
      }
    }
  }

  state.t += 1;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k].var->value;
    auto g = std::as_const(value).grad();
    if (g.empty()) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (g[i] == 0.0) continue;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace mscc
