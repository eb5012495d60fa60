#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mscc/checkpoint.hpp"
#include "mscc/netspec.hpp"
#include "mscc/ops.hpp"
#include "mscc/optim.hpp"

namespace mscc {

/// Trainable instance of a NetworkSpec. Parameters are named
/// "<layer>.weight", ".bias", ".gamma", ".beta"; BN running statistics are
/// stored as ".running_mean" / ".running_var".
///
/// Weights use fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
/// drawn in layer order from `seed`; biases and BN shifts start at 0, BN
/// scales at 1.
class Model {
 public:
  Model(net::NetworkSpec spec, std::uint64_t seed);
  // Parameters are shared graph leaves; copies would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Rebuilds the spec stored in the checkpoint metadata and loads weights.
  static Model from_checkpoint(const Checkpoint& ckpt);

  Var forward(const Var& input, ops::Mode mode);
  Var forward(const Tensor& input, ops::Mode mode) { return forward(make_leaf(input), mode); }

  const std::vector<NamedParameter>& parameters() const { return params_; }
  void zero_grad();

  const net::NetworkSpec& spec() const { return spec_; }
  ops::BatchNormOptions& batch_norm_options() { return bn_options_; }

  /// Weights, running statistics, the serialized spec and (optionally) the
  /// optimizer state.
  Checkpoint to_checkpoint(const AdamState* optimizer = nullptr,
                           std::map<std::string, std::string> metadata = {}) const;
  void load_weights(const Checkpoint& ckpt);

 private:
  struct LayerState {
    Var weight;
    Var bias;
    ops::RunningStats stats;
  };

  net::NetworkSpec spec_;
  std::vector<LayerState> state_;
  std::vector<NamedParameter> params_;
  ops::BatchNormOptions bn_options_;
};

}  // namespace mscc
