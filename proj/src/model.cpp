#include "mscc/model.hpp"

#include <cmath>
#include <unordered_map>

namespace mscc {

using net::LayerKind;

Model::Model(net::NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  auto shapes = net::infer_shapes(spec_);
  std::unordered_map<std::string, net::FeatureShape> by_name;
  by_name.emplace(std::string(net::kInputName), spec_.input);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) by_name.emplace(spec_.layers[i].name, shapes[i]);

  Rng rng(seed);
  state_.resize(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    const auto in = by_name.at(layer.inputs.front());
    const auto c = static_cast<std::size_t>(in.channels);
    const auto f = static_cast<std::size_t>(layer.filters);
    const auto kh = static_cast<std::size_t>(layer.kernel_h);
    const auto kw = static_cast<std::size_t>(layer.kernel_w);
    auto& st = state_[i];
    switch (layer.kind) {
      case LayerKind::Conv: {
        double limit = std::sqrt(6.0 / static_cast<double>(c * kh * kw));
        st.weight = make_leaf(random_uniform({f, c, kh, kw}, -limit, limit, rng), true);
        st.bias = make_leaf(Tensor({f}, 0.0), true);
        break;
      }
      case LayerKind::UpConv: {
        // Each output pixel of a stride-k transpose conv sees C inputs.
        double limit = std::sqrt(6.0 / static_cast<double>(c));
        st.weight = make_leaf(random_uniform({c, f, kh, kw}, -limit, limit, rng), true);
        st.bias = make_leaf(Tensor({f}, 0.0), true);
        break;
      }
      case LayerKind::Dense: {
        const std::size_t fan_in = in.numel();
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        st.weight = make_leaf(random_uniform({f, fan_in}, -limit, limit, rng), true);
        st.bias = make_leaf(Tensor({f}, 0.0), true);
        break;
      }
      case LayerKind::BatchNorm:
        st.weight = make_leaf(Tensor({c}, 1.0), true);
        st.bias = make_leaf(Tensor({c}, 0.0), true);
        st.stats.mean = Tensor({c}, 0.0);
        st.stats.var = Tensor({c}, 1.0);
        break;
      default:
        break;
    }
    if (st.weight) {
      const bool bn = layer.kind == LayerKind::BatchNorm;
      params_.push_back({layer.name + (bn ? ".gamma" : ".weight"), st.weight});
      params_.push_back({layer.name + (bn ? ".beta" : ".bias"), st.bias});
    }
  }
}

Var Model::forward(const Var& input, ops::Mode mode) {
  const auto& x = input->value;
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(spec_.input.channels) ||
      x.dim(2) != static_cast<std::size_t>(spec_.input.height) ||
      x.dim(3) != static_cast<std::size_t>(spec_.input.width)) {
    throw ShapeError("model '" + spec_.name + "': input " + shape_string(x.shape()) + " does not match (N," +
                     std::to_string(spec_.input.channels) + "," + std::to_string(spec_.input.height) + "," +
                     std::to_string(spec_.input.width) + ")");
  }
  std::unordered_map<std::string, Var> values;
  values.emplace(std::string(net::kInputName), input);

  // Drop activations once their last consumer has run.
  std::unordered_map<std::string, std::size_t> last_use;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i)
    for (const auto& name : spec_.layers[i].inputs) last_use[name] = i;

  Var out;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    auto& st = state_[i];
    const Var& a = values.at(layer.inputs.front());
    switch (layer.kind) {
      case LayerKind::Conv: out = ops::conv2d(a, st.weight, st.bias); break;
      case LayerKind::UpConv: out = ops::transpose_conv2d(a, st.weight, st.bias, 2); break;
      case LayerKind::BatchNorm:
        out = ops::batch_norm(a, st.weight, st.bias, mode, st.stats, bn_options_);
        break;
      case LayerKind::Relu: out = ops::relu(a); break;
      case LayerKind::Sigmoid: out = ops::sigmoid(a); break;
      case LayerKind::Softmax: out = ops::softmax(a); break;
      case LayerKind::MaxPool: out = ops::maxpool2x2(a); break;
      case LayerKind::Dense: {
        Var flat = a->value.rank() == 2 ? a : ops::flatten(a);
        out = ops::dense(flat, st.weight, st.bias);
        break;
      }
      case LayerKind::Concat: {
        std::vector<Var> parts;
        for (const auto& name : layer.inputs) parts.push_back(values.at(name));
        out = ops::concat_channels(parts);
        break;
      }
    }
    for (const auto& name : layer.inputs)
      if (last_use[name] == i) values.erase(name);
    values[layer.name] = out;
  }
  return out;
}

void Model::zero_grad() {
  for (auto& p : params_) p.var->value.zero_grad();
}

Checkpoint Model::to_checkpoint(const AdamState* optimizer, std::map<std::string, std::string> metadata) const {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  ckpt.metadata["netspec"] = net::serialize(spec_);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    const auto& st = state_[i];
    if (!st.weight) continue;
    const bool bn = layer.kind == LayerKind::BatchNorm;
    Tensor w(st.weight->value.shape(), std::vector<double>(st.weight->value.values().begin(),
                                                           st.weight->value.values().end()));
    Tensor b(st.bias->value.shape(), std::vector<double>(st.bias->value.values().begin(),
                                                         st.bias->value.values().end()));
    ckpt.tensors.emplace_back(layer.name + (bn ? ".gamma" : ".weight"), std::move(w));
    ckpt.tensors.emplace_back(layer.name + (bn ? ".beta" : ".bias"), std::move(b));
    if (bn) {
      ckpt.tensors.emplace_back(layer.name + ".running_mean", st.stats.mean);
      ckpt.tensors.emplace_back(layer.name + ".running_var", st.stats.var);
    }
  }
  if (optimizer) {
    ckpt.optimizer = *optimizer;
    for (const auto& p : params_) ckpt.optimizer_names.push_back(p.name);
  }
  return ckpt;
}

void Model::load_weights(const Checkpoint& ckpt) {
  auto copy_into = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw CheckpointError("checkpoint is missing tensor " + name);
    if (src->shape() != dst.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_string(src->shape()) +
                            ", model expects " + shape_string(dst.shape()));
    }
    std::copy(src->values().begin(), src->values().end(), dst.values().begin());
  };
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    auto& st = state_[i];
    if (!st.weight) continue;
    const bool bn = layer.kind == LayerKind::BatchNorm;
    copy_into(layer.name + (bn ? ".gamma" : ".weight"), st.weight->value);
    copy_into(layer.name + (bn ? ".beta" : ".bias"), st.bias->value);
    if (bn) {
      copy_into(layer.name + ".running_mean", st.stats.mean);
      copy_into(layer.name + ".running_var", st.stats.var);
    }
  }
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  auto it = ckpt.metadata.find("netspec");
  if (it == ckpt.metadata.end()) throw CheckpointError("checkpoint carries no network spec");
  Model model(net::parse_network_spec(it->second), 0);
  model.load_weights(ckpt);
  return model;
}

}  // namespace mscc
