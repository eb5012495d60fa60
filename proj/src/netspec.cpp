#include "mscc/netspec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

namespace mscc::net {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) pos = s.size();
    parts.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

// Small builder that keeps layer naming uniform.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::vector<LayerSpec>& layers) : layers_(layers) {}

  std::string add(std::string name, LayerKind kind, int kh, int kw, int filters,
                  std::vector<std::string> inputs) {
    layers_.push_back(LayerSpec{name, kind, kh, kw, filters, std::move(inputs)});
    return name;
  }

  // conv -> BN -> ReLU, returning the ReLU name.
  std::string conv_unit(const std::string& name, const std::string& input, int kh, int kw, int filters) {
    auto c = add(name + "_conv", LayerKind::Conv, kh, kw, filters, {input});
    auto b = add(name + "_bn", LayerKind::BatchNorm, 0, 0, 0, {c});
    return add(name + "_relu", LayerKind::Relu, 0, 0, 0, {b});
  }

  std::string up_unit(const std::string& name, const std::string& input, int filters) {
    auto u = add(name + "_upconv", LayerKind::UpConv, 2, 2, filters, {input});
    auto b = add(name + "_bn", LayerKind::BatchNorm, 0, 0, 0, {u});
    return add(name + "_relu", LayerKind::Relu, 0, 0, 0, {b});
  }

  std::string head(const std::string& input) {
    auto c = add("head_conv", LayerKind::Conv, 1, 1, 1, {input});
    auto b = add("head_bn", LayerKind::BatchNorm, 0, 0, 0, {c});
    return add("head_sigmoid", LayerKind::Sigmoid, 0, 0, 0, {b});
  }

 private:
  std::vector<LayerSpec>& layers_;
};

void check_input(const std::vector<int>& widths, FeatureShape input, int depth) {
  if (static_cast<int>(widths.size()) != depth + 1) {
    throw SpecError("width schedule needs " + std::to_string(depth + 1) + " entries, got " +
                    std::to_string(widths.size()));
  }
  for (int w : widths)
    if (w < 1) throw SpecError("width schedule entries must be positive");
  const int factor = 1 << depth;
  if (input.channels < 1 || input.height < 1 || input.width < 1) {
    throw SpecError("input shape must be positive");
  }
  if (input.height % factor != 0 || input.width % factor != 0) {
    throw SpecError("input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                    " is not divisible by " + std::to_string(factor));
  }
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::UpConv: return "upconv";
    case LayerKind::Concat: return "concat";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view text) {
  static const std::map<std::string, LayerKind, std::less<>> kinds = {
      {"conv", LayerKind::Conv},       {"bn", LayerKind::BatchNorm},     {"relu", LayerKind::Relu},
      {"maxpool", LayerKind::MaxPool}, {"upconv", LayerKind::UpConv},    {"concat", LayerKind::Concat},
      {"sigmoid", LayerKind::Sigmoid}, {"softmax", LayerKind::Softmax}, {"dense", LayerKind::Dense}};
  auto it = kinds.find(text);
  if (it == kinds.end()) throw SpecError("unknown layer kind '" + std::string(text) + "'");
  return it->second;
}

BlockVariant parse_block_variant(std::string_view text) {
  auto t = lower(text);
  if (t == "i" || t == "1" || t == "b1" || t == "block1" || t == "block-i") return BlockVariant::BlockI;
  if (t == "ii" || t == "2" || t == "b2" || t == "block2" || t == "block-ii") return BlockVariant::BlockII;
  if (t == "iii" || t == "3" || t == "b3" || t == "block3" || t == "block-iii") return BlockVariant::BlockIII;
  throw SpecError("unknown block variant '" + std::string(text) + "'");
}

Architecture parse_architecture(std::string_view text) {
  auto t = lower(text);
  if (t == "unet" || t == "u-net") return Architecture::UNet;
  if (t == "b1") return Architecture::MuNetB1;
  if (t == "b2") return Architecture::MuNetB2;
  if (t == "b3") return Architecture::MuNetB3;
  throw SpecError("unknown architecture '" + std::string(text) + "' (expected unet, b1, b2, b3)");
}

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::UNet: return "unet";
    case Architecture::MuNetB1: return "b1";
    case Architecture::MuNetB2: return "b2";
    case Architecture::MuNetB3: return "b3";
  }
  return "?";
}

const std::string& NetworkSpec::output() const {
  if (layers.empty()) throw SpecError("network '" + name + "' has no layers");
  return layers.back().name;
}

const LayerSpec* NetworkSpec::find(std::string_view layer) const {
  for (const auto& l : layers)
    if (l.name == layer) return &l;
  return nullptr;
}

std::vector<int> unet_widths() { return {64, 128, 256, 512, 1024}; }
std::vector<int> mu_net_widths() { return {16, 32, 64, 128, 256}; }

std::vector<int> scale_widths(const std::vector<int>& widths, double scale) {
  std::vector<int> out;
  out.reserve(widths.size());
  for (int w : widths) out.push_back(std::max(1, static_cast<int>(std::lround(w * scale))));
  return out;
}

NetworkSpec build_unet(const std::vector<int>& widths, FeatureShape input) {
  constexpr int depth = 4;
  check_input(widths, input, depth);
  NetworkSpec spec;
  spec.name = "unet";
  spec.input = input;
  spec.width_schedule = widths;
  spec.depth = depth;
  GraphBuilder g(spec.layers);

  std::string x(kInputName);
  std::vector<std::string> skips;
  for (int level = 0; level < depth; ++level) {
    const std::string p = "enc" + std::to_string(level + 1);
    x = g.conv_unit(p + "_1", x, 3, 3, widths[level]);
    x = g.conv_unit(p + "_2", x, 3, 3, widths[level]);
    skips.push_back(x);
    x = g.add(p + "_pool", LayerKind::MaxPool, 2, 2, 0, {x});
  }
  x = g.conv_unit("bottleneck_1", x, 3, 3, widths[depth]);
  x = g.conv_unit("bottleneck_2", x, 3, 3, widths[depth]);
  for (int level = depth - 1; level >= 0; --level) {
    const std::string p = "dec" + std::to_string(level + 1);
    auto up = g.up_unit(p + "_up", x, widths[level]);
    auto cat = g.add(p + "_concat", LayerKind::Concat, 0, 0, 0, {skips[level], up});
    spec.skip_pairs.emplace_back(skips[level], cat);
    x = g.conv_unit(p + "_1", cat, 3, 3, widths[level]);
    x = g.conv_unit(p + "_2", x, 3, 3, widths[level]);
  }
  g.head(x);
  return spec;
}

BlockGraph build_block(BlockVariant variant, const std::string& prefix, const std::string& input,
                       int filters) {
  if (filters < 1) throw SpecError("block filters must be positive");
  BlockGraph block;
  GraphBuilder g(block.layers);
  std::vector<std::string> parts;
  switch (variant) {
    case BlockVariant::BlockI:
      for (int k : {1, 3, 5, 7}) {
        auto tag = std::to_string(k) + "x" + std::to_string(k);
        parts.push_back(g.conv_unit(prefix + "_b" + tag, input, k, k, filters));
      }
      break;
    case BlockVariant::BlockII: {
      std::string x = input;
      for (int u = 1; u <= 3; ++u) {
        x = g.conv_unit(prefix + "_u" + std::to_string(u), x, 3, 3, filters);
        parts.push_back(x);
      }
      break;
    }
    case BlockVariant::BlockIII: {
      std::string x = input;
      for (int u = 1; u <= 3; ++u) {
        const std::string p = prefix + "_u" + std::to_string(u);
        x = g.conv_unit(p + "_3x1", x, 3, 1, filters);
        x = g.conv_unit(p + "_1x3", x, 1, 3, filters);
        parts.push_back(x);
      }
      break;
    }
  }
  auto cat = g.add(prefix + "_concat", LayerKind::Concat, 0, 0, 0, parts);
  block.output = g.conv_unit(prefix + "_proj", cat, 1, 1, filters);
  return block;
}

NetworkSpec build_block_network(BlockVariant variant, int in_channels, int filters, int spatial) {
  NetworkSpec spec;
  spec.name = "block";
  spec.input = FeatureShape{in_channels, spatial, spatial, false};
  spec.width_schedule = {filters};
  auto block = build_block(variant, "block", std::string(kInputName), filters);
  spec.layers = std::move(block.layers);
  infer_shapes(spec);
  return spec;
}

NetworkSpec build_mu_net(BlockVariant variant, FeatureShape input, const std::vector<int>& widths) {
  constexpr int depth = 4;
  check_input(widths, input, depth);
  NetworkSpec spec;
  switch (variant) {
    case BlockVariant::BlockI: spec.name = "mu_net_b1"; break;
    case BlockVariant::BlockII: spec.name = "mu_net_b2"; break;
    case BlockVariant::BlockIII: spec.name = "mu_net_b3"; break;
  }
  spec.input = input;
  spec.width_schedule = widths;
  spec.depth = depth;
  GraphBuilder g(spec.layers);

  auto append = [&](BlockGraph b) {
    for (auto& l : b.layers) spec.layers.push_back(std::move(l));
    return b.output;
  };

  std::string x(kInputName);
  std::vector<std::string> skips;
  for (int level = 0; level < depth; ++level) {
    const std::string p = "block" + std::to_string(level + 1);
    x = append(build_block(variant, p, x, widths[level]));
    skips.push_back(x);
    x = g.add(p + "_pool", LayerKind::MaxPool, 2, 2, 0, {x});
  }
  x = append(build_block(variant, "block5", x, widths[depth]));
  for (int level = depth - 1; level >= 0; --level) {
    const std::string p = "block" + std::to_string(9 - level);
    auto up = g.up_unit(p + "_up", x, widths[level]);
    auto cat = g.add(p + "_skip", LayerKind::Concat, 0, 0, 0, {skips[level], up});
    spec.skip_pairs.emplace_back(skips[level], cat);
    x = append(build_block(variant, p, cat, widths[level]));
  }
  g.head(x);
  return spec;
}

NetworkSpec build_architecture(Architecture arch, FeatureShape input, double width_scale) {
  switch (arch) {
    case Architecture::UNet: return build_unet(scale_widths(unet_widths(), width_scale), input);
    case Architecture::MuNetB1:
      return build_mu_net(BlockVariant::BlockI, input, scale_widths(mu_net_widths(), width_scale));
    case Architecture::MuNetB2:
      return build_mu_net(BlockVariant::BlockII, input, scale_widths(mu_net_widths(), width_scale));
    case Architecture::MuNetB3:
      return build_mu_net(BlockVariant::BlockIII, input, scale_widths(mu_net_widths(), width_scale));
  }
  throw SpecError("unknown architecture");
}

NetworkSpec build_patch_classifier(int patch_size) {
  if (patch_size < 4) throw SpecError("patch size must be at least 4, got " + std::to_string(patch_size));
  if (patch_size % 2 != 0) throw SpecError("patch size must be even for the 2x2 pool");
  NetworkSpec spec;
  spec.name = "patch_classifier";
  spec.input = FeatureShape{1, patch_size, patch_size, false};
  spec.width_schedule = {8, 16};
  GraphBuilder g(spec.layers);
  auto x = g.conv_unit("stage1", std::string(kInputName), 3, 3, 8);
  x = g.conv_unit("stage2", x, 3, 3, 16);
  x = g.add("pool", LayerKind::MaxPool, 2, 2, 0, {x});
  x = g.add("logits", LayerKind::Dense, 0, 0, 2, {x});
  g.add("softmax", LayerKind::Softmax, 0, 0, 0, {x});
  return spec;
}

std::vector<FeatureShape> infer_shapes(const NetworkSpec& spec) {
  std::map<std::string, FeatureShape, std::less<>> known;
  known.emplace(std::string(kInputName), spec.input);
  std::vector<FeatureShape> shapes;
  shapes.reserve(spec.layers.size());

  for (const auto& layer : spec.layers) {
    if (layer.name.empty() || layer.name == kInputName) {
      throw SpecError("invalid layer name '" + layer.name + "'");
    }
    if (known.count(layer.name)) throw SpecError("duplicate layer name '" + layer.name + "'");
    if (layer.inputs.empty()) throw SpecError("layer '" + layer.name + "' has no inputs");
    std::vector<FeatureShape> in;
    for (const auto& name : layer.inputs) {
      auto it = known.find(name);
      if (it == known.end()) {
        throw SpecError("layer '" + layer.name + "' reads '" + name +
                        "', which is not produced by an earlier layer");
      }
      in.push_back(it->second);
    }
    const bool multi = layer.kind == LayerKind::Concat;
    if (!multi && in.size() != 1) throw SpecError("layer '" + layer.name + "' takes exactly one input");

    FeatureShape s = in.front();
    auto need_spatial = [&] {
      if (s.flat) throw SpecError("layer '" + layer.name + "' needs a spatial input");
    };
    switch (layer.kind) {
      case LayerKind::Conv:
        need_spatial();
        if (layer.kernel_h < 1 || layer.kernel_w < 1 || layer.kernel_h % 2 == 0 || layer.kernel_w % 2 == 0) {
          throw SpecError("conv '" + layer.name + "' needs odd kernel dims");
        }
        if (layer.filters < 1) throw SpecError("conv '" + layer.name + "' needs filters");
        s.channels = layer.filters;
        break;
      case LayerKind::UpConv:
        need_spatial();
        if (layer.kernel_h < 1 || layer.kernel_w < 1 || layer.filters < 1) {
          throw SpecError("upconv '" + layer.name + "' needs a kernel and filters");
        }
        s.channels = layer.filters;
        s.height *= 2;
        s.width *= 2;
        break;
      case LayerKind::MaxPool:
        need_spatial();
        if (s.height % 2 != 0 || s.width % 2 != 0) {
          throw SpecError("maxpool '" + layer.name + "' input " + std::to_string(s.height) + "x" +
                          std::to_string(s.width) + " is not even");
        }
        s.height /= 2;
        s.width /= 2;
        break;
      case LayerKind::Concat: {
        int channels = 0;
        for (const auto& o : in) {
          if (o.flat || o.height != s.height || o.width != s.width) {
            throw SpecError("concat '" + layer.name + "' operands disagree on spatial size");
          }
          channels += o.channels;
        }
        s.channels = channels;
        break;
      }
      case LayerKind::Dense:
        if (layer.filters < 1) throw SpecError("dense '" + layer.name + "' needs units");
        s = FeatureShape{layer.filters, 1, 1, true};
        break;
      case LayerKind::Softmax:
        if (!s.flat) throw SpecError("softmax '" + layer.name + "' needs a flat input");
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Relu:
      case LayerKind::Sigmoid:
        break;
    }
    known.emplace(layer.name, s);
    shapes.push_back(s);
  }
  return shapes;
}

ParameterCount count_parameters(const NetworkSpec& spec) {
  ParameterCount count;
  if (spec.layers.empty()) return count;
  auto shapes = infer_shapes(spec);
  std::map<std::string, FeatureShape, std::less<>> by_name;
  by_name.emplace(std::string(kInputName), spec.input);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) by_name.emplace(spec.layers[i].name, shapes[i]);

  for (const auto& layer : spec.layers) {
    const FeatureShape& in = by_name.at(layer.inputs.front());
    LayerParameterCount lc{layer.name, layer.kind, 0, 0};
    const auto c = static_cast<std::size_t>(in.channels);
    const auto f = static_cast<std::size_t>(layer.filters);
    const auto k = static_cast<std::size_t>(layer.kernel_h) * static_cast<std::size_t>(layer.kernel_w);
    switch (layer.kind) {
      case LayerKind::Conv:
      case LayerKind::UpConv:
        lc.trainable = f * (k * c + 1);
        break;
      case LayerKind::BatchNorm:
        lc.trainable = 2 * c;
        lc.non_trainable = 2 * c;
        break;
      case LayerKind::Dense:
        lc.trainable = f * (in.numel() + 1);
        break;
      default:
        break;
    }
    count.trainable += lc.trainable;
    count.non_trainable += lc.non_trainable;
    count.layers.push_back(std::move(lc));
  }
  return count;
}

std::string serialize(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "# mscc-netspec 1\n";
  out << "# name " << spec.name << "\n";
  out << "# input " << spec.input.channels << "x" << spec.input.height << "x" << spec.input.width << "\n";
  out << "# widths ";
  for (std::size_t i = 0; i < spec.width_schedule.size(); ++i) out << (i ? "," : "") << spec.width_schedule[i];
  out << "\n# depth " << spec.depth << "\n";
  out << "# skips ";
  for (std::size_t i = 0; i < spec.skip_pairs.size(); ++i) {
    out << (i ? "," : "") << spec.skip_pairs[i].first << ":" << spec.skip_pairs[i].second;
  }
  out << "\n";
  for (const auto& l : spec.layers) {
    out << l.name << ' ' << to_string(l.kind) << ' ' << l.kernel_h << 'x' << l.kernel_w << ' ' << l.filters
        << " inputs=";
    for (std::size_t i = 0; i < l.inputs.size(); ++i) out << (i ? "," : "") << l.inputs[i];
    out << "\n";
  }
  return out.str();
}

NetworkSpec parse_network_spec(std::string_view text) {
  NetworkSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw SpecError("network spec line " + std::to_string(line_no) + ": " + why);
  };
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      int v = std::stoi(s, &used);
      if (used != s.size()) fail("bad integer '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("bad integer '" + s + "'");
    }
    return 0;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key, value;
      hs >> key;
      std::getline(hs >> std::ws, value);
      if (key == "name") {
        spec.name = value;
      } else if (key == "input") {
        auto dims = split(value, 'x');
        if (dims.size() != 3) fail("input must be CxHxW");
        spec.input = FeatureShape{to_int(dims[0]), to_int(dims[1]), to_int(dims[2]), false};
      } else if (key == "widths") {
        if (!value.empty())
          for (const auto& w : split(value, ',')) spec.width_schedule.push_back(to_int(w));
      } else if (key == "depth") {
        spec.depth = to_int(value);
      } else if (key == "skips") {
        if (!value.empty())
          for (const auto& pair : split(value, ',')) {
            auto ab = split(pair, ':');
            if (ab.size() != 2) fail("skip pair must be a:b");
            spec.skip_pairs.emplace_back(ab[0], ab[1]);
          }
      }
      continue;
    }
    std::istringstream ls(line);
    std::string name, kind, kernel, filters, inputs;
    if (!(ls >> name >> kind >> kernel >> filters >> inputs)) fail("expected 'name kind kHxkW filters inputs=...'");
    LayerSpec l;
    l.name = name;
    l.kind = parse_layer_kind(kind);
    auto kdims = split(kernel, 'x');
    if (kdims.size() != 2) fail("kernel must be kHxkW");
    l.kernel_h = to_int(kdims[0]);
    l.kernel_w = to_int(kdims[1]);
    l.filters = to_int(filters);
    if (inputs.rfind("inputs=", 0) != 0) fail("expected inputs=...");
    auto list = inputs.substr(7);
    if (!list.empty()) l.inputs = split(list, ',');
    spec.layers.push_back(std::move(l));
  }
  if (!spec.layers.empty()) infer_shapes(spec);
  return spec;
}

}  // namespace mscc::net
