#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mscc::net {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind { Conv, BatchNorm, Relu, MaxPool, UpConv, Concat, Sigmoid, Softmax, Dense };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

/// Name of the implicit graph input that first layers read from.
inline constexpr std::string_view kInputName = "input";

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int kernel_h = 0;
  int kernel_w = 0;
  int filters = 0;
  std::vector<std::string> inputs;

  bool operator==(const LayerSpec&) const = default;
};

/// Per-sample activation shape. Dense outputs are `flat` (channels = units).
struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool flat = false;

  std::size_t numel() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  bool operator==(const FeatureShape&) const = default;
};

enum class BlockVariant { BlockI, BlockII, BlockIII };
enum class Architecture { UNet, MuNetB1, MuNetB2, MuNetB3 };

/// Accepts "I"/"II"/"III", "1"/"2"/"3", "b1"/"b2"/"b3" (case-insensitive).
BlockVariant parse_block_variant(std::string_view text);
/// Accepts "unet", "b1", "b2", "b3".
Architecture parse_architecture(std::string_view text);
std::string_view to_string(Architecture arch);

struct NetworkSpec {
  std::string name;
  FeatureShape input;
  std::vector<LayerSpec> layers;
  std::vector<int> width_schedule;
  int depth = 0;
  /// (encoder producer, decoder consumer) pairs joined by a skip concat.
  std::vector<std::pair<std::string, std::string>> skip_pairs;

  const std::string& output() const;
  const LayerSpec* find(std::string_view layer) const;
  bool operator==(const NetworkSpec&) const = default;
};

/// Filter counts of the classic U-Net.
std::vector<int> unet_widths();
/// Filter counts of the multiscale U-Net, Block 1/9 through Block 5.
std::vector<int> mu_net_widths();
/// Multiplies every width by `scale`, rounding to nearest, minimum 1.
std::vector<int> scale_widths(const std::vector<int>& widths, double scale);

/// Classic U-Net: two 3x3 conv+BN+ReLU units per level, 2x2 max-pool
/// down, 2x2 stride-2 transpose conv up, skip concat, 1x1 conv + BN +
/// sigmoid head producing one channel.
NetworkSpec build_unet(const std::vector<int>& widths, FeatureShape input);

struct BlockGraph {
  std::vector<LayerSpec> layers;
  std::string output;
};

/// One multiscale block reading `input` and producing `filters` channels.
///
///  - BlockI: parallel 1x1, 3x3, 5x5, 7x7 conv+BN+ReLU branches, concat
///    (4F), 1x1 projection to F.
///  - BlockII: chain of three 3x3 units; the three unit outputs are
///    concatenated (3F) and projected to F.
///  - BlockIII: BlockII with each 3x3 unit factorized into 3x1 then 1x3,
///    each followed by BN + ReLU.
BlockGraph build_block(BlockVariant variant, const std::string& prefix, const std::string& input,
                       int filters);

/// A standalone network holding a single block, for counting and tests.
NetworkSpec build_block_network(BlockVariant variant, int in_channels, int filters, int spatial = 8);

/// U-Net skeleton with each two-conv level replaced by one block: blocks 1-4
/// encode, block 5 is the bottleneck, blocks 6-9 decode (block k pairs with
/// block 10-k through a skip).
NetworkSpec build_mu_net(BlockVariant variant, FeatureShape input,
                         const std::vector<int>& widths = mu_net_widths());

/// U-Net at unet_widths() or mU-Net at mu_net_widths(), each scaled.
NetworkSpec build_architecture(Architecture arch, FeatureShape input, double width_scale = 1.0);

/// Compact two-class patch classifier: conv 3x3 (8) + BN + ReLU, conv 3x3
/// (16) + BN + ReLU, 2x2 max-pool, dense to 2 logits, softmax.
NetworkSpec build_patch_classifier(int patch_size = 8);

/// Validates the DAG and propagates shapes. Result is parallel to
/// spec.layers.
std::vector<FeatureShape> infer_shapes(const NetworkSpec& spec);

struct LayerParameterCount {
  std::string name;
  LayerKind kind;
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
};

struct ParameterCount {
  std::vector<LayerParameterCount> layers;
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
  std::size_t total() const { return trainable + non_trainable; }
};

/// conv/upconv: F(kH kW C + 1); BN: 2C trainable + 2C running; dense:
/// out(in + 1).
ParameterCount count_parameters(const NetworkSpec& spec);

/// Line format: header comments ("# key value") then one layer per line,
/// `name kind kHxkW filters inputs=a,b`.
std::string serialize(const NetworkSpec& spec);
NetworkSpec parse_network_spec(std::string_view text);

}  // namespace mscc::net
