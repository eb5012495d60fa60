#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mscc/optim.hpp"
#include "mscc/tensor.hpp"

namespace mscc {

/// Weight container. On disk:
///
///   "MSCC1"  u32 version
///   u32 n_meta    { str key, str value }*
///   u32 n_tensor  { str name, u32 rank, u64 dims[rank], f64 data[] }*
///   u8  has_adam  [ u64 t, f64 lr, beta1, beta2, epsilon,
///                   u32 n { str name, f64 m[], f64 v[] }* ]
///
/// Integers and doubles are little-endian; str is u32 length + bytes. The
/// moments of optimizer entry i have the shape of the tensor of the same
/// name.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::optional<AdamState> optimizer;
  std::vector<std::string> optimizer_names;

  const Tensor* find(const std::string& name) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mscc
