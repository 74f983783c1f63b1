#pragma once

#include "rcnet/model.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace rcnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'R', 'C', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary little-endian layout:
///   "RCN1" | version u32 | 6 channel counts, convs_per_block, in_channels,
///   num_classes (u32 each) | tensor count u32 | per tensor: name length u16,
///   UTF-8 name, rank u8, dims u32 each, f32 payload row-major.
std::string serialize_checkpoint(const ModelParams<float>& params);
ModelParams<float> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace rcnet
