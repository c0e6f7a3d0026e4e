#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mtdnet/network.hpp"

namespace mtdnet {

inline constexpr char kCheckpointMagic[9] = "MTDNETV1";  // 8 bytes on disk

/// Named-parameter snapshot plus the architecture that produced it.
/// On disk (all integers little-endian):
///   magic[8] | u32 header_len | header text (key=value net/loss config +
///   variant) | u64 seed | u32 epoch | u32 blob_count | blobs.
/// Each blob: u32 name_len | name bytes | u32 ndims | u32 dims[] | f32 data[].
/// Blob order and names are exactly parameter_spec(net, variant); round trips
/// are bit-exact.
struct Checkpoint {
  NetConfig net;
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  std::vector<std::pair<std::string, Tensor>> params;  // creation order
};

/// Copies the network's parameters into a checkpoint.
Checkpoint snapshot(const Network& net, std::uint64_t seed, std::uint32_t epoch);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws on truncated files, bad magic, or blobs that do not exactly match
/// the parameter set derived from the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads parameters into a built graph. The net's (config, variant) parameter
/// spec must match the checkpoint's exactly; the error names the first
/// mismatched parameter. Eval-mode graphs that instantiate a subset of the
/// layers (e.g. TestPair without the embedding head) take the subset they use.
void apply_checkpoint(Network& net, const Checkpoint& ckpt);

}  // namespace mtdnet
