#ifndef PHASEFORGE_CHECKPOINT_HPP
#define PHASEFORGE_CHECKPOINT_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phaseforge/tensor.hpp"

namespace phaseforge {

// Single-file checkpoint archive: magic line, JSON header (configs +
// metadata + parameter table), then raw little-endian float64 blobs in
// table order.
inline constexpr char kCheckpointMagic[] = "PHASEFORGE-CKPT-v1";

struct CheckpointBlob {
  nlohmann::json header;  // "kind", "config", "schedule", "meta"
  std::vector<std::pair<std::string, Tensor>> params;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointBlob& blob);
CheckpointBlob load_checkpoint(const std::filesystem::path& path);

}  // namespace phaseforge

#endif
