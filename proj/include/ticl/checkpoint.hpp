#pragma once

#include <string>

#include <json.hpp>

#include "ticl/continual.hpp"

namespace ticl {

// Binary checkpoint, little-endian throughout:
//   "TICL" | u32 version | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f32 data
//   u64 meta_len | UTF-8 JSON metadata
// Tensors are the student extractor in registry order, then token.{id},
// head.{id}.w, head.{id}.b per task ascending. Metadata holds the step, the
// per-task class lists, the encoder geometry and a config echo. Files are
// written to a temp path and renamed, so a failed save leaves nothing behind.

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ContinualLearner& learner,
                     const nlohmann::json& config_echo);

ContinualLearner load_checkpoint(const std::string& path,
                                 nlohmann::json* config_echo = nullptr);

} // namespace ticl
