// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact model serialization.
//
// Layout: magic "MFFU" | u32 version | u64 config-text length | config JSON |
// u32 tensor count | per tensor (u16 name length, name, u8 rank, u32 dims...,
// f32 values...) | u64 FNV-1a checksum over all preceding bytes.
// All integers and floats little-endian.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mffu/model.hpp"

namespace mffu {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> checkpoint_bytes(const Model<float>& m);
Model<float> checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model<float>& m, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace mffu
