#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dualvit/model.hpp"

namespace dualvit {

// Checkpoint "DVCP" v1, little-endian:
//   "DVCP" u32 version=1
//   u32 manifest length, manifest JSON (config plus "variant")
//   u32 entry count, then per entry:
//     u16 name length, name (UTF-8), u8 ndim, ndim x u32 dims, f32 payload
//   u32 CRC-32 (zlib) of every preceding byte
std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model);
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);

struct CheckpointManifest {
    ModelConfig config;
    AblationVariant variant = AblationVariant::D;
};

// Parses and verifies the container, builds a model from the embedded config
// and fills it.
Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes);
Model<float> load_checkpoint(const std::filesystem::path& path);
CheckpointManifest read_checkpoint_manifest(std::span<const std::uint8_t> bytes);

// Fills an existing model. ConfigError naming the first entry whose name or
// shape disagrees with the model's registry.
void load_checkpoint_into(Model<float>& model, std::span<const std::uint8_t> bytes);

}  // namespace dualvit
