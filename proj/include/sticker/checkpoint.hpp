#pragma once

#include <filesystem>
#include <string>

#include "sticker/bundle.hpp"

namespace sticker {

inline constexpr int kCheckpointSchemaVersion = 1;

// Layout: 8-byte magic, u32 schema version, u64 header size, JSON header (config, base
// vocabulary, tensor directory, stage flags), then every tensor's float32 values followed
// by its trainability mask bytes, in ModelBundle::params() order.
void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& path);

// Validates the magic, schema version, vocabulary and every tensor name and shape.
// Throws FormatError.
ModelBundle<float> load_checkpoint(const std::filesystem::path& path);

// SHA-256 of the file bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace sticker
