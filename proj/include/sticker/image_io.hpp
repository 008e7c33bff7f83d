#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sticker/corpus.hpp"

namespace sticker {

// PNG I/O for 8-bit RGB rasters. Any PNG colour type is converted to RGB on read.
// Failures throw FormatError.
void write_png(const std::filesystem::path& path, const Raster& raster);
Raster read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Raster& raster);
Raster decode_png(std::span<const std::uint8_t> bytes);

// Bilinear resampling with pixel-centre alignment.
Raster resize_bilinear(const Raster& src, int width, int height);

}  // namespace sticker
