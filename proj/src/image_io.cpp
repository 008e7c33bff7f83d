#include "sticker/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sticker/error.hpp"

namespace sticker {
namespace {

Raster finish_read(png_image& image, const std::string& what) {
    image.format = PNG_FORMAT_RGB;
    if (image.width == 0 || image.height == 0 || image.width > 8192 || image.height > 8192) {
        png_image_free(&image);
        throw FormatError(what + ": unsupported image size");
    }
    Raster out(static_cast<int>(image.width), static_cast<int>(image.height));
    if (png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr) == 0) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(what + ": " + msg);
    }
    return out;
}

void check_raster(const Raster& r) {
    if (r.width <= 0 || r.height <= 0 ||
        r.rgb.size() != static_cast<std::size_t>(r.width) * r.height * 3) {
        throw InvalidArgument("raster buffer does not match its dimensions");
    }
}

}  // namespace

void write_png(const std::filesystem::path& path, const Raster& raster) {
    check_raster(raster);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = PNG_FORMAT_RGB;
    if (png_image_write_to_file(&image, path.c_str(), 0, raster.rgb.data(), 0, nullptr) == 0) {
        throw FormatError("cannot write " + path.string() + ": " + image.message);
    }
}

Raster read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
        throw FormatError("cannot read " + path.string() + ": " + image.message);
    }
    return finish_read(image, path.string());
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
    check_raster(raster);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (png_image_write_to_memory(&image, nullptr, &size, 0, raster.rgb.data(), 0, nullptr) == 0) {
        throw FormatError(std::string("png encode: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (png_image_write_to_memory(&image, out.data(), &size, 0, raster.rgb.data(), 0, nullptr) ==
        0) {
        throw FormatError(std::string("png encode: ") + image.message);
    }
    out.resize(size);
    return out;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
        throw FormatError(std::string("png decode: ") + image.message);
    }
    return finish_read(image, "png decode");
}

Raster resize_bilinear(const Raster& src, int width, int height) {
    check_raster(src);
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("resize_bilinear: target size must be positive");
    }
    Raster out(width, height);
    const double sx = static_cast<double>(src.width) / width;
    const double sy = static_cast<double>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
                const double bottom = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
                const double v = top * (1 - wy) + bottom * wy;
                out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

}  // namespace sticker
