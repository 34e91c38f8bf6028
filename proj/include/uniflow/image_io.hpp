#pragma once

#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"

#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace uniflow {

/// Encodes a 1- or 3-channel [0, 1] image as an 8-bit PNG.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ArgumentError("PNG needs 1 or 3 channels");
    if (img.width <= 0 || img.height <= 0) throw DimensionError("cannot encode empty image");

    std::vector<std::uint8_t> pixels(img.data.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }

    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
        throw IoError(std::string("png sizing failed: ") + png.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
        throw IoError(std::string("png encode failed: ") + png.message);
    }
    out.resize(size);
    return out;
}

/// Decodes any PNG into an RGB image with samples in [0, 1].
inline Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw FormatError(std::string("not a PNG: ") + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&png);
        throw FormatError(std::string("PNG decode failed: ") + png.message);
    }
    Image img(static_cast<int>(png.width), static_cast<int>(png.height), 3);
    for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
    return img;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_png(img));
}

inline Image read_png(const std::filesystem::path& path) {
    return decode_png(detail::read_file_bytes(path));
}

} // namespace uniflow
