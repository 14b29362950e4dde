#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace baa {

/// Decoded 8-bit raster, interleaved channels (1 = grayscale, 3 = RGB).
struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    bool empty() const noexcept { return pixels.empty(); }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// Decodes a PNG (or any format OpenCV reads). 16-bit inputs are scaled to
/// 8 bits, alpha is dropped. Returns nullopt when the file cannot be decoded.
std::optional<Raster> read_image(const std::filesystem::path& path);

/// Writes a grayscale or RGB raster as PNG. Returns false on failure.
bool write_png(const std::filesystem::path& path, const Raster& raster);

} // namespace baa
