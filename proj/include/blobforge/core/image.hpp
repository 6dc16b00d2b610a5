#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bf {

/// Interleaved floating-point image, row-major, `channels` values per pixel.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    [[nodiscard]] std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    [[nodiscard]] double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    [[nodiscard]] bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);
double max_abs_diff(const Image& a, const Image& b);

/// 8-bit PNG, values clamped to [0,1]. Channels 1, 3 or 4.
void write_png(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);
/// Reads a PNG into [0,1] values; grayscale images yield one channel.
Image read_png(const std::filesystem::path& path);
Image decode_png(std::span<const std::uint8_t> bytes);

/// Raw float32 planar dump (all of channel 0, then channel 1, ...), no header.
void write_raw_planar(const Image& img, const std::filesystem::path& path);

} // namespace bf
