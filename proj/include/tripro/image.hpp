#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tripro {

/// Interleaved 8-bit image, row-major, channel order RGB for colour images.
struct Image8 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;

    Image8() = default;
    Image8(int h, int w, int c, std::uint8_t fill = 0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::uint8_t& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool empty() const { return data.empty(); }
    bool same_shape(const Image8& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// PNG round trip. Colour images are stored RGB in memory regardless of the codec's order.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Bilinear resize (area averaging when shrinking).
Image8 resize_image(const Image8& image, int height, int width);

/// Separable Gaussian blur of every channel (border replicated).
Image8 gaussian_blur(const Image8& image, double sigma);

} // namespace tripro
