#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gtalk {

// H x W x 3 interleaved RGB buffer, row-major.
template <typename T>
struct BasicImage {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    BasicImage() = default;
    BasicImage(int w, int h, T fill = T(0)) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    T& at(int row, int col, int ch) { return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch]; }
    T at(int row, int col, int ch) const { return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch]; }
    bool same_shape(const BasicImage& o) const { return width == o.width && height == o.height; }

    template <typename U>
    BasicImage<U> cast() const {
        BasicImage<U> out;
        out.width = width;
        out.height = height;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    friend bool operator==(const BasicImage&, const BasicImage&) = default;
};

using Image = BasicImage<double>;
using ImageF = BasicImage<float>;
using Image8 = BasicImage<std::uint8_t>;

// Float <-> 8 bit with rounding and clamping to [0, 1].
Image8 to_8bit(const Image& img);
Image from_8bit(const Image8& img);

void write_png(const std::filesystem::path& path, const Image8& img);
void write_png(const std::filesystem::path& path, const Image& img);
Image8 read_png(const std::filesystem::path& path);

// NumPy .npy (version 1.0) little-endian float32 array of shape (H, W, 3).
void write_npy(const std::filesystem::path& path, const Image& img);
Image read_npy(const std::filesystem::path& path);

} // namespace gtalk
