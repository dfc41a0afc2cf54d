#include "gtalk/io/image.hpp"

#include "gtalk/util/error.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <regex>
#include <string>

namespace gtalk {

Image8 to_8bit(const Image& img) {
    Image8 out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    return out;
}

Image from_8bit(const Image8& img) {
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warn(png_structp, png_const_charp) {}

} // namespace

void write_png(const std::filesystem::path& path, const Image8& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: failed writing " + path.string());
    }
    {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int r = 0; r < img.height; ++r)
            png_write_row(png, img.data.data() + static_cast<std::size_t>(r) * img.width * 3);
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
}

void write_png(const std::filesystem::path& path, const Image& img) { write_png(path, to_8bit(img)); }

Image8 read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
    png_infop info = png_create_info_struct(png);
    Image8 out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: cannot decode " + path.string());
    }
    {
        png_init_io(png, f.get());
        png_read_info(png, info);
        const int w = static_cast<int>(png_get_image_width(png, info));
        const int h = static_cast<int>(png_get_image_height(png, info));
        const int color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        if (png_get_channels(png, info) != 3) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw FormatError("png: unsupported channel layout in " + path.string());
        }
        out = Image8(w, h);
        for (int r = 0; r < h; ++r) png_read_row(png, out.data.data() + static_cast<std::size_t>(r) * w * 3, nullptr);
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_npy(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(img.height) + ", " +
                         std::to_string(img.width) + ", 3), }";
    // Magic (6) + version (2) + length (2) + header must be a multiple of 64, newline-terminated.
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> buf(img.data.begin(), img.data.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Image read_npy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "\x93NUMPY\x01", 7) != 0) throw FormatError(path.string() + ": not an npy v1 file");
    std::uint16_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), 2)) throw FormatError(path.string() + ": truncated npy header");
    std::string header(len, '\0');
    if (!in.read(header.data(), len)) throw FormatError(path.string() + ": truncated npy header");
    if (header.find("'<f4'") == std::string::npos) throw FormatError(path.string() + ": npy dtype must be <f4");
    if (header.find("'fortran_order': False") == std::string::npos) throw FormatError(path.string() + ": npy must be C order");
    std::smatch m;
    if (!std::regex_search(header, m, std::regex(R"(\((\d+),\s*(\d+),\s*3\))")))
        throw FormatError(path.string() + ": npy shape must be (H, W, 3)");
    Image img(std::stoi(m[2].str()), std::stoi(m[1].str()));
    std::vector<float> buf(img.data.size());
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw FormatError(path.string() + ": truncated npy data");
    std::copy(buf.begin(), buf.end(), img.data.begin());
    return img;
}

} // namespace gtalk
