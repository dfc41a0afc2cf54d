#include "gtalk/io/image.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/rng.hpp"

#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace gtalk;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "gtalk_test_io";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("png round trip") {
    Rng rng(1);
    Image8 img(13, 7);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.index(256));
    auto path = temp_path("a.png");
    write_png(path, img);
    CHECK(read_png(path) == img);
}

TEST_CASE("8-bit conversion rounds and clamps") {
    Image img(2, 1);
    img.data = {-0.2, 0.0, 0.5, 1.0, 1.7, 0.999};
    auto b = to_8bit(img);
    CHECK(b.data == std::vector<std::uint8_t>{0, 0, 128, 255, 255, 255});
    CHECK(from_8bit(b).data[3] == 1.0);
}

TEST_CASE("npy round trip and header") {
    Image img(5, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.25 * static_cast<double>(i);
    auto path = temp_path("a.npy");
    write_npy(path, img);
    CHECK(read_npy(path) == img);
    std::ifstream in(path, std::ios::binary);
    char head[10];
    in.read(head, 10);
    CHECK(std::memcmp(head, "\x93NUMPY\x01\x00", 8) == 0);
    const std::size_t header_len = static_cast<unsigned char>(head[8]) | (static_cast<unsigned char>(head[9]) << 8);
    CHECK((10 + header_len) % 64 == 0);
    std::string header(header_len, ' ');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    CHECK(header.find("'descr': '<f4'") != std::string::npos);
    CHECK(header.find("'shape': (3, 5, 3)") != std::string::npos);
}

TEST_CASE("malformed files") {
    auto path = temp_path("bad.png");
    std::ofstream(path) << "not a png";
    CHECK_THROWS_AS(read_png(path), FormatError);
    auto npy = temp_path("bad.npy");
    std::ofstream(npy) << "\x93NUMPY";
    CHECK_THROWS_AS(read_npy(npy), FormatError);
    CHECK_THROWS(read_png(temp_path("missing.png")));
}
