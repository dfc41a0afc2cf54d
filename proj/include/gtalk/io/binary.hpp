#pragma once

#include "gtalk/util/error.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

namespace gtalk::io {

// Little-endian POD streaming; the targets this project builds for are little endian.
template <typename T>
void write_pod(std::ostream& os, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    static_assert(std::is_trivially_copyable_v<T>);
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated file while reading " + what);
    return v;
}

template <typename T>
void read_into(std::istream& is, T* dst, std::size_t count, const std::string& what) {
    if (count == 0) return;
    if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(T))))
        throw FormatError("truncated file while reading " + what);
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const std::string& what, std::size_t max_len = 1u << 24) {
    const auto n = read_pod<std::uint32_t>(is, what);
    if (n > max_len) throw FormatError("implausible string length while reading " + what);
    std::string s(n, '\0');
    read_into(is, s.data(), n, what);
    return s;
}

} // namespace gtalk::io
