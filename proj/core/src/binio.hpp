#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

// Little-endian binary file helpers shared by the MGS1 / MFT1 / MAE1 writers.

namespace malegs::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_f32(std::ostream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

inline float read_f32(std::istream& is) {
    float v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return is;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error("bad magic in " + path + " (want " + magic + ")");
}

}  // namespace malegs::binio
