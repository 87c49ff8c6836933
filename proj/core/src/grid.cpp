#include "malegs/grid.hpp"

#include "binio.hpp"

namespace malegs {

void save_grid(const Grid& g, const std::string& path) {
    auto os = binio::open_out(path);
    os.write("MFT1", 4);
    binio::write_u32(os, static_cast<uint32_t>(g.height()));
    binio::write_u32(os, static_cast<uint32_t>(g.width()));
    binio::write_u32(os, static_cast<uint32_t>(g.channels()));
    os.write(reinterpret_cast<const char*>(g.data()),
             static_cast<std::streamsize>(g.size() * sizeof(float)));
    if (!os) throw std::runtime_error("short write: " + path);
}

Grid load_grid(const std::string& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "MFT1", path);
    const uint32_t h = binio::read_u32(is);
    const uint32_t w = binio::read_u32(is);
    const uint32_t k = binio::read_u32(is);
    Grid g(static_cast<int>(h), static_cast<int>(w), static_cast<int>(k));
    is.read(reinterpret_cast<char*>(g.data()),
            static_cast<std::streamsize>(g.size() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated tensor: " + path);
    return g;
}

}  // namespace malegs
