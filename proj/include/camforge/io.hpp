#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "camforge/tensor.hpp"

namespace camforge::io {

// Tensor snapshot: "CFTN", version 0x01, u32 LE rank, rank x u32 LE dims,
// row-major f64 LE payload. Round-trips bit-exactly.

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("snapshot: cannot open for write: " + path);
    os.write("CFTN", 4);
    os.put(0x01);
    write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) write_u32_le(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!os) throw std::runtime_error("snapshot: write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("snapshot: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CFTN", 4) != 0)
        throw std::runtime_error("snapshot: bad magic in " + path);
    int version = is.get();
    if (version != 0x01) throw std::runtime_error("snapshot: unsupported version in " + path);
    std::uint32_t rank = read_u32_le(is);
    if (!is || rank > 8) throw std::runtime_error("snapshot: bad rank in " + path);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = read_u32_le(is);
    Tensor t(shape);
    for (double& v : t.data) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        if (!is) throw std::runtime_error("snapshot: truncated payload in " + path);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        std::memcpy(&v, &bits, 8);
    }
    return t;
}

// 8-bit binary PGM. Masks store class ids verbatim; heatmaps are min-max
// scaled per matrix before quantization.

inline void save_pgm(const std::vector<std::uint8_t>& pixels, std::size_t h, std::size_t w,
                     const std::string& path) {
    if (pixels.size() != h * w) throw std::invalid_argument("pgm: pixel count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("pgm: cannot open for write: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!os) throw std::runtime_error("pgm: write failed: " + path);
}

inline std::vector<std::uint8_t> load_pgm(const std::string& path, std::size_t& h, std::size_t& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("pgm: cannot open: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("pgm: not a binary PGM: " + path);
    std::size_t maxval;
    is >> w >> h >> maxval;
    if (!is || maxval != 255) throw std::runtime_error("pgm: unsupported header in " + path);
    is.get();  // single whitespace after maxval
    std::vector<std::uint8_t> pixels(h * w);
    is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!is) throw std::runtime_error("pgm: truncated payload in " + path);
    return pixels;
}

inline void save_heatmap_pgm(const Tensor& m, const std::string& path) {
    if (m.rank() != 2) throw std::invalid_argument("heatmap: expected rank-2, got " + m.shape_str());
    double lo = m.data[0], hi = m.data[0];
    for (double v : m.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;
    std::vector<std::uint8_t> px(m.numel());
    for (std::size_t i = 0; i < m.numel(); ++i)
        px[i] = range > 0 ? static_cast<std::uint8_t>(std::lround((m.data[i] - lo) / range * 255.0)) : 0;
    save_pgm(px, m.dim(0), m.dim(1), path);
}

}  // namespace camforge::io
