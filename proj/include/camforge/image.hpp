#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "camforge/tensor.hpp"

namespace camforge::img {

// bilinear resize of [C,h,w] -> [C,oh,ow], half-pixel centers
inline Tensor resize_bilinear(const Tensor& x, std::size_t oh, std::size_t ow) {
    if (x.rank() != 3) throw std::invalid_argument("resize: expected rank-3, got " + x.shape_str());
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (oh == h && ow == w) return x;
    Tensor out({c, oh, ow});
    const double sy = static_cast<double>(h) / static_cast<double>(oh);
    const double sx = static_cast<double>(w) / static_cast<double>(ow);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double top = x.at(ch, y0, x0) * (1 - wx) + x.at(ch, y0, x1) * wx;
                const double bot = x.at(ch, y1, x0) * (1 - wx) + x.at(ch, y1, x1) * wx;
                out.at(ch, oy, ox) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

// nearest-neighbor resize for integer masks
inline std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& m, std::size_t h,
                                                std::size_t w, std::size_t oh, std::size_t ow) {
    if (m.size() != h * w) throw std::invalid_argument("resize_nearest: size mismatch");
    std::vector<std::uint8_t> out(oh * ow);
    const double sy = static_cast<double>(h) / static_cast<double>(oh);
    const double sx = static_cast<double>(w) / static_cast<double>(ow);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        const auto iy = std::min<std::size_t>(
            static_cast<std::size_t>(std::max(0.0, (oy + 0.5) * sy - 0.5 + 0.5)), h - 1);
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = std::min<std::size_t>(
                static_cast<std::size_t>(std::max(0.0, (ox + 0.5) * sx - 0.5 + 0.5)), w - 1);
            out[oy * ow + ox] = m[iy * w + ix];
        }
    }
    return out;
}

}  // namespace camforge::img
