#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "camforge/image.hpp"
#include "camforge/io.hpp"
#include "camforge/parallel.hpp"
#include "camforge/rng.hpp"
#include "camforge/seeding.hpp"
#include "camforge/tensor.hpp"

namespace camforge::data {

// image in [0,1], multi-hot labels over foreground classes, pixel ground truth
struct SyntheticSample {
    Tensor image;                 // [3, img, img]
    std::vector<double> labels;   // size S-1, y_s = 1 iff class s occupies >= 1 pixel
    seeding::LabelMask gt;
};

using Dataset = std::vector<SyntheticSample>;

namespace detail {

inline std::array<double, 3> class_color(std::size_t cls) {
    static constexpr std::array<std::array<double, 3>, 6> palette = {{{0.80, 0.20, 0.20},
                                                                      {0.20, 0.70, 0.25},
                                                                      {0.20, 0.30, 0.80},
                                                                      {0.80, 0.70, 0.20},
                                                                      {0.70, 0.20, 0.70},
                                                                      {0.20, 0.70, 0.70}}};
    return palette[(cls - 1) % palette.size()];
}

inline std::vector<double> labels_from_mask(const seeding::LabelMask& gt, std::size_t fg_classes) {
    std::vector<double> y(fg_classes, 0.0);
    for (auto id : gt.ids)
        if (id > 0) y[id - 1] = 1.0;
    return y;
}

inline bool inside_shape(std::size_t kind, double dx, double dy, double r) {
    switch (kind) {
        case 0: return dx * dx + dy * dy <= r * r;                       // circle
        case 1: return std::abs(dx) <= r && std::abs(dy) <= r;           // square
        default: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;  // triangle, apex up
    }
}

}  // namespace detail

inline SyntheticSample generate_sample(std::uint64_t seed, std::size_t num_classes,
                                       std::size_t img) {
    const std::size_t fg = num_classes - 1;
    Rng rng(seed);
    SyntheticSample s;
    s.image = Tensor({3, img, img});
    s.gt = seeding::LabelMask(img, img);

    // textured background: mid gray + sinusoid + per-pixel noise
    const double phase = rng.uniform(0.0, 6.283185307179586);
    const double freq = rng.uniform(0.15, 0.45);
    for (std::size_t y = 0; y < img; ++y)
        for (std::size_t x = 0; x < img; ++x) {
            const double texture = 0.05 * std::sin(freq * (static_cast<double>(x) +
                                                           static_cast<double>(y)) + phase);
            for (std::size_t c = 0; c < 3; ++c)
                s.image.at(c, y, x) =
                    std::clamp(0.35 + texture + rng.uniform(-0.08, 0.08), 0.0, 1.0);
        }

    const std::size_t nshapes = 1 + rng.below(3);
    for (std::size_t k = 0; k < nshapes; ++k) {
        const std::size_t cls = 1 + rng.below(fg);
        const std::size_t kind = (cls - 1) % 3;
        const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(img);
        const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(img);
        const double r = rng.uniform(0.12, 0.22) * static_cast<double>(img);
        auto color = detail::class_color(cls);
        std::array<double, 3> jitter{rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08),
                                     rng.uniform(-0.08, 0.08)};
        for (std::size_t y = 0; y < img; ++y)
            for (std::size_t x = 0; x < img; ++x) {
                if (!detail::inside_shape(kind, static_cast<double>(x) - cx,
                                          static_cast<double>(y) - cy, r))
                    continue;
                for (std::size_t c = 0; c < 3; ++c)
                    s.image.at(c, y, x) = std::clamp(color[c] + jitter[c], 0.0, 1.0);
                s.gt.at(y, x) = static_cast<std::uint8_t>(cls);
            }
    }
    // later shapes may fully occlude earlier ones, so recover y from the mask
    s.labels = detail::labels_from_mask(s.gt, fg);
    return s;
}

inline Dataset generate(std::uint64_t seed, std::size_t count, std::size_t num_classes,
                        std::size_t img) {
    if (count < 1) throw std::invalid_argument("generate: count must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("generate: need >= 2 classes");
    if (img < 8) throw std::invalid_argument("generate: image size too small");
    Dataset ds(count);
    parallel_for(count, [&](std::size_t i) {
        ds[i] = generate_sample(Rng::derive(seed, i), num_classes, img);
    });
    return ds;
}

// random scale in [0.75, 1.25] (bilinear image, nearest mask), then
// center-crop/pad back to the original size; labels recomputed from the
// transformed mask
inline SyntheticSample augment(const SyntheticSample& in, Rng& rng) {
    const double factor = rng.uniform(0.75, 1.25);
    const std::size_t img = in.image.dim(1);
    const auto scaled = static_cast<std::size_t>(std::lround(factor * static_cast<double>(img)));
    if (scaled == img) return in;

    const Tensor rimg = img::resize_bilinear(in.image, scaled, scaled);
    const auto rmask = img::resize_nearest(in.gt.ids, img, img, scaled, scaled);

    SyntheticSample out;
    out.image = Tensor({3, img, img});
    out.gt = seeding::LabelMask(img, img);
    // pad region keeps the background value
    for (double& v : out.image.data) v = 0.35;

    const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(scaled) - static_cast<std::ptrdiff_t>(img)) / 2;
    for (std::size_t y = 0; y < img; ++y)
        for (std::size_t x = 0; x < img; ++x) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + off;
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + off;
            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(scaled) ||
                sx >= static_cast<std::ptrdiff_t>(scaled))
                continue;
            for (std::size_t c = 0; c < 3; ++c)
                out.image.at(c, y, x) = rimg.at(c, static_cast<std::size_t>(sy),
                                                static_cast<std::size_t>(sx));
            out.gt.at(y, x) = rmask[static_cast<std::size_t>(sy) * scaled + static_cast<std::size_t>(sx)];
        }
    out.labels = detail::labels_from_mask(out.gt, in.labels.size());
    return out;
}

// directory layout: manifest.txt with `index,image_file,mask_file,labels-bitstring`
// lines, .cftn images, .pgm masks

inline void save(const Dataset& ds, std::size_t num_classes, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("dataset: cannot write manifest in " + dir);
    manifest << "num_classes = " << num_classes << "\n";
    char name[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::snprintf(name, sizeof name, "img_%05zu.cftn", i);
        const std::string img_file = name;
        std::snprintf(name, sizeof name, "mask_%05zu.pgm", i);
        const std::string mask_file = name;
        std::string bits(ds[i].labels.size(), '0');
        for (std::size_t s = 0; s < ds[i].labels.size(); ++s)
            if (ds[i].labels[s] != 0.0) bits[s] = '1';
        manifest << i << "," << img_file << "," << mask_file << "," << bits << "\n";
        io::save_tensor(ds[i].image, dir + "/" + img_file);
        io::save_pgm(ds[i].gt.ids, ds[i].gt.h, ds[i].gt.w, dir + "/" + mask_file);
    }
}

inline Dataset load(const std::string& dir, std::size_t& num_classes) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("dataset: cannot open manifest in " + dir);
    std::string line;
    if (!std::getline(manifest, line) || line.rfind("num_classes = ", 0) != 0)
        throw std::runtime_error("dataset: malformed manifest header in " + dir);
    num_classes = std::stoul(line.substr(14));
    Dataset ds;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            const auto comma = line.find(',', pos);
            fields.push_back(line.substr(pos, comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (fields.size() != 4)
            throw std::runtime_error("dataset: malformed manifest line: " + line);
        SyntheticSample s;
        s.image = io::load_tensor(dir + "/" + fields[1]);
        std::size_t h, w;
        s.gt.ids = io::load_pgm(dir + "/" + fields[2], h, w);
        s.gt.h = h;
        s.gt.w = w;
        s.labels.resize(fields[3].size());
        for (std::size_t i = 0; i < fields[3].size(); ++i)
            s.labels[i] = fields[3][i] == '1' ? 1.0 : 0.0;
        ds.push_back(std::move(s));
    }
    if (ds.empty()) throw std::runtime_error("dataset: empty manifest in " + dir);
    return ds;
}

}  // namespace camforge::data
