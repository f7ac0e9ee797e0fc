#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "camforge/fusion.hpp"
#include "camforge/image.hpp"
#include "camforge/io.hpp"
#include "camforge/ops.hpp"
#include "camforge/rng.hpp"

namespace camforge::model {

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 8;
    std::size_t num_blocks = 4;   // B
    std::size_t num_heads = 4;    // H
    std::size_t embed_dim = 64;   // D
    std::size_t cnn_channels = 32;  // fc
    std::size_t num_fg_classes = 3;  // S-1
    std::uint64_t rng_seed = 0;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }

    void validate() const {
        if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
            throw std::invalid_argument("config: image_size must be a positive multiple of patch_size");
        if (num_blocks == 0 || num_heads == 0 || embed_dim == 0)
            throw std::invalid_argument("config: blocks, heads and embed_dim must be positive");
        if (embed_dim % num_heads != 0)
            throw std::invalid_argument("config: embed_dim " + std::to_string(embed_dim) +
                                        " not divisible by heads " + std::to_string(num_heads));
        if (cnn_channels < 2 || cnn_channels % 2 != 0)
            throw std::invalid_argument("config: cnn_channels must be even and >= 2");
        if (num_fg_classes == 0)
            throw std::invalid_argument("config: need at least one foreground class");
        conv_strides(patch_size);  // throws on unsupported patch size
    }

    // three conv stages whose stride product equals the patch size, so the
    // CNN grid lands exactly on the token grid
    static std::array<std::size_t, 3> conv_strides(std::size_t patch) {
        switch (patch) {
            case 1: return {1, 1, 1};
            case 2: return {2, 1, 1};
            case 4: return {2, 2, 1};
            case 8: return {2, 2, 2};
            default:
                throw std::invalid_argument("config: patch_size must be 1, 2, 4 or 8, got " +
                                            std::to_string(patch));
        }
    }
};

// Learnable tensors keyed by name; std::map keeps iteration order stable for
// the optimizer and checkpoints.
struct ModelState {
    ModelConfig config;
    std::map<std::string, ad::Var> params;

    ad::Var& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw std::out_of_range("model: no parameter " + name);
        return it->second;
    }
    const ad::Var& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw std::out_of_range("model: no parameter " + name);
        return it->second;
    }
};

struct ForwardArtifacts {
    ad::Var f;       // CNN features [fc, g, g]
    ad::Var cam;     // M [S-1, g, g]
    ad::Var tokens;  // [1+N, D]
    ad::Var attention;  // stack [B, H, 1+N, 1+N]
};

namespace detail {

inline Tensor uniform_init(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                           std::size_t fan_out) {
    Tensor t(std::move(shape));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.data) v = rng.uniform(-a, a);
    return t;
}

}  // namespace detail

inline ModelState init(const ModelConfig& cfg) {
    cfg.validate();
    ModelState st;
    st.config = cfg;
    Rng rng(cfg.rng_seed);

    const std::size_t fc = cfg.cnn_channels, half = fc / 2;
    const std::size_t d = cfg.embed_dim, s1 = cfg.num_fg_classes;
    const std::size_t patch_dim = 3 * cfg.patch_size * cfg.patch_size;
    const std::size_t hidden = 2 * d;
    const std::size_t tokens = 1 + cfg.num_patches();

    auto add_param = [&](const std::string& name, Tensor t) {
        st.params.emplace(name, ad::param(std::move(t)));
    };
    auto add_weight = [&](const std::string& name, std::vector<std::size_t> shape,
                          std::size_t fin, std::size_t fout) {
        add_param(name, detail::uniform_init(rng, std::move(shape), fin, fout));
    };

    // insertion order below is the draw order; std::map re-sorts by name but
    // initialization stays deterministic because draws happen here
    // conv biases start slightly positive; at exactly zero, relu preactivations
    // of dead border cells sit on the kink and break finite-difference checks
    add_weight("conv1.weight", {half, 3, 3, 3}, 3 * 9, half * 9);
    add_param("conv1.bias", Tensor::full({half}, 0.05));
    add_weight("conv2.weight", {fc, half, 3, 3}, half * 9, fc * 9);
    add_param("conv2.bias", Tensor::full({fc}, 0.05));
    add_weight("conv3.weight", {fc, fc, 3, 3}, fc * 9, fc * 9);
    add_param("conv3.bias", Tensor::full({fc}, 0.05));
    add_weight("cam.weight", {s1, fc}, fc, s1);

    add_weight("patch_embed.weight", {patch_dim, d}, patch_dim, d);
    add_param("patch_embed.bias", Tensor({d}));
    {
        Tensor pos({tokens, d});
        for (double& v : pos.data) v = rng.uniform(-0.02, 0.02);
        add_param("pos_embed", std::move(pos));
        Tensor cls({1, d});
        for (double& v : cls.data) v = rng.uniform(-0.02, 0.02);
        add_param("cls_token", std::move(cls));
    }

    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            add_weight(pre + w, {d, d}, d, d);
            add_param(pre + w + std::string(".bias"), Tensor({d}));
        }
        add_weight(pre + "mlp.w1", {d, hidden}, d, hidden);
        add_param(pre + "mlp.b1", Tensor({hidden}));
        add_weight(pre + "mlp.w2", {hidden, d}, hidden, d);
        add_param(pre + "mlp.b2", Tensor({d}));
        add_weight(pre + "couple.t2f", {d, fc}, d, fc);
        add_weight(pre + "couple.f2t", {fc, d}, fc, d);
    }

    add_weight("head.weight", {d, s1}, d, s1);
    add_param("head.bias", Tensor({s1}));
    return st;
}

// M_s = w_s . f, per foreground class
inline ad::Var cam_head(const ModelState& st, const ad::Var& f) {
    const std::size_t g = f->value.dim(1);
    auto flat = ad::reshape(f, {f->value.dim(0), g * g});          // [fc, N]
    auto m = ad::matmul(st.at("cam.weight"), flat);                // [S-1, N]
    return ad::reshape(m, {st.config.num_fg_classes, g, g});
}

namespace detail {

// token-grid positional embedding; bilinearly re-gridded (as a constant)
// when inference runs at a non-training scale
inline ad::Var pos_embed_for_grid(const ModelState& st, std::size_t grid) {
    const auto& pos = st.at("pos_embed");
    const std::size_t base_grid = st.config.grid();
    if (grid == base_grid) return pos;
    const std::size_t d = st.config.embed_dim;
    const Tensor& p = pos->value;
    // split class and patch parts, resize the patch part per channel
    Tensor patch({d, base_grid, base_grid});
    for (std::size_t n = 0; n < base_grid * base_grid; ++n)
        for (std::size_t c = 0; c < d; ++c)
            patch.data[c * base_grid * base_grid + n] = p.data[(1 + n) * d + c];
    Tensor re = img::resize_bilinear(patch, grid, grid);
    Tensor out({1 + grid * grid, d});
    for (std::size_t c = 0; c < d; ++c) out.data[c] = p.data[c];  // class-token row
    for (std::size_t n = 0; n < grid * grid; ++n)
        for (std::size_t c = 0; c < d; ++c) out.data[(1 + n) * d + c] = re.data[c * grid * grid + n];
    return ad::constant(std::move(out));
}

}  // namespace detail

inline ForwardArtifacts forward(const ModelState& st, const ad::Var& image) {
    const ModelConfig& cfg = st.config;
    const Tensor& im = image->value;
    if (im.rank() != 3 || im.dim(0) != 3 || im.dim(1) != im.dim(2))
        throw std::invalid_argument("forward: expected [3,img,img] image, got " + im.shape_str());
    if (im.dim(1) % cfg.patch_size != 0)
        throw std::invalid_argument("forward: image size " + std::to_string(im.dim(1)) +
                                    " not divisible by patch size " + std::to_string(cfg.patch_size));
    const std::size_t g = im.dim(1) / cfg.patch_size;
    const std::size_t n = g * g;
    const std::size_t d = cfg.embed_dim, h = cfg.num_heads, dh = d / h;
    const std::size_t fc = cfg.cnn_channels;

    // CNN branch down to the token grid
    const auto strides = ModelConfig::conv_strides(cfg.patch_size);
    auto x = ad::relu(ad::conv2d(image, st.at("conv1.weight"), st.at("conv1.bias"), strides[0], 1));
    x = ad::relu(ad::conv2d(x, st.at("conv2.weight"), st.at("conv2.bias"), strides[1], 1));
    auto f = ad::relu(ad::conv2d(x, st.at("conv3.weight"), st.at("conv3.bias"), strides[2], 1));

    // transformer branch: patch embedding + class token + positions
    auto patches = ad::im2patches(image, cfg.patch_size);  // [N, 3p^2]
    auto embedded = ad::linear(patches, st.at("patch_embed.weight"), st.at("patch_embed.bias"));
    auto tokens = ad::add(ad::concat_rows({st.at("cls_token"), embedded}),
                          detail::pos_embed_for_grid(st, g));

    const double qk_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Var> attn_mats;  // B*H matrices, block-major
    attn_mats.reserve(cfg.num_blocks * h);

    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";

        // multi-head self-attention with residual
        auto q = ad::linear(tokens, st.at(pre + "attn.wq"), st.at(pre + "attn.wq.bias"));
        auto k = ad::linear(tokens, st.at(pre + "attn.wk"), st.at(pre + "attn.wk.bias"));
        auto v = ad::linear(tokens, st.at(pre + "attn.wv"), st.at(pre + "attn.wv.bias"));
        std::vector<ad::Var> heads;
        heads.reserve(h);
        for (std::size_t hi = 0; hi < h; ++hi) {
            auto qh = ad::slice2d(q, 0, 1 + n, hi * dh, (hi + 1) * dh);
            auto kh = ad::slice2d(k, 0, 1 + n, hi * dh, (hi + 1) * dh);
            auto vh = ad::slice2d(v, 0, 1 + n, hi * dh, (hi + 1) * dh);
            auto a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), qk_scale));
            attn_mats.push_back(a);
            heads.push_back(ad::matmul(a, vh));
        }
        auto attn_out = ad::linear(ad::concat_cols(heads), st.at(pre + "attn.wo"),
                                   st.at(pre + "attn.wo.bias"));
        tokens = ad::add(tokens, attn_out);

        // MLP with residual
        auto hidden = ad::relu(ad::linear(tokens, st.at(pre + "mlp.w1"), st.at(pre + "mlp.b1")));
        tokens = ad::add(tokens, ad::linear(hidden, st.at(pre + "mlp.w2"), st.at(pre + "mlp.b2")));

        // coupling exchange, both directions from pre-exchange values
        auto cls_row = ad::slice2d(tokens, 0, 1, 0, d);
        auto patch_tokens = ad::slice2d(tokens, 1, 1 + n, 0, d);
        auto f_add = ad::reshape(ad::transpose(ad::matmul(patch_tokens, st.at(pre + "couple.t2f"))),
                                 {fc, g, g});
        auto t_add = ad::matmul(ad::transpose(ad::reshape(f, {fc, n})), st.at(pre + "couple.f2t"));
        f = ad::add(f, f_add);
        tokens = ad::concat_rows({cls_row, ad::add(patch_tokens, t_add)});
    }

    auto stack = ad::reshape(ad::concat_flat(attn_mats), {cfg.num_blocks, h, 1 + n, 1 + n});
    return {f, cam_head(st, f), tokens, stack};
}

// single-scale refined CAM M* = A* . M at the token grid
inline ad::Var refined_cam(const ForwardArtifacts& art) {
    auto a_star = fusion::strip_class_token(fusion::block_sum(fusion::head_average(art.attention)));
    return fusion::refine_cam(a_star, art.cam);
}

// Multi-scale inference: refined CAMs per scale, bilinearly resized back to
// the input resolution and averaged. Never touches the noise path; the
// counter check makes that an enforced contract.
inline Tensor infer_multiscale(const ModelState& st, const Tensor& image,
                               const std::vector<std::size_t>& scales) {
    if (scales.empty()) throw std::invalid_argument("infer: empty scale list");
    const std::uint64_t noise_before = fusion::noise_injection_count();
    const std::size_t base = image.dim(1);
    Tensor acc({st.config.num_fg_classes, base, base});
    for (std::size_t s : scales) {
        if (s == 0 || s % st.config.patch_size != 0)
            throw std::invalid_argument("infer: scale " + std::to_string(s) +
                                        " not divisible by patch size");
        const Tensor scaled = img::resize_bilinear(image, s, s);
        auto art = forward(st, ad::constant(scaled));
        const Tensor up = img::resize_bilinear(refined_cam(art)->value, base, base);
        for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += up.data[i];
    }
    for (double& v : acc.data) v /= static_cast<double>(scales.size());
    if (fusion::noise_injection_count() != noise_before)
        throw std::logic_error("infer: noise path invoked during inference");
    return acc;
}

// checkpoint = manifest + one tensor snapshot per parameter

inline void save_checkpoint(const ModelState& st, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
    const ModelConfig& c = st.config;
    manifest << "image_size = " << c.image_size << "\n"
             << "patch_size = " << c.patch_size << "\n"
             << "num_blocks = " << c.num_blocks << "\n"
             << "num_heads = " << c.num_heads << "\n"
             << "embed_dim = " << c.embed_dim << "\n"
             << "cnn_channels = " << c.cnn_channels << "\n"
             << "num_fg_classes = " << c.num_fg_classes << "\n"
             << "rng_seed = " << c.rng_seed << "\n";
    for (const auto& [name, var] : st.params) {
        const std::string file = name + ".cftn";
        manifest << "tensor " << name << " " << file << "\n";
        io::save_tensor(var->value, dir + "/" + file);
    }
}

inline ModelState load_checkpoint(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint: cannot open manifest in " + dir);
    ModelConfig cfg;
    ModelState st;
    std::string line;
    std::vector<std::pair<std::string, std::string>> tensors;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "tensor") {
            std::string name, file;
            is >> name >> file;
            tensors.emplace_back(name, file);
            continue;
        }
        std::string eq;
        std::uint64_t value;
        is >> eq >> value;
        if (eq != "=") throw std::runtime_error("checkpoint: malformed manifest line: " + line);
        if (key == "image_size") cfg.image_size = value;
        else if (key == "patch_size") cfg.patch_size = value;
        else if (key == "num_blocks") cfg.num_blocks = value;
        else if (key == "num_heads") cfg.num_heads = value;
        else if (key == "embed_dim") cfg.embed_dim = value;
        else if (key == "cnn_channels") cfg.cnn_channels = value;
        else if (key == "num_fg_classes") cfg.num_fg_classes = value;
        else if (key == "rng_seed") cfg.rng_seed = value;
        else throw std::runtime_error("checkpoint: unknown manifest key: " + key);
    }
    cfg.validate();
    st.config = cfg;
    for (const auto& [name, file] : tensors)
        st.params.emplace(name, ad::param(io::load_tensor(dir + "/" + file)));
    return st;
}

}  // namespace camforge::model
