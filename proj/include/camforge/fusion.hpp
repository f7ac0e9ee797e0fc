#pragma once

#include <atomic>
#include <cstdint>

#include "camforge/ops.hpp"

namespace camforge::fusion {

// Counts every noise multiplication so inference paths can prove they never
// touched it.
inline std::atomic<std::uint64_t>& noise_injection_counter() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}
inline std::uint64_t noise_injection_count() { return noise_injection_counter().load(); }

// stack: [B, H, 1+N, 1+N] -> per-block head mean [B, 1+N, 1+N]
inline ad::Var head_average(const ad::Var& stack) {
    if (stack->value.rank() != 4)
        throw std::invalid_argument("head_average: expected rank-4 stack, got " +
                                    stack->value.shape_str());
    return ad::mean_axis(stack, 1);
}

// head_avg: [B, 1+N, 1+N] -> [1+N, 1+N]; rows sum to B for stochastic input
inline ad::Var block_sum(const ad::Var& head_avg) {
    if (head_avg->value.rank() != 3)
        throw std::invalid_argument("block_sum: expected rank-3, got " + head_avg->value.shape_str());
    return ad::sum_axis(head_avg, 0);
}

// head_avg: [B, 1+N, 1+N] -> [1+N, 1+N]; rows sum to 1 for stochastic input
inline ad::Var block_mean(const ad::Var& head_avg) {
    return ad::scale(block_sum(head_avg), 1.0 / static_cast<double>(head_avg->value.dim(0)));
}

// drop the class token row and column (token index 0)
inline ad::Var strip_class_token(const ad::Var& x) {
    const Tensor& X = x->value;
    if (X.rank() != 2 || X.dim(0) != X.dim(1))
        throw std::invalid_argument("strip_class_token: expected square matrix, got " + X.shape_str());
    if (X.dim(0) < 2)
        throw std::invalid_argument("strip_class_token: side must be >= 2, got " + X.shape_str());
    return ad::slice2d(x, 1, X.dim(0), 1, X.dim(1));
}

namespace detail {
inline void check_grid(const Tensor& a_star, const Tensor& cam, const char* op) {
    if (a_star.rank() != 2 || a_star.dim(0) != a_star.dim(1))
        throw std::invalid_argument(std::string(op) + ": attention must be square, got " +
                                    a_star.shape_str());
    if (cam.rank() != 3 || cam.dim(1) != cam.dim(2) || cam.dim(1) * cam.dim(2) != a_star.dim(0))
        throw std::invalid_argument(std::string(op) + ": grid mismatch " + a_star.shape_str() +
                                    " vs " + cam.shape_str());
}

// per class s: flatten M_s row-major to Nx1, left-multiply by A, reshape back
inline ad::Var apply_attention(const ad::Var& attn, const ad::Var& cam) {
    const std::size_t classes = cam->value.dim(0), g = cam->value.dim(1);
    auto flat = ad::reshape(cam, {classes, g * g});          // [S-1, N]
    auto cols = ad::transpose(flat);                          // [N, S-1]
    auto mixed = ad::matmul(attn, cols);                      // [N, S-1]
    return ad::reshape(ad::transpose(mixed), {classes, g, g});
}
}  // namespace detail

// M*_s = A* . M_s
inline ad::Var refine_cam(const ad::Var& a_star, const ad::Var& cam) {
    detail::check_grid(a_star->value, cam->value, "refine_cam");
    return detail::apply_attention(a_star, cam);
}

// M**_s = (k . Abar*) . M*_s; training-only path
inline ad::Var inject_noise(const ad::Var& a_bar_star, const ad::Var& refined, double k) {
    if (k < 0) throw std::invalid_argument("inject_noise: multiplier must be >= 0");
    detail::check_grid(a_bar_star->value, refined->value, "inject_noise");
    noise_injection_counter().fetch_add(1);
    return ad::scale(detail::apply_attention(a_bar_star, refined), k);
}

// Raw-tensor fusion of a full attention stack, for inference and export.
struct FusedAttention {
    Tensor a;           // block sum, (1+N)x(1+N)
    Tensor a_star;      // class token stripped, NxN
    Tensor a_bar;       // block mean, (1+N)x(1+N)
    Tensor a_bar_star;  // stripped block mean, NxN
};

inline FusedAttention fuse(const Tensor& stack) {
    auto s = ad::constant(stack);
    auto ha = head_average(s);
    auto sum = block_sum(ha);
    auto mean = block_mean(ha);
    return {sum->value, strip_class_token(sum)->value, mean->value,
            strip_class_token(mean)->value};
}

}  // namespace camforge::fusion
