#pragma once

#include <algorithm>
#include <cmath>

#include "camforge/autodiff.hpp"
#include "camforge/tensor.hpp"

namespace camforge::ad {

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad.data[i] += n.grad.data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) b->grad.data[i] += n.grad.data[i];
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    return make_node(std::move(out), {a}, [a, c](Node& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad.data[i] += c * n.grad.data[i];
    });
}

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw std::invalid_argument("matmul: shape mismatch " + A.shape_str() + " vs " +
                                    B.shape_str());
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A.data[i * k + p];
            const double* brow = &B.data[p * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& node) {
        const double* g = node.grad.data.data();
        if (a->requires_grad) {  // dA = dC B^T
            const double* B = b->value.data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = &g[i * n];
                    const double* brow = &B[p * n];
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    a->grad.data[i * k + p] += s;
                }
        }
        if (b->requires_grad) {  // dB = A^T dC
            const double* A = a->value.data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    const double* grow = &g[i * n];
                    double* brow = &b->grad.data[p * n];
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

inline Var transpose(const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::invalid_argument("transpose: expected rank-2, got " + A.shape_str());
    const std::size_t m = A.dim(0), n = A.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = A.data[i * n + j];
    return make_node(std::move(out), {a}, [a, m, n](Node& node) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) a->grad.data[i * n + j] += node.grad.data[j * m + i];
    });
}

inline Var relu(const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_node(std::move(out), {a}, [a](Node& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (a->value.data[i] > 0.0) a->grad.data[i] += n.grad.data[i];
    });
}

// row-wise softmax with max subtraction
inline Var softmax_rows(const Var& a) {
    const Tensor& X = a->value;
    if (X.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank-2, got " + X.shape_str());
    const std::size_t r = X.dim(0), c = X.dim(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        const double* xrow = &X.data[i * c];
        double* orow = &out.data[i * c];
        const double mx = *std::max_element(xrow, xrow + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += (orow[j] = std::exp(xrow[j] - mx));
        for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
    }
    return make_node(std::move(out), {a}, [a, r, c](Node& node) {
        for (std::size_t i = 0; i < r; ++i) {
            const double* s = &node.value.data[i * c];
            const double* g = &node.grad.data[i * c];
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * s[j];
            for (std::size_t j = 0; j < c; ++j) a->grad.data[i * c + j] += s[j] * (g[j] - dot);
        }
    });
}

// per-channel spatial mean: [C,h,w] -> [C]
inline Var gap(const Var& a) {
    const Tensor& X = a->value;
    if (X.rank() != 3) throw std::invalid_argument("gap: expected rank-3, got " + X.shape_str());
    const std::size_t C = X.dim(0), hw = X.dim(1) * X.dim(2);
    Tensor out({C});
    for (std::size_t ch = 0; ch < C; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += X.data[ch * hw + i];
        out.data[ch] = s / static_cast<double>(hw);
    }
    return make_node(std::move(out), {a}, [a, C, hw](Node& node) {
        for (std::size_t ch = 0; ch < C; ++ch) {
            const double g = node.grad.data[ch] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) a->grad.data[ch * hw + i] += g;
        }
    });
}

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
    if (Tensor::numel_of(shape) != a->value.numel())
        throw std::invalid_argument("reshape: element count mismatch " + a->value.shape_str());
    Tensor out(std::move(shape), a->value.data);  // data verbatim
    return make_node(std::move(out), {a}, [a](Node& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad.data[i] += n.grad.data[i];
    });
}

// 2-D block slice, rows [r0,r1) x cols [c0,c1)
inline Var slice2d(const Var& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    const Tensor& X = a->value;
    if (X.rank() != 2 || r1 > X.dim(0) || c1 > X.dim(1) || r0 >= r1 || c0 >= c1)
        throw std::invalid_argument("slice2d: bad range on " + X.shape_str());
    const std::size_t cols = X.dim(1), m = r1 - r0, n = c1 - c0;
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = X.data[(r0 + i) * cols + c0 + j];
    return make_node(std::move(out), {a}, [a, r0, c0, cols, m, n](Node& node) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                a->grad.data[(r0 + i) * cols + c0 + j] += node.grad.data[i * n + j];
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    const std::size_t cols = parts[0]->value.dim(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 2 || p->value.dim(1) != cols)
            throw std::invalid_argument("concat_rows: column mismatch");
        rows += p->value.dim(0);
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
        off += p->value.numel();
    }
    return make_node(std::move(out), parts, [parts](Node& node) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p->requires_grad)
                for (std::size_t i = 0; i < p->value.numel(); ++i)
                    p->grad.data[i] += node.grad.data[off + i];
            off += p->value.numel();
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const std::size_t rows = parts[0]->value.dim(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 2 || p->value.dim(0) != rows)
            throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->value.dim(1);
    }
    Tensor out({rows, cols});
    std::size_t coff = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p->value.dim(1);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pc; ++j)
                out.data[i * cols + coff + j] = p->value.data[i * pc + j];
        coff += pc;
    }
    return make_node(std::move(out), parts, [parts, rows, cols](Node& node) {
        std::size_t coff = 0;
        for (const auto& p : parts) {
            const std::size_t pc = p->value.dim(1);
            if (p->requires_grad)
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                        p->grad.data[i * pc + j] += node.grad.data[i * cols + coff + j];
            coff += pc;
        }
    });
}

// flattens every part row-major and concatenates; pair with reshape to stack
inline Var concat_flat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_flat: empty input");
    std::size_t total = 0;
    for (const auto& p : parts) total += p->value.numel();
    Tensor out({total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
        off += p->value.numel();
    }
    return make_node(std::move(out), parts, [parts](Node& node) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p->requires_grad)
                for (std::size_t i = 0; i < p->value.numel(); ++i)
                    p->grad.data[i] += node.grad.data[off + i];
            off += p->value.numel();
        }
    });
}

// collapse one axis; keep=false drops it from the output shape
namespace detail {
inline void axis_strides(const std::vector<std::size_t>& shape, std::size_t axis,
                         std::size_t& outer, std::size_t& len, std::size_t& inner) {
    if (axis >= shape.size()) throw std::invalid_argument("axis out of range");
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    len = shape[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}
}  // namespace detail

inline Var sum_axis(const Var& a, std::size_t axis) {
    std::size_t outer, len, inner;
    detail::axis_strides(a->value.shape, axis, outer, len, inner);
    std::vector<std::size_t> oshape = a->value.shape;
    oshape.erase(oshape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (oshape.empty()) oshape = {1};
    Tensor out(oshape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i)
                out.data[o * inner + i] += a->value.data[(o * len + l) * inner + i];
    return make_node(std::move(out), {a}, [a, outer, len, inner](Node& node) {
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i)
                    a->grad.data[(o * len + l) * inner + i] += node.grad.data[o * inner + i];
    });
}

inline Var mean_axis(const Var& a, std::size_t axis) {
    return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a->value.shape.at(axis)));
}

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    return make_node(Tensor({1}, {s}), {a}, [a](Node& node) {
        const double g = node.grad.data[0];
        for (double& d : a->grad.data) d += g;
    });
}

// x: [Cin,H,W], kernel: [Cout,Cin,kh,kw], bias: [Cout]; explicit stride and
// zero padding per call
inline Var conv2d(const Var& x, const Var& kernel, const Var& bias, std::size_t stride,
                  std::size_t pad) {
    const Tensor& X = x->value;
    const Tensor& K = kernel->value;
    if (X.rank() != 3 || K.rank() != 4 || K.dim(1) != X.dim(0))
        throw std::invalid_argument("conv2d: shape mismatch " + X.shape_str() + " vs " +
                                    K.shape_str());
    const std::size_t cin = X.dim(0), h = X.dim(1), w = X.dim(2);
    const std::size_t cout = K.dim(0), kh = K.dim(2), kw = K.dim(3);
    if (bias->value.rank() != 1 || bias->value.dim(0) != cout)
        throw std::invalid_argument("conv2d: bias shape mismatch " + bias->value.shape_str());
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    if (stride == 0) throw std::invalid_argument("conv2d: zero stride");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;

    Tensor out({cout, oh, ow});
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double s = bias->value.data[co];
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            s += X.data[(ci * h + static_cast<std::size_t>(iy)) * w +
                                        static_cast<std::size_t>(ix)] *
                                 K.data[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                out.data[(co * oh + oy) * ow + ox] = s;
            }

    return make_node(std::move(out), {x, kernel, bias},
                     [x, kernel, bias, cin, h, w, cout, kh, kw, stride, pad, oh, ow](Node& node) {
        const double* g = node.grad.data.data();
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double go = g[(co * oh + oy) * ow + ox];
                    if (bias->requires_grad) bias->grad.data[co] += go;
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                const std::size_t xi =
                                    (ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                                const std::size_t ki = ((co * cin + ci) * kh + ky) * kw + kx;
                                if (x->requires_grad) x->grad.data[xi] += go * kernel->value.data[ki];
                                if (kernel->requires_grad) kernel->grad.data[ki] += go * x->value.data[xi];
                            }
                        }
                }
    });
}

// x: [m,in], weight: [in,out], bias: [out]
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
    auto y = matmul(x, weight);
    const std::size_t m = y->value.dim(0), n = y->value.dim(1);
    if (bias->value.rank() != 1 || bias->value.dim(0) != n)
        throw std::invalid_argument("linear: bias shape mismatch " + bias->value.shape_str());
    Tensor out = y->value;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bias->value.data[j];
    return make_node(std::move(out), {y, bias}, [y, bias, m, n](Node& node) {
        if (y->requires_grad)
            for (std::size_t i = 0; i < node.grad.numel(); ++i) y->grad.data[i] += node.grad.data[i];
        if (bias->requires_grad)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) bias->grad.data[j] += node.grad.data[i * n + j];
    });
}

// image [C,H,W] -> patch matrix [N, C*p*p], patches enumerated row-major
inline Var im2patches(const Var& x, std::size_t p) {
    const Tensor& X = x->value;
    if (X.rank() != 3) throw std::invalid_argument("im2patches: expected rank-3, got " + X.shape_str());
    const std::size_t C = X.dim(0), H = X.dim(1), W = X.dim(2);
    if (p == 0 || H % p != 0 || W % p != 0)
        throw std::invalid_argument("im2patches: image " + X.shape_str() + " not divisible by patch " +
                                    std::to_string(p));
    const std::size_t gh = H / p, gw = W / p, n = gh * gw, d = C * p * p;
    Tensor out({n, d});
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        out.data[(gy * gw + gx) * d + (c * p + py) * p + px] =
                            X.data[(c * H + gy * p + py) * W + gx * p + px];
    return make_node(std::move(out), {x}, [x, C, H, W, p, gh, gw, d](Node& node) {
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t py = 0; py < p; ++py)
                        for (std::size_t px = 0; px < p; ++px)
                            x->grad.data[(c * H + gy * p + py) * W + gx * p + px] +=
                                node.grad.data[(gy * gw + gx) * d + (c * p + py) * p + px];
    });
}

}  // namespace camforge::ad
