#pragma once

#include <cmath>

#include "fia/core/ops.hpp"

// Spatial ops on (N,C,H,W) tensors. Convolution lowers to GEMM via im2col;
// the column buffer is rebuilt in the backward pass instead of being captured,
// trading FLOPs for memory (activations dominate the footprint otherwise).
namespace fia {
namespace ag {

struct ConvDims {
    int n, ci, h, w, co, kh, kw, stride, pad, ho, wo;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    if (x.shape.size() != 4 || w.shape.size() != 4) throw InputError("conv2d: expected 4-d input and kernel");
    if (x.shape[1] != w.shape[1]) throw InputError("conv2d: channel mismatch");
    ConvDims d;
    d.n = x.shape[0];
    d.ci = x.shape[1];
    d.h = x.shape[2];
    d.w = x.shape[3];
    d.co = w.shape[0];
    d.kh = w.shape[2];
    d.kw = w.shape[3];
    d.stride = stride;
    d.pad = pad;
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw InputError("conv2d: kernel larger than padded input");
    return d;
}

// cols is (ci*kh*kw) x (n*ho*wo), column j = ((n*ho)+oh)*wo + ow.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    int khw = d.kh * d.kw;
    size_t ncols = static_cast<size_t>(d.n) * d.ho * d.wo;
    for (int c = 0; c < d.ci; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                T* row = cols + (static_cast<size_t>(c) * khw + ky * d.kw + kx) * ncols;
                for (int n = 0; n < d.n; ++n) {
                    const T* img = x + (static_cast<size_t>(n) * d.ci + c) * d.h * d.w;
                    for (int oh = 0; oh < d.ho; ++oh) {
                        int iy = oh * d.stride + ky - d.pad;
                        T* dst = row + (static_cast<size_t>(n) * d.ho + oh) * d.wo;
                        if (iy < 0 || iy >= d.h) {
                            std::fill_n(dst, d.wo, T(0));
                            continue;
                        }
                        for (int ow = 0; ow < d.wo; ++ow) {
                            int ix = ow * d.stride + kx - d.pad;
                            dst[ow] = (ix >= 0 && ix < d.w) ? img[iy * d.w + ix] : T(0);
                        }
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* gx) {
    int khw = d.kh * d.kw;
    size_t ncols = static_cast<size_t>(d.n) * d.ho * d.wo;
    for (int c = 0; c < d.ci; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                const T* row = cols + (static_cast<size_t>(c) * khw + ky * d.kw + kx) * ncols;
                for (int n = 0; n < d.n; ++n) {
                    T* img = gx + (static_cast<size_t>(n) * d.ci + c) * d.h * d.w;
                    for (int oh = 0; oh < d.ho; ++oh) {
                        int iy = oh * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        const T* src = row + (static_cast<size_t>(n) * d.ho + oh) * d.wo;
                        for (int ow = 0; ow < d.wo; ++ow) {
                            int ix = ow * d.stride + kx - d.pad;
                            if (ix >= 0 && ix < d.w) img[iy * d.w + ix] += src[ow];
                        }
                    }
                }
            }
}

// Output of the kernel GEMM is (co) x (n*ho*wo); interleave to (n,co,ho,wo).
template <typename T>
void scatter_conv_out(const T* y, const ConvDims& d, const T* bias, T* out) {
    size_t hw = static_cast<size_t>(d.ho) * d.wo;
    for (int co = 0; co < d.co; ++co)
        for (int n = 0; n < d.n; ++n) {
            const T* src = y + (static_cast<size_t>(co) * d.n + n) * hw;
            T* dst = out + (static_cast<size_t>(n) * d.co + co) * hw;
            T b = bias ? bias[co] : T(0);
            for (size_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
        }
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
    ConvDims d = conv_dims(x->value, w->value, stride, pad);
    if (b) check_shape(b->value, {d.co}, "conv2d bias");
    size_t k = static_cast<size_t>(d.ci) * d.kh * d.kw;
    size_t ncols = static_cast<size_t>(d.n) * d.ho * d.wo;
    std::vector<T> cols(k * ncols);
    im2col(x->value.data.data(), d, cols.data());
    std::vector<T> y(static_cast<size_t>(d.co) * ncols);
    gemm<T>(w->value.data.data(), cols.data(), y.data(), d.co, static_cast<int>(k), static_cast<int>(ncols));
    Tensor<T> out({d.n, d.co, d.ho, d.wo});
    scatter_conv_out(y.data(), d, b ? b->value.data.data() : nullptr, out.data.data());
    std::vector<Var<T>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_op<T>(std::move(out), std::move(parents), [x, w, b, d, k, ncols](Node<T>& nd) {
        size_t hw = static_cast<size_t>(d.ho) * d.wo;
        // de-interleave grad back to GEMM layout (co) x (n*ho*wo)
        std::vector<T> gy(static_cast<size_t>(d.co) * ncols);
        for (int co = 0; co < d.co; ++co)
            for (int n = 0; n < d.n; ++n)
                std::copy_n(&nd.grad.data[(static_cast<size_t>(n) * d.co + co) * hw], hw,
                            &gy[(static_cast<size_t>(co) * d.n + n) * hw]);
        if (b && b->needs_grad) {
            b->ensure_grad();
            for (int co = 0; co < d.co; ++co) {
                double acc = 0;
                for (size_t i = 0; i < ncols; ++i) acc += static_cast<double>(gy[static_cast<size_t>(co) * ncols + i]);
                b->grad.data[co] += static_cast<T>(acc);
            }
        }
        if (w->needs_grad) {
            w->ensure_grad();
            std::vector<T> cols(k * ncols);
            im2col(x->value.data.data(), d, cols.data());
            gemm<T>(gy.data(), cols.data(), w->grad.data.data(), d.co, static_cast<int>(ncols), static_cast<int>(k), false, true, true);
        }
        if (x->needs_grad) {
            x->ensure_grad();
            std::vector<T> gcols(k * ncols);
            gemm<T>(w->value.data.data(), gy.data(), gcols.data(), static_cast<int>(k), d.co, static_cast<int>(ncols), true, false);
            col2im_add(gcols.data(), d, x->grad.data.data());
        }
    });
}

// 2x2 average pooling, stride 2; requires even spatial dims.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || s[2] % 2 || s[3] % 2) throw InputError("avg_pool2: expected even (N,C,H,W)");
    int nc = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
    Tensor<T> out({s[0], s[1], ho, wo});
    for (int p = 0; p < nc; ++p) {
        const T* img = &x->value.data[static_cast<size_t>(p) * h * w];
        T* o = &out.data[static_cast<size_t>(p) * ho * wo];
        for (int y = 0; y < ho; ++y)
            for (int z = 0; z < wo; ++z)
                o[y * wo + z] = (img[(2 * y) * w + 2 * z] + img[(2 * y) * w + 2 * z + 1] +
                                 img[(2 * y + 1) * w + 2 * z] + img[(2 * y + 1) * w + 2 * z + 1]) /
                                T(4);
    }
    return make_op<T>(std::move(out), {x}, [x, nc, h, w, ho, wo](Node<T>& nd) {
        x->ensure_grad();
        for (int p = 0; p < nc; ++p) {
            T* gi = &x->grad.data[static_cast<size_t>(p) * h * w];
            const T* go = &nd.grad.data[static_cast<size_t>(p) * ho * wo];
            for (int y = 0; y < ho; ++y)
                for (int z = 0; z < wo; ++z) {
                    T g = go[y * wo + z] / T(4);
                    gi[(2 * y) * w + 2 * z] += g;
                    gi[(2 * y) * w + 2 * z + 1] += g;
                    gi[(2 * y + 1) * w + 2 * z] += g;
                    gi[(2 * y + 1) * w + 2 * z + 1] += g;
                }
        }
    });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw InputError("upsample_nearest2: expected (N,C,H,W)");
    int nc = s[0] * s[1], h = s[2], w = s[3];
    Tensor<T> out({s[0], s[1], 2 * h, 2 * w});
    for (int p = 0; p < nc; ++p) {
        const T* img = &x->value.data[static_cast<size_t>(p) * h * w];
        T* o = &out.data[static_cast<size_t>(p) * 4 * h * w];
        for (int y = 0; y < 2 * h; ++y)
            for (int z = 0; z < 2 * w; ++z) o[y * 2 * w + z] = img[(y / 2) * w + z / 2];
    }
    return make_op<T>(std::move(out), {x}, [x, nc, h, w](Node<T>& nd) {
        x->ensure_grad();
        for (int p = 0; p < nc; ++p) {
            T* gi = &x->grad.data[static_cast<size_t>(p) * h * w];
            const T* go = &nd.grad.data[static_cast<size_t>(p) * 4 * h * w];
            for (int y = 0; y < 2 * h; ++y)
                for (int z = 0; z < 2 * w; ++z) gi[(y / 2) * w + z / 2] += go[y * 2 * w + z];
        }
    });
}

struct BilinearTap {
    int y0, y1, x0, x1;
    float wy, wx;  // weight of the (y1, x1) side
};

inline void bilinear_taps(int in, int out, int i, int* lo, int* hi, float* whi) {
    // align_corners=false convention: sample at pixel centres
    float pos = (static_cast<float>(i) + 0.5f) * static_cast<float>(in) / static_cast<float>(out) - 0.5f;
    float fl = std::floor(pos);
    *whi = pos - fl;
    *lo = std::max(0, std::min(in - 1, static_cast<int>(fl)));
    *hi = std::max(0, std::min(in - 1, static_cast<int>(fl) + 1));
    if (static_cast<int>(fl) < 0) *whi = 0.0f;  // clamp below: all weight on pixel 0
    if (static_cast<int>(fl) + 1 > in - 1) *whi = 0.0f;
}

// Bilinear resize to (ho, wo); the backward pass scatters with the same taps,
// making it the exact adjoint of the forward map.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int ho, int wo) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw InputError("resize_bilinear: expected (N,C,H,W)");
    int nc = s[0] * s[1], h = s[2], w = s[3];
    if (h == ho && w == wo) return reshape(x, s);  // identity, but keep a node boundary
    std::vector<BilinearTap> taps(static_cast<size_t>(ho) * wo);
    for (int y = 0; y < ho; ++y) {
        int y0, y1;
        float wy;
        bilinear_taps(h, ho, y, &y0, &y1, &wy);
        for (int z = 0; z < wo; ++z) {
            int x0, x1;
            float wx;
            bilinear_taps(w, wo, z, &x0, &x1, &wx);
            taps[static_cast<size_t>(y) * wo + z] = {y0, y1, x0, x1, wy, wx};
        }
    }
    Tensor<T> out({s[0], s[1], ho, wo});
    for (int p = 0; p < nc; ++p) {
        const T* img = &x->value.data[static_cast<size_t>(p) * h * w];
        T* o = &out.data[static_cast<size_t>(p) * ho * wo];
        for (size_t i = 0; i < taps.size(); ++i) {
            const BilinearTap& t = taps[i];
            T top = img[t.y0 * w + t.x0] * T(1 - t.wx) + img[t.y0 * w + t.x1] * T(t.wx);
            T bot = img[t.y1 * w + t.x0] * T(1 - t.wx) + img[t.y1 * w + t.x1] * T(t.wx);
            o[i] = top * T(1 - t.wy) + bot * T(t.wy);
        }
    }
    return make_op<T>(std::move(out), {x}, [x, taps = std::move(taps), nc, h, w, ho, wo](Node<T>& nd) {
        x->ensure_grad();
        for (int p = 0; p < nc; ++p) {
            T* gi = &x->grad.data[static_cast<size_t>(p) * h * w];
            const T* go = &nd.grad.data[static_cast<size_t>(p) * ho * wo];
            for (size_t i = 0; i < taps.size(); ++i) {
                const BilinearTap& t = taps[i];
                T g = go[i];
                gi[t.y0 * w + t.x0] += g * T((1 - t.wy) * (1 - t.wx));
                gi[t.y0 * w + t.x1] += g * T((1 - t.wy) * t.wx);
                gi[t.y1 * w + t.x0] += g * T(t.wy * (1 - t.wx));
                gi[t.y1 * w + t.x1] += g * T(t.wy * t.wx);
            }
        }
    });
}

// (N,C,H,W) -> (N,C) spatial mean
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw InputError("global_avg_pool: expected (N,C,H,W)");
    int nc = s[0] * s[1], hw = s[2] * s[3];
    Tensor<T> out({s[0], s[1]});
    for (int p = 0; p < nc; ++p) {
        const T* img = &x->value.data[static_cast<size_t>(p) * hw];
        double acc = 0;
        for (int i = 0; i < hw; ++i) acc += static_cast<double>(img[i]);
        out.data[p] = static_cast<T>(acc / hw);
    }
    return make_op<T>(std::move(out), {x}, [x, nc, hw](Node<T>& nd) {
        x->ensure_grad();
        for (int p = 0; p < nc; ++p) {
            T g = nd.grad.data[p] / T(hw);
            T* gi = &x->grad.data[static_cast<size_t>(p) * hw];
            for (int i = 0; i < hw; ++i) gi[i] += g;
        }
    });
}

// (N, C*r^2, H, W) -> (N, C, r*H, r*W) with
// out[n, c, r*h + a, r*w + b] = in[n, c*r^2 + a*r + b, h, w]
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || s[1] % (r * r) != 0) throw InputError("pixel_shuffle: channels not divisible by r^2");
    int n_ = s[0], c = s[1] / (r * r), h = s[2], w = s[3];
    Tensor<T> out({n_, c, r * h, r * w});
    for (int n = 0; n < n_; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int a = 0; a < r; ++a)
                for (int bb = 0; bb < r; ++bb) {
                    const T* src = &x->value.data[((static_cast<size_t>(n) * s[1]) + ch * r * r + a * r + bb) * h * w];
                    T* dst = &out.data[(static_cast<size_t>(n) * c + ch) * (r * h) * (r * w)];
                    for (int y = 0; y < h; ++y)
                        for (int z = 0; z < w; ++z) dst[(r * y + a) * (r * w) + (r * z + bb)] = src[y * w + z];
                }
    int cin = s[1];
    return make_op<T>(std::move(out), {x}, [x, n_, c, h, w, r, cin](Node<T>& nd) {
        x->ensure_grad();
        for (int n = 0; n < n_; ++n)
            for (int ch = 0; ch < c; ++ch)
                for (int a = 0; a < r; ++a)
                    for (int bb = 0; bb < r; ++bb) {
                        T* gsrc = &x->grad.data[((static_cast<size_t>(n) * cin) + ch * r * r + a * r + bb) * h * w];
                        const T* gdst = &nd.grad.data[(static_cast<size_t>(n) * c + ch) * (r * h) * (r * w)];
                        for (int y = 0; y < h; ++y)
                            for (int z = 0; z < w; ++z) gsrc[y * w + z] += gdst[(r * y + a) * (r * w) + (r * z + bb)];
                    }
    });
}

}  // namespace ag
}  // namespace fia
