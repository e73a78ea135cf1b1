#include "osteo/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace osteo {

namespace {

struct Spatial {
    std::size_t n, c, h, w;
    bool batched;
};

Spatial spatial_of(const Shape& s, const char* op) {
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    throw DimensionError(std::string(op) + ": expected C×H×W or N×C×H×W, got " + shape_string(s));
}

Shape spatial_shape(bool batched, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return batched ? Shape{n, c, h, w} : Shape{c, h, w};
}

template <typename T>
T* grad_of(const Tensor<T>& t) {
    return t.requires_grad() ? t.grad_buffer().data() : nullptr;
}

template <typename T>
void im2col(const T* in, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, int stride,
            int pad, std::size_t ho, std::size_t wo, T* col) {
    const std::size_t plane = ho * wo;
    std::size_t r = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = in + ch * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
                T* dst = col + r * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
                    T* row = dst + oy * wo;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(row, row + wo, T(0));
                        continue;
                    }
                    const T* srow = src + iy * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
                        row[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : srow[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, int stride,
            int pad, std::size_t ho, std::size_t wo, T* in) {
    const std::size_t plane = ho * wo;
    std::size_t r = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        T* dst = in + ch * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
                const T* src = col + r * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    T* drow = dst + iy * w;
                    const T* srow = src + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
                        if (ix >= 0 && ix < static_cast<long>(w)) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

// Index maps for broadcasting a and b against each other.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> ia, ib;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(rank - b.size()));
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
            throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                                 " do not broadcast");
        }
        out[i] = std::max(pa[i], pb[i]);
    }
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t accA = 1, accB = 1;
    for (std::size_t i = rank; i-- > 0;) {
        sa[i] = pa[i] == 1 ? 0 : accA;
        sb[i] = pb[i] == 1 ? 0 : accB;
        accA *= pa[i];
        accB *= pb[i];
    }
    const std::size_t total = shape_numel(out);
    Broadcast r{out, std::vector<std::size_t>(total), std::vector<std::size_t>(total)};
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offA = 0, offB = 0;
    for (std::size_t k = 0; k < total; ++k) {
        r.ia[k] = offA;
        r.ib[k] = offB;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out[d]) {
                offA += sa[d];
                offB += sb[d];
                break;
            }
            offA -= sa[d] * (out[d] - 1);
            offB -= sb[d] * (out[d] - 1);
            idx[d] = 0;
        }
    }
    return r;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding) {
    const auto s = spatial_of(input.shape(), "conv2d");
    if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be C_out×C_in×k×k, got " + shape_string(kernel.shape()));
    const std::size_t cout = kernel.dim(0), cin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (cin != s.c) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(cin) + " input channels, input has " +
                             std::to_string(s.c));
    }
    if (stride < 1 || padding < 0) throw DimensionError("conv2d: stride must be positive and padding non-negative");
    if (kh > s.h + 2 * static_cast<std::size_t>(padding) || kw > s.w + 2 * static_cast<std::size_t>(padding)) {
        throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                             shape_string(input.shape()));
    }
    const std::size_t ho = (s.h + 2 * padding - kh) / stride + 1;
    const std::size_t wo = (s.w + 2 * padding - kw) / stride + 1;
    const std::size_t R = cin * kh * kw, P = ho * wo;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    Tensor<T> out(spatial_shape(s.batched, s.n, cout, ho, wo));
    std::vector<T> col(pointwise ? 0 : R * P);
    const T* W = kernel.data().data();
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* in = input.data().data() + n * cin * s.h * s.w;
        const T* cp = in;
        if (!pointwise) {
            im2col(in, cin, s.h, s.w, kh, kw, stride, padding, ho, wo, col.data());
            cp = col.data();
        }
        T* o = out.data().data() + n * cout * P;
        for (std::size_t co = 0; co < cout; ++co) {
            T* orow = o + co * P;
            const T* wrow = W + co * R;
            for (std::size_t r = 0; r < R; ++r) {
                const T wv = wrow[r];
                const T* crow = cp + r * P;
                for (std::size_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
            }
        }
    }
    check_finite(out, "conv2d");

    out.record({input, kernel}, [input, kernel, s, cout, cin, kh, kw, ho, wo, R, P, stride, padding,
                                 pointwise](const TensorImpl<T>& self) mutable {
        T* gin = grad_of(input);
        T* gk = grad_of(kernel);
        const T* W = kernel.data().data();
        std::vector<T> col(pointwise ? 0 : R * P), dcol(pointwise ? 0 : R * P);
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* in = input.data().data() + n * cin * s.h * s.w;
            const T* go = self.grad.data() + n * cout * P;
            if (gk) {
                const T* cp = in;
                if (!pointwise) {
                    im2col(in, cin, s.h, s.w, kh, kw, stride, padding, ho, wo, col.data());
                    cp = col.data();
                }
                for (std::size_t co = 0; co < cout; ++co) {
                    const T* grow = go + co * P;
                    T* gwrow = gk + co * R;
                    for (std::size_t r = 0; r < R; ++r) {
                        const T* crow = cp + r * P;
                        T acc = 0;
                        for (std::size_t p = 0; p < P; ++p) acc += grow[p] * crow[p];
                        gwrow[r] += acc;
                    }
                }
            }
            if (gin) {
                T* target = gin + n * cin * s.h * s.w;
                T* dc = pointwise ? target : dcol.data();
                if (!pointwise) std::fill(dcol.begin(), dcol.end(), T(0));
                for (std::size_t co = 0; co < cout; ++co) {
                    const T* grow = go + co * P;
                    const T* wrow = W + co * R;
                    for (std::size_t r = 0; r < R; ++r) {
                        const T wv = wrow[r];
                        T* drow = dc + r * P;
                        for (std::size_t p = 0; p < P; ++p) drow[p] += wv * grow[p];
                    }
                }
                if (!pointwise) col2im(dcol.data(), cin, s.h, s.w, kh, kw, stride, padding, ho, wo, target);
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int factor) {
    if (factor != 2 && factor != 4 && factor != 8) {
        throw ConfigError("bilinear_upsample: factor must be 2, 4 or 8, got " + std::to_string(factor));
    }
    const auto s = spatial_of(input.shape(), "bilinear_upsample");
    const std::size_t ho = s.h * factor, wo = s.w * factor;

    struct Tap {
        std::size_t i0, i1;
        T w0, w1;
    };
    auto table = [factor](std::size_t in_size, std::size_t out_size) {
        std::vector<Tap> taps(out_size);
        for (std::size_t o = 0; o < out_size; ++o) {
            T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
            if (src < 0) src = 0;
            auto i0 = static_cast<std::size_t>(std::floor(src));
            if (i0 > in_size - 1) i0 = in_size - 1;
            const std::size_t i1 = std::min(i0 + 1, in_size - 1);
            const T l = src - static_cast<T>(i0);
            taps[o] = {i0, i1, T(1) - l, l};
        }
        return taps;
    };
    const auto ty = table(s.h, ho), tx = table(s.w, wo);

    Tensor<T> out(spatial_shape(s.batched, s.n, s.c, ho, wo));
    const T* in = input.data().data();
    T* o = out.data().data();
    for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
        const T* src = in + plane * s.h * s.w;
        T* dst = o + plane * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < wo; ++x) {
                const auto& b = tx[x];
                dst[y * wo + x] = a.w0 * (b.w0 * src[a.i0 * s.w + b.i0] + b.w1 * src[a.i0 * s.w + b.i1]) +
                                  a.w1 * (b.w0 * src[a.i1 * s.w + b.i0] + b.w1 * src[a.i1 * s.w + b.i1]);
            }
        }
    }
    check_finite(out, "bilinear_upsample");

    out.record({input}, [input, s, ho, wo, ty, tx](const TensorImpl<T>& self) mutable {
        T* gin = grad_of(input);
        if (!gin) return;
        for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
            T* dst = gin + plane * s.h * s.w;
            const T* g = self.grad.data() + plane * ho * wo;
            for (std::size_t y = 0; y < ho; ++y) {
                const auto& a = ty[y];
                for (std::size_t x = 0; x < wo; ++x) {
                    const auto& b = tx[x];
                    const T v = g[y * wo + x];
                    dst[a.i0 * s.w + b.i0] += a.w0 * b.w0 * v;
                    dst[a.i0 * s.w + b.i1] += a.w0 * b.w1 * v;
                    dst[a.i1 * s.w + b.i0] += a.w1 * b.w0 * v;
                    dst[a.i1 * s.w + b.i1] += a.w1 * b.w1 * v;
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> pool_spatial(const Tensor<T>& input, PoolMode mode, bool global, int window, int stride) {
    const auto s = spatial_of(input.shape(), "pool_spatial");
    std::size_t wh = s.h, ww = s.w, st = 1;
    if (!global) {
        if (window < 1) throw DimensionError("pool_spatial: window must be positive");
        if (static_cast<std::size_t>(window) > s.h || static_cast<std::size_t>(window) > s.w) {
            throw DimensionError("pool_spatial: window " + std::to_string(window) + " exceeds spatial extent " +
                                 shape_string(input.shape()));
        }
        wh = ww = static_cast<std::size_t>(window);
        st = stride > 0 ? static_cast<std::size_t>(stride) : wh;
    }
    const std::size_t ho = (s.h - wh) / st + 1, wo = (s.w - ww) / st + 1;
    Tensor<T> out(spatial_shape(s.batched, s.n, s.c, ho, wo));
    std::vector<std::size_t> argmax(mode == PoolMode::max ? out.numel() : 0);
    const T* in = input.data().data();
    T* o = out.data().data();
    const T inv = T(1) / static_cast<T>(wh * ww);
    for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
        const std::size_t base = plane * s.h * s.w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::size_t k = plane * ho * wo + oy * wo + ox;
                if (mode == PoolMode::max) {
                    std::size_t best = base + oy * st * s.w + ox * st;
                    for (std::size_t y = oy * st; y < oy * st + wh; ++y) {
                        for (std::size_t x = ox * st; x < ox * st + ww; ++x) {
                            const std::size_t i = base + y * s.w + x;
                            if (in[i] > in[best]) best = i;
                        }
                    }
                    argmax[k] = best;
                    o[k] = in[best];
                } else {
                    T acc = 0;
                    for (std::size_t y = oy * st; y < oy * st + wh; ++y) {
                        for (std::size_t x = ox * st; x < ox * st + ww; ++x) acc += in[base + y * s.w + x];
                    }
                    o[k] = acc * inv;
                }
            }
        }
    }
    check_finite(out, "pool_spatial");

    out.record({input}, [input, s, mode, wh, ww, st, ho, wo, inv, argmax](const TensorImpl<T>& self) mutable {
        T* gin = grad_of(input);
        if (!gin) return;
        const T* g = self.grad.data();
        if (mode == PoolMode::max) {
            for (std::size_t k = 0; k < argmax.size(); ++k) gin[argmax[k]] += g[k];
            return;
        }
        for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
            const std::size_t base = plane * s.h * s.w;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const T v = g[plane * ho * wo + oy * wo + ox] * inv;
                    for (std::size_t y = oy * st; y < oy * st + wh; ++y) {
                        for (std::size_t x = ox * st; x < ox * st + ww; ++x) gin[base + y * s.w + x] += v;
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> pool_channelwise(const Tensor<T>& input, PoolMode mode) {
    const auto s = spatial_of(input.shape(), "pool_channelwise");
    const std::size_t hw = s.h * s.w;
    Tensor<T> out(spatial_shape(s.batched, s.n, 1, s.h, s.w));
    std::vector<std::size_t> argmax(mode == PoolMode::max ? out.numel() : 0);
    const T* in = input.data().data();
    T* o = out.data().data();
    const T inv = T(1) / static_cast<T>(s.c);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = in + n * s.c * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            if (mode == PoolMode::max) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < s.c; ++c) {
                    if (src[c * hw + p] > src[best * hw + p]) best = c;
                }
                argmax[n * hw + p] = n * s.c * hw + best * hw + p;
                o[n * hw + p] = src[best * hw + p];
            } else {
                T acc = 0;
                for (std::size_t c = 0; c < s.c; ++c) acc += src[c * hw + p];
                o[n * hw + p] = acc * inv;
            }
        }
    }
    check_finite(out, "pool_channelwise");

    out.record({input}, [input, s, hw, mode, inv, argmax](const TensorImpl<T>& self) mutable {
        T* gin = grad_of(input);
        if (!gin) return;
        const T* g = self.grad.data();
        if (mode == PoolMode::max) {
            for (std::size_t k = 0; k < argmax.size(); ++k) gin[argmax[k]] += g[k];
            return;
        }
        for (std::size_t n = 0; n < s.n; ++n) {
            for (std::size_t c = 0; c < s.c; ++c) {
                T* dst = gin + n * s.c * hw + c * hw;
                for (std::size_t p = 0; p < hw; ++p) dst[p] += g[n * hw + p] * inv;
            }
        }
    });
    return out;
}

namespace {

template <typename T>
Tensor<T> dense_impl(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias) {
    if (input.rank() != 1 && input.rank() != 2) {
        throw DimensionError("dense: input must be a vector or N×D batch, got " + shape_string(input.shape()));
    }
    if (weights.rank() != 2) throw DimensionError("dense: weights must be D_out×D, got " + shape_string(weights.shape()));
    const bool batched = input.rank() == 2;
    const std::size_t n = batched ? input.dim(0) : 1;
    const std::size_t d = batched ? input.dim(1) : input.dim(0);
    const std::size_t dout = weights.dim(0);
    if (weights.dim(1) != d) {
        throw DimensionError("dense: weights " + shape_string(weights.shape()) + " do not accept input of length " +
                             std::to_string(d));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != dout)) {
        throw DimensionError("dense: bias " + shape_string(bias->shape()) + " does not match output length " +
                             std::to_string(dout));
    }
    Tensor<T> out(batched ? Shape{n, dout} : Shape{dout});
    const T* x = input.data().data();
    const T* W = weights.data().data();
    T* o = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dout; ++j) {
            T acc = bias ? (*bias)[j] : T(0);
            for (std::size_t k = 0; k < d; ++k) acc += W[j * d + k] * x[i * d + k];
            o[i * dout + j] = acc;
        }
    }
    check_finite(out, "dense");

    std::vector<Tensor<T>> inputs{input, weights};
    Tensor<T> b = bias ? *bias : Tensor<T>();
    if (bias) inputs.push_back(b);
    out.record(std::move(inputs), [input, weights, b, n, d, dout](const TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        const T* x = input.data().data();
        const T* W = weights.data().data();
        if (T* gx = grad_of(input)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dout; ++j)
                    for (std::size_t k = 0; k < d; ++k) gx[i * d + k] += W[j * d + k] * g[i * dout + j];
        }
        if (T* gw = grad_of(weights)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dout; ++j)
                    for (std::size_t k = 0; k < d; ++k) gw[j * d + k] += g[i * dout + j] * x[i * d + k];
        }
        if (b.defined()) {
            if (T* gb = grad_of(b)) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
            }
        }
    });
    return out;
}

}  // namespace

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights) {
    return dense_impl<T>(input, weights, nullptr);
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
    return dense_impl<T>(input, weights, &bias);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-input[i]));
    check_finite(out, "sigmoid");
    out.record({input}, [input](const TensorImpl<T>& self) mutable {
        T* g = grad_of(input);
        if (!g) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const T y = self.data[i];
            g[i] += self.grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] <= T(0) ? T(0) : input[i];
    check_finite(out, "relu");
    out.record({input}, [input](const TensorImpl<T>& self) mutable {
        T* g = grad_of(input);
        if (!g) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            if (input[i] > T(0)) g[i] += self.grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) {
        Tensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
        check_finite(out, "mul");
        out.record({a, b}, [a, b](const TensorImpl<T>& self) mutable {
            T* ga = grad_of(a);
            T* gb = grad_of(b);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (ga) ga[i] += self.grad[i] * b[i];
                if (gb) gb[i] += self.grad[i] * a[i];
            }
        });
        return out;
    }
    auto bc = broadcast(a.shape(), b.shape(), "mul");
    Tensor<T> out(bc.out);
    for (std::size_t k = 0; k < out.numel(); ++k) out[k] = a[bc.ia[k]] * b[bc.ib[k]];
    check_finite(out, "mul");
    out.record({a, b}, [a, b, bc = std::move(bc)](const TensorImpl<T>& self) mutable {
        T* ga = grad_of(a);
        T* gb = grad_of(b);
        for (std::size_t k = 0; k < self.grad.size(); ++k) {
            if (ga) ga[bc.ia[k]] += self.grad[k] * b[bc.ib[k]];
            if (gb) gb[bc.ib[k]] += self.grad[k] * a[bc.ia[k]];
        }
    });
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) {
        Tensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
        check_finite(out, "add");
        out.record({a, b}, [a, b](const TensorImpl<T>& self) mutable {
            T* ga = grad_of(a);
            T* gb = grad_of(b);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (ga) ga[i] += self.grad[i];
                if (gb) gb[i] += self.grad[i];
            }
        });
        return out;
    }
    auto bc = broadcast(a.shape(), b.shape(), "add");
    Tensor<T> out(bc.out);
    for (std::size_t k = 0; k < out.numel(); ++k) out[k] = a[bc.ia[k]] + b[bc.ib[k]];
    check_finite(out, "add");
    out.record({a, b}, [a, b, bc = std::move(bc)](const TensorImpl<T>& self) mutable {
        T* ga = grad_of(a);
        T* gb = grad_of(b);
        for (std::size_t k = 0; k < self.grad.size(); ++k) {
            if (ga) ga[bc.ia[k]] += self.grad[k];
            if (gb) gb[bc.ib[k]] += self.grad[k];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] * factor;
    check_finite(out, "scale");
    out.record({input}, [input, factor](const TensorImpl<T>& self) mutable {
        T* g = grad_of(input);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
    T acc = 0;
    for (auto v : input.data()) acc += v;
    auto out = Tensor<T>::scalar(acc);
    check_finite(out, "sum");
    out.record({input}, [input](const TensorImpl<T>& self) mutable {
        T* g = grad_of(input);
        if (!g) return;
        for (std::size_t i = 0; i < input.numel(); ++i) g[i] += self.grad[0];
    });
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& input) {
    if (input.rank() == 0) throw DimensionError("softmax: empty input");
    const std::size_t n = input.shape().back();
    const std::size_t rows = input.numel() / n;
    Tensor<T> out(input.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = input.data().data() + r * n;
        T* y = out.data().data() + r * n;
        const T mx = *std::max_element(x, x + n);
        T total = 0;
        for (std::size_t i = 0; i < n; ++i) total += (y[i] = std::exp(x[i] - mx));
        for (std::size_t i = 0; i < n; ++i) y[i] /= total;
    }
    check_finite(out, "softmax");
    out.record({input}, [input, n, rows](const TensorImpl<T>& self) mutable {
        T* g = grad_of(input);
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * n;
            const T* gy = self.grad.data() + r * n;
            T dot = 0;
            for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
            for (std::size_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (gy[i] - dot);
        }
    });
    return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
    if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
    const auto first = spatial_of(inputs.front().shape(), "concat_channels");
    std::size_t total = 0;
    std::vector<std::size_t> channels;
    for (const auto& t : inputs) {
        const auto s = spatial_of(t.shape(), "concat_channels");
        if (s.batched != first.batched || s.n != first.n || s.h != first.h || s.w != first.w) {
            throw DimensionError("concat_channels: spatial mismatch " + shape_string(t.shape()) + " vs " +
                                 shape_string(inputs.front().shape()));
        }
        channels.push_back(s.c);
        total += s.c;
    }
    const std::size_t hw = first.h * first.w;
    Tensor<T> out(spatial_shape(first.batched, first.n, total, first.h, first.w));
    for (std::size_t n = 0; n < first.n; ++n) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const T* src = inputs[i].data().data() + n * channels[i] * hw;
            std::copy(src, src + channels[i] * hw, out.data().data() + (n * total + offset) * hw);
            offset += channels[i];
        }
    }
    out.record(inputs, [inputs, channels, total, hw, batch = first.n](const TensorImpl<T>& self) mutable {
        for (std::size_t n = 0; n < batch; ++n) {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (T* g = grad_of(inputs[i])) {
                    const T* src = self.grad.data() + (n * total + offset) * hw;
                    T* dst = g + n * channels[i] * hw;
                    for (std::size_t k = 0; k < channels[i] * hw; ++k) dst[k] += src[k];
                }
                offset += channels[i];
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
    if (shape_numel(shape) != input.numel()) {
        throw DimensionError("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
    }
    Tensor<T> out(std::move(shape), input.values());
    out.record({input}, [input](const TensorImpl<T>& self) mutable {
        T* g = grad_of(input);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNorm<T>& state, bool training, bool update_running) {
    const auto s = spatial_of(input.shape(), "batchnorm2d");
    for (const auto* t : {&state.scale, &state.shift, &state.running_mean, &state.running_var}) {
        if (!t->defined() || t->numel() != s.c) {
            throw DimensionError("batchnorm2d: state has " + std::to_string(t->defined() ? t->numel() : 0) +
                                 " channels, input has " + std::to_string(s.c));
        }
    }
    const std::size_t hw = s.h * s.w, count = s.n * hw;
    std::vector<T> mean(s.c), invstd(s.c);
    const T eps = static_cast<T>(kBatchNormEps);
    const T* x = input.data().data();
    for (std::size_t c = 0; c < s.c; ++c) {
        if (training) {
            T m = 0;
            for (std::size_t n = 0; n < s.n; ++n)
                for (std::size_t p = 0; p < hw; ++p) m += x[(n * s.c + c) * hw + p];
            m /= static_cast<T>(count);
            T v = 0;
            for (std::size_t n = 0; n < s.n; ++n)
                for (std::size_t p = 0; p < hw; ++p) {
                    const T dlt = x[(n * s.c + c) * hw + p] - m;
                    v += dlt * dlt;
                }
            const T biased = v / static_cast<T>(count);
            mean[c] = m;
            invstd[c] = T(1) / std::sqrt(biased + eps);
            if (update_running) {
                const T mom = static_cast<T>(kBatchNormMomentum);
                const T unbiased = count > 1 ? v / static_cast<T>(count - 1) : biased;
                state.running_mean[c] = (T(1) - mom) * state.running_mean[c] + mom * m;
                state.running_var[c] = (T(1) - mom) * state.running_var[c] + mom * unbiased;
            }
        } else {
            mean[c] = state.running_mean[c];
            invstd[c] = T(1) / std::sqrt(state.running_var[c] + eps);
        }
    }
    Tensor<T> out(input.shape());
    T* o = out.data().data();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T a = state.scale[c] * invstd[c];
            const T b = state.shift[c] - a * mean[c];
            const std::size_t base = (n * s.c + c) * hw;
            for (std::size_t p = 0; p < hw; ++p) o[base + p] = a * x[base + p] + b;
        }
    }
    check_finite(out, "batchnorm2d");

    Tensor<T> gamma = state.scale, beta = state.shift;
    out.record({input, gamma, beta}, [input, gamma, beta, s, hw, count, mean, invstd,
                                      training](const TensorImpl<T>& self) mutable {
        const T* x = input.data().data();
        const T* g = self.grad.data();
        T* gx = grad_of(input);
        T* gg = grad_of(gamma);
        T* gb = grad_of(beta);
        for (std::size_t c = 0; c < s.c; ++c) {
            T sum_g = 0, sum_gx = 0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const std::size_t base = (n * s.c + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) {
                    const T xhat = (x[base + p] - mean[c]) * invstd[c];
                    sum_g += g[base + p];
                    sum_gx += g[base + p] * xhat;
                }
            }
            if (gg) gg[c] += sum_gx;
            if (gb) gb[c] += sum_g;
            if (!gx) continue;
            const T k = gamma[c] * invstd[c];
            const T inv_count = T(1) / static_cast<T>(count);
            for (std::size_t n = 0; n < s.n; ++n) {
                const std::size_t base = (n * s.c + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) {
                    if (training) {
                        const T xhat = (x[base + p] - mean[c]) * invstd[c];
                        gx[base + p] += k * (g[base + p] - inv_count * sum_g - xhat * inv_count * sum_gx);
                    } else {
                        gx[base + p] += k * g[base + p];
                    }
                }
            }
        }
    });
    return out;
}

#define OSTEO_INSTANTIATE_OPS(T)                                                                 \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);                  \
    template Tensor<T> bilinear_upsample<T>(const Tensor<T>&, int);                              \
    template Tensor<T> pool_spatial<T>(const Tensor<T>&, PoolMode, bool, int, int);              \
    template Tensor<T> pool_channelwise<T>(const Tensor<T>&, PoolMode);                          \
    template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                             \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                 \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                             \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                        \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                      \
    template Tensor<T> batchnorm2d<T>(const Tensor<T>&, BatchNorm<T>&, bool, bool);

OSTEO_INSTANTIATE_OPS(float)
OSTEO_INSTANTIATE_OPS(double)

#undef OSTEO_INSTANTIATE_OPS

}  // namespace osteo
