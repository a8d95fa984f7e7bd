#include "alprio/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace alprio::kernels {

namespace {

// Kernels smaller than this many multiply-adds run serially; region start-up
// would dominate otherwise.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

int g_threads = [] {
    if (const char* env = std::getenv("ALPRIO_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}();

bool go_parallel(std::size_t work) {
#ifdef _OPENMP
    return g_threads > 1 && work >= kParallelThreshold && !omp_in_parallel();
#else
    (void)work;
    return false;
#endif
}

// Output columns [lo, hi) whose input column ox*stride + k - pad lies inside [0, width).
struct ColumnRange {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

ColumnRange valid_columns(std::size_t out_width, std::size_t width, std::size_t k, std::size_t stride,
                          std::size_t pad) {
    const long shift = static_cast<long>(k) - static_cast<long>(pad);
    const long s = static_cast<long>(stride);
    long lo = 0;
    if (shift < 0) lo = (-shift + s - 1) / s;
    const long last = static_cast<long>(width) - 1 - shift;
    long hi = last < 0 ? 0 : last / s + 1;
    hi = std::min<long>(hi, static_cast<long>(out_width));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

int worker_threads() { return g_threads; }

void set_worker_threads(int n) { g_threads = n > 0 ? n : 1; }

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const std::size_t oh = g.out_height(), ow = g.out_width();
    const std::size_t H = g.height, W = g.width, K = g.kernel, S = g.stride, P = g.pad;
    const std::size_t IC = g.in_channels;
    const long OC = static_cast<long>(g.out_channels);
    const bool par = go_parallel(g.weight_size() * oh * ow);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
    for (long oc = 0; oc < OC; ++oc) {
        T* o = out.data() + static_cast<std::size_t>(oc) * oh * ow;
        std::fill(o, o + oh * ow, bias.empty() ? T{} : bias[static_cast<std::size_t>(oc)]);
        for (std::size_t ic = 0; ic < IC; ++ic) {
            const T* ip = in.data() + ic * H * W;
            const T* wp = weight.data() + (static_cast<std::size_t>(oc) * IC + ic) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const T wv = wp[ky * K + kx];
                    const ColumnRange cols = valid_columns(ow, W, kx, S, P);
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = static_cast<long>(oy * S + ky) - static_cast<long>(P);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        const T* irow = ip + static_cast<std::size_t>(iy) * W;
                        T* orow = o + oy * ow;
                        if (S == 1) {
                            const T* src = irow + kx - static_cast<long>(P);
                            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) orow[ox] += wv * src[ox];
                        } else {
                            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                                orow[ox] += wv * irow[ox * S + kx - P];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> dout, std::span<T> din, std::span<T> dweight, std::span<T> dbias) {
    const std::size_t oh = g.out_height(), ow = g.out_width();
    const std::size_t H = g.height, W = g.width, K = g.kernel, S = g.stride, P = g.pad;
    const std::size_t IC = g.in_channels, OCu = g.out_channels;
    const bool par = go_parallel(g.weight_size() * oh * ow);

    const long OC = static_cast<long>(OCu);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
    for (long oc = 0; oc < OC; ++oc) {
        const T* d = dout.data() + static_cast<std::size_t>(oc) * oh * ow;
        if (!dbias.empty()) {
            T acc{};
            for (std::size_t i = 0; i < oh * ow; ++i) acc += d[i];
            dbias[static_cast<std::size_t>(oc)] += acc;
        }
        for (std::size_t ic = 0; ic < IC; ++ic) {
            const T* ip = in.data() + ic * H * W;
            T* dw = dweight.data() + (static_cast<std::size_t>(oc) * IC + ic) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const ColumnRange cols = valid_columns(ow, W, kx, S, P);
                    T acc{};
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = static_cast<long>(oy * S + ky) - static_cast<long>(P);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        const T* irow = ip + static_cast<std::size_t>(iy) * W;
                        const T* drow = d + oy * ow;
                        for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                            acc += drow[ox] * irow[ox * S + kx - P];
                    }
                    dw[ky * K + kx] += acc;
                }
            }
        }
    }

    if (din.empty()) return;
    const long ICl = static_cast<long>(IC);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
    for (long ic = 0; ic < ICl; ++ic) {
        T* di = din.data() + static_cast<std::size_t>(ic) * H * W;
        std::fill(di, di + H * W, T{});
        for (std::size_t oc = 0; oc < OCu; ++oc) {
            const T* d = dout.data() + oc * oh * ow;
            const T* wp = weight.data() + (oc * IC + static_cast<std::size_t>(ic)) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const T wv = wp[ky * K + kx];
                    const ColumnRange cols = valid_columns(ow, W, kx, S, P);
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = static_cast<long>(oy * S + ky) - static_cast<long>(P);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        T* irow = di + static_cast<std::size_t>(iy) * W;
                        const T* drow = d + oy * ow;
                        if (S == 1) {
                            T* dst = irow + kx - static_cast<long>(P);
                            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) dst[ox] += wv * drow[ox];
                        } else {
                            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                                irow[ox * S + kx - P] += wv * drow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void upconv2x2_forward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                       std::size_t width, std::span<const T> in, std::span<const T> weight,
                       std::span<const T> bias, std::span<T> out) {
    const std::size_t ow = 2 * width, plane = 4 * height * width, inplane = height * width;
    const bool par = go_parallel(in_channels * out_channels * plane);
    const long OC = static_cast<long>(out_channels);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
    for (long oc = 0; oc < OC; ++oc) {
        T* o = out.data() + static_cast<std::size_t>(oc) * plane;
        std::fill(o, o + plane, bias.empty() ? T{} : bias[static_cast<std::size_t>(oc)]);
        for (std::size_t ic = 0; ic < in_channels; ++ic) {
            const T* ip = in.data() + ic * inplane;
            const T* wp = weight.data() + (ic * out_channels + static_cast<std::size_t>(oc)) * 4;
            for (std::size_t y = 0; y < height; ++y) {
                T* row0 = o + (2 * y) * ow;
                T* row1 = row0 + ow;
                const T* irow = ip + y * width;
                for (std::size_t x = 0; x < width; ++x) {
                    const T v = irow[x];
                    row0[2 * x] += wp[0] * v;
                    row0[2 * x + 1] += wp[1] * v;
                    row1[2 * x] += wp[2] * v;
                    row1[2 * x + 1] += wp[3] * v;
                }
            }
        }
    }
}

template <class T>
void upconv2x2_backward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                        std::size_t width, std::span<const T> in, std::span<const T> weight,
                        std::span<const T> dout, std::span<T> din, std::span<T> dweight,
                        std::span<T> dbias) {
    const std::size_t ow = 2 * width, plane = 4 * height * width, inplane = height * width;
    const bool par = go_parallel(in_channels * out_channels * plane);

    if (!dbias.empty()) {
        for (std::size_t oc = 0; oc < out_channels; ++oc) {
            T acc{};
            const T* d = dout.data() + oc * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += d[i];
            dbias[oc] += acc;
        }
    }

    const long IC = static_cast<long>(in_channels);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
    for (long ic = 0; ic < IC; ++ic) {
        const std::size_t icu = static_cast<std::size_t>(ic);
        const T* ip = in.data() + icu * inplane;
        T* di = din.empty() ? nullptr : din.data() + icu * inplane;
        if (di) std::fill(di, di + inplane, T{});
        for (std::size_t oc = 0; oc < out_channels; ++oc) {
            const T* d = dout.data() + oc * plane;
            const T* wp = weight.data() + (icu * out_channels + oc) * 4;
            T* dw = dweight.data() + (icu * out_channels + oc) * 4;
            T a0{}, a1{}, a2{}, a3{};
            for (std::size_t y = 0; y < height; ++y) {
                const T* row0 = d + (2 * y) * ow;
                const T* row1 = row0 + ow;
                const T* irow = ip + y * width;
                for (std::size_t x = 0; x < width; ++x) {
                    const T v = irow[x];
                    a0 += row0[2 * x] * v;
                    a1 += row0[2 * x + 1] * v;
                    a2 += row1[2 * x] * v;
                    a3 += row1[2 * x + 1] * v;
                    if (di)
                        di[y * width + x] += wp[0] * row0[2 * x] + wp[1] * row0[2 * x + 1] +
                                             wp[2] * row1[2 * x] + wp[3] * row1[2 * x + 1];
                }
            }
            dw[0] += a0;
            dw[1] += a1;
            dw[2] += a2;
            dw[3] += a3;
        }
    }
}

template <class T>
void maxpool2x2_forward(std::size_t channels, std::size_t height, std::size_t width, std::span<const T> in,
                        std::span<T> out, std::span<std::size_t> argmax) {
    const std::size_t oh = height / 2, ow = width / 2;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t best = c * height * width + (2 * y) * width + 2 * x;
                const std::size_t cand[3] = {best + 1, best + width, best + width + 1};
                for (std::size_t idx : cand)
                    if (in[idx] > in[best]) best = idx;
                const std::size_t o = (c * oh + y) * ow + x;
                out[o] = in[best];
                argmax[o] = best;
            }
        }
    }
}

template <class T>
void maxpool2x2_backward(std::span<const std::size_t> argmax, std::span<const T> dout, std::span<T> din) {
    std::fill(din.begin(), din.end(), T{});
    for (std::size_t o = 0; o < argmax.size(); ++o) din[argmax[o]] += dout[o];
}

template <class T>
void dense_forward(std::size_t in_dim, std::size_t out_dim, std::span<const T> x, std::span<const T> weight,
                   std::span<const T> bias, std::span<T> y) {
    for (std::size_t o = 0; o < out_dim; ++o) {
        T acc = bias.empty() ? T{} : bias[o];
        const T* w = weight.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
}

template <class T>
void dense_backward(std::size_t in_dim, std::size_t out_dim, std::span<const T> x, std::span<const T> weight,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dweight, std::span<T> dbias) {
    if (!dx.empty()) std::fill(dx.begin(), dx.begin() + static_cast<long>(in_dim), T{});
    for (std::size_t o = 0; o < out_dim; ++o) {
        const T g = dy[o];
        if (!dbias.empty()) dbias[o] += g;
        const T* w = weight.data() + o * in_dim;
        T* dw = dweight.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) dw[i] += g * x[i];
        if (!dx.empty())
            for (std::size_t i = 0; i < in_dim; ++i) dx[i] += g * w[i];
    }
}

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
    const long K = static_cast<long>(g.kernel), S = static_cast<long>(g.stride), P = static_cast<long>(g.pad);
    const long IC = static_cast<long>(g.in_channels);
    const long oh = static_cast<long>(g.out_height()), ow = static_cast<long>(g.out_width());
    for (long oc = 0; oc < static_cast<long>(g.out_channels); ++oc)
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox) {
                T acc = bias.empty() ? T{} : bias[oc];
                for (long ic = 0; ic < IC; ++ic)
                    for (long ky = 0; ky < K; ++ky)
                        for (long kx = 0; kx < K; ++kx) {
                            const long iy = oy * S + ky - P, ix = ox * S + kx - P;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += weight[((oc * IC + ic) * K + ky) * K + kx] * in[(ic * H + iy) * W + ix];
                        }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
}

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> dout, std::span<T> din, std::span<T> dweight, std::span<T> dbias) {
    const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
    const long K = static_cast<long>(g.kernel), S = static_cast<long>(g.stride), P = static_cast<long>(g.pad);
    const long IC = static_cast<long>(g.in_channels), OC = static_cast<long>(g.out_channels);
    const long oh = static_cast<long>(g.out_height()), ow = static_cast<long>(g.out_width());
    if (!din.empty()) std::fill(din.begin(), din.end(), T{});
    for (long oc = 0; oc < OC; ++oc)
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox) {
                const T d = dout[(oc * oh + oy) * ow + ox];
                if (!dbias.empty()) dbias[oc] += d;
                for (long ic = 0; ic < IC; ++ic)
                    for (long ky = 0; ky < K; ++ky)
                        for (long kx = 0; kx < K; ++kx) {
                            const long iy = oy * S + ky - P, ix = ox * S + kx - P;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            const long wi = ((oc * IC + ic) * K + ky) * K + kx;
                            const long ii = (ic * H + iy) * W + ix;
                            dweight[wi] += d * in[ii];
                            if (!din.empty()) din[ii] += d * weight[wi];
                        }
            }
}

template <class T>
void upconv2x2_forward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                       std::size_t width, std::span<const T> in, std::span<const T> weight,
                       std::span<const T> bias, std::span<T> out) {
    for (std::size_t oc = 0; oc < out_channels; ++oc)
        for (std::size_t oy = 0; oy < 2 * height; ++oy)
            for (std::size_t ox = 0; ox < 2 * width; ++ox) {
                T acc = bias.empty() ? T{} : bias[oc];
                const std::size_t y = oy / 2, x = ox / 2, tap = (oy % 2) * 2 + ox % 2;
                for (std::size_t ic = 0; ic < in_channels; ++ic)
                    acc += weight[(ic * out_channels + oc) * 4 + tap] * in[(ic * height + y) * width + x];
                out[(oc * 2 * height + oy) * 2 * width + ox] = acc;
            }
}

template <class T>
void upconv2x2_backward(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                        std::size_t width, std::span<const T> in, std::span<const T> weight,
                        std::span<const T> dout, std::span<T> din, std::span<T> dweight,
                        std::span<T> dbias) {
    if (!din.empty()) std::fill(din.begin(), din.end(), T{});
    for (std::size_t oc = 0; oc < out_channels; ++oc)
        for (std::size_t oy = 0; oy < 2 * height; ++oy)
            for (std::size_t ox = 0; ox < 2 * width; ++ox) {
                const T d = dout[(oc * 2 * height + oy) * 2 * width + ox];
                if (!dbias.empty()) dbias[oc] += d;
                const std::size_t y = oy / 2, x = ox / 2, tap = (oy % 2) * 2 + ox % 2;
                for (std::size_t ic = 0; ic < in_channels; ++ic) {
                    const std::size_t wi = (ic * out_channels + oc) * 4 + tap;
                    const std::size_t ii = (ic * height + y) * width + x;
                    dweight[wi] += d * in[ii];
                    if (!din.empty()) din[ii] += d * weight[wi];
                }
            }
}

}  // namespace reference

#define ALPRIO_INSTANTIATE_KERNELS(T)                                                                      \
    template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,            \
                                    std::span<const T>, std::span<T>);                                     \
    template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,           \
                                     std::span<const T>, std::span<T>, std::span<T>, std::span<T>);         \
    template void upconv2x2_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,                  \
                                       std::span<const T>, std::span<const T>, std::span<const T>,          \
                                       std::span<T>);                                                       \
    template void upconv2x2_backward<T>(std::size_t, std::size_t, std::size_t, std::size_t,                 \
                                        std::span<const T>, std::span<const T>, std::span<const T>,         \
                                        std::span<T>, std::span<T>, std::span<T>);                          \
    template void maxpool2x2_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,          \
                                        std::span<T>, std::span<std::size_t>);                              \
    template void maxpool2x2_backward<T>(std::span<const std::size_t>, std::span<const T>, std::span<T>);   \
    template void dense_forward<T>(std::size_t, std::size_t, std::span<const T>, std::span<const T>,        \
                                   std::span<const T>, std::span<T>);                                       \
    template void dense_backward<T>(std::size_t, std::size_t, std::span<const T>, std::span<const T>,       \
                                    std::span<const T>, std::span<T>, std::span<T>, std::span<T>);          \
    template void reference::conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                               std::span<const T>, std::span<T>);                          \
    template void reference::conv2d_backward<T>(const ConvGeometry&, std::span<const T>,                    \
                                                std::span<const T>, std::span<const T>, std::span<T>,       \
                                                std::span<T>, std::span<T>);                                \
    template void reference::upconv2x2_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,      \
                                                  std::span<const T>, std::span<const T>,                   \
                                                  std::span<const T>, std::span<T>);                        \
    template void reference::upconv2x2_backward<T>(std::size_t, std::size_t, std::size_t, std::size_t,     \
                                                   std::span<const T>, std::span<const T>,                  \
                                                   std::span<const T>, std::span<T>, std::span<T>,          \
                                                   std::span<T>);

ALPRIO_INSTANTIATE_KERNELS(float)
ALPRIO_INSTANTIATE_KERNELS(double)

#undef ALPRIO_INSTANTIATE_KERNELS

}  // namespace alprio::kernels
