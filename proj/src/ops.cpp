#include "esn/ops.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>

namespace esn {

namespace {

std::atomic<bool> g_finite_checks{true};

inline index_t floor_div(index_t a, index_t b) {
    return (a >= 0) ? a / b : -((-a + b - 1) / b);
}
inline index_t ceil_div(index_t a, index_t b) {
    return (a >= 0) ? (a + b - 1) / b : -((-a) / b);
}

template <typename T>
void check_out(const Tensor<T>& t, const char* what) {
    detail::check_finite_span(t.data(), what);
}

template <typename T>
void check_grad(const Tensor<T>& t, const char* what) {
    detail::check_finite_span(t.node()->grad, what);
}

// ---- conv geometry helpers ----

struct ConvDims {
    index_t B, Cin, H, W, Cout, K, Ho, Wo;
    int s, p;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding,
                   const char* op) {
    if (!x.defined() || !w.defined()) throw ShapeError(std::string(op) + ": undefined tensor argument");
    const Shape xs = x.shape(), ws = w.shape();
    if (ws.h != ws.w) {
        throw ShapeError(std::string(op) + ": kernel must be square, got " + ws.str());
    }
    if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw ShapeError(std::string(op) + ": padding must be >= 0");
    ConvDims d;
    d.B = xs.b;
    d.H = xs.h;
    d.W = xs.w;
    d.K = ws.h;
    d.s = stride;
    d.p = padding;
    return d;
}

template <typename T>
void check_bias(const Tensor<T>& bias, index_t cout, const char* op) {
    if (!bias.defined()) return;
    const Shape bs = bias.shape();
    if (bs.b != 1 || bs.c != cout || bs.h != 1 || bs.w != 1) {
        throw ShapeError(std::string(op) + ": bias shape " + bs.str() + " must be (1," +
                         std::to_string(cout) + ",1,1)");
    }
}

// Valid output index range [lo, hi] such that o*s + k - p lands in [0, limit-1].
inline void tap_range(index_t k, index_t s, index_t p, index_t limit, index_t out_limit,
                      index_t& lo, index_t& hi) {
    lo = std::max<index_t>(0, ceil_div(p - k, s));
    hi = std::min<index_t>(out_limit - 1, floor_div(limit - 1 + p - k, s));
}

// y[i] += a * x[i]; restrict lets the row loops vectorize
template <typename T>
inline void axpy(T* __restrict__ y, const T* __restrict__ x, T a, index_t n) {
    for (index_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline void axpy_strided(T* __restrict__ y, const T* __restrict__ x, T a, index_t n,
                         index_t x_stride) {
    for (index_t i = 0; i < n; ++i) y[i] += a * x[i * x_stride];
}

template <typename T>
inline void axpy_scatter(T* __restrict__ y, const T* __restrict__ x, T a, index_t n,
                         index_t y_stride) {
    for (index_t i = 0; i < n; ++i) y[i * y_stride] += a * x[i];
}

// striped accumulators so the reduction vectorizes without reassociating a
// single serial chain
template <typename T>
inline T dot_rows(const T* __restrict__ a, const T* __restrict__ b, index_t n) {
    T acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
    index_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) acc0 += a[i] * b[i];
    return (acc0 + acc1) + (acc2 + acc3);
}

template <typename T>
inline T dot_rows_strided(const T* __restrict__ a, const T* __restrict__ b, index_t n,
                          index_t b_stride) {
    T acc = 0;
    for (index_t i = 0; i < n; ++i) acc += a[i] * b[i * b_stride];
    return acc;
}

// ---- broadcasting ----

enum class Bcast { Same, Channel, Scalar };

template <typename T>
Bcast resolve_bcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    const Shape as = a.shape(), bs = b.shape();
    if (as == bs) return Bcast::Same;
    if (bs.numel() == 1) return Bcast::Scalar;
    if (bs.b == as.b && bs.c == 1 && bs.h == as.h && bs.w == as.w) return Bcast::Channel;
    throw ShapeError(std::string(op) + ": shapes " + as.str() + " and " + bs.str() +
                     " are not broadcastable");
}

// Map an output flat index to b's flat index under the broadcast mode.
struct BcastIndex {
    Bcast mode;
    index_t C, HW;
    index_t operator()(index_t i) const {
        switch (mode) {
            case Bcast::Same: return i;
            case Bcast::Scalar: return 0;
            case Bcast::Channel: {
                const index_t hw = i % HW;
                const index_t bidx = i / (C * HW);
                return bidx * HW + hw;
            }
        }
        return 0;
    }
};

template <typename T>
BcastIndex bcast_index(const Tensor<T>& a, Bcast mode) {
    return BcastIndex{mode, a.shape().c, a.shape().h * a.shape().w};
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                    FwdFn&& fwd, BwdFn&& bwd) {
    const Bcast mode = resolve_bcast(a, b, name);
    Tensor<T> out(a.shape());
    const BcastIndex bi = bcast_index(a, mode);
    const index_t n = a.numel();
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* op = out.data().data();
    for (index_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[bi(i)]);
    check_out(out, name);

    if (detail::tracing<T>({&a, &b})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, b, out, bi, n, bwd, name]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g) return;
            const T* gp = g->data();
            const T* ap = a.data().data();
            const T* bp = b.data().data();
            if (a.requires_grad()) {
                a.ensure_grad();
                T* ga = a.node()->grad.data();
                for (index_t i = 0; i < n; ++i) {
                    T da, db;
                    bwd(ap[i], bp[bi(i)], gp[i], da, db);
                    ga[i] += da;
                }
                check_grad(a, name);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                T* gb = b.node()->grad.data();
                for (index_t i = 0; i < n; ++i) {
                    T da, db;
                    bwd(ap[i], bp[bi(i)], gp[i], da, db);
                    gb[bi(i)] += db;
                }
                check_grad(b, name);
            }
        });
    }
    return out;
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, const char* name, FwdFn&& fwd, BwdFn&& bwd) {
    Tensor<T> out(a.shape());
    const index_t n = a.numel();
    const T* ap = a.data().data();
    T* op = out.data().data();
    for (index_t i = 0; i < n; ++i) op[i] = fwd(ap[i]);
    check_out(out, name);

    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out, n, bwd, name]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T* gp = g->data();
            const T* ap = a.data().data();
            const T* op = out.data().data();
            T* ga = a.node()->grad.data();
            for (index_t i = 0; i < n; ++i) ga[i] += bwd(ap[i], op[i]) * gp[i];
            check_grad(a, name);
        });
    }
    return out;
}

}  // namespace

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
    ConvDims d = conv_dims(x, weight, stride, padding, "conv2d");
    const Shape ws = weight.shape();
    d.Cout = ws.b;
    d.Cin = ws.c;
    if (x.shape().c != d.Cin) {
        throw ShapeError("conv2d: input channel dim " + std::to_string(x.shape().c) +
                         " does not match weight C_in " + std::to_string(d.Cin));
    }
    d.Ho = (d.H + 2 * d.p - d.K) / d.s + 1;
    d.Wo = (d.W + 2 * d.p - d.K) / d.s + 1;
    if (d.H + 2 * d.p < d.K || d.W + 2 * d.p < d.K) {
        throw ShapeError("conv2d: kernel " + std::to_string(d.K) + " exceeds padded input " +
                         x.shape().str());
    }
    check_bias(bias, d.Cout, "conv2d");

    Tensor<T> out(Shape{d.B, d.Cout, d.Ho, d.Wo});
    const T* xp = x.data().data();
    const T* wp = weight.data().data();
    T* op = out.data().data();

    // horizontal tap ranges are row-invariant
    std::array<index_t, 16> ox_lo{}, ox_n{};
    if (d.K > 15) throw ShapeError("conv2d: kernel sizes above 15 are unsupported");
    for (index_t kx = 0; kx < d.K; ++kx) {
        index_t lo, hi;
        tap_range(kx, d.s, d.p, d.W, d.Wo, lo, hi);
        ox_lo[static_cast<std::size_t>(kx)] = lo;
        ox_n[static_cast<std::size_t>(kx)] = hi - lo + 1;
    }

    // row-major sweep: the output row stays hot while the handful of input
    // rows it reads sit in L1 across the whole channel loop
    for (index_t b = 0; b < d.B; ++b) {
        for (index_t oy = 0; oy < d.Ho; ++oy) {
            for (index_t co = 0; co < d.Cout; ++co) {
                T* dst = op + ((b * d.Cout + co) * d.Ho + oy) * d.Wo;
                if (bias.defined()) {
                    std::fill(dst, dst + d.Wo, bias.data()[static_cast<std::size_t>(co)]);
                }
                for (index_t ci = 0; ci < d.Cin; ++ci) {
                    const T* xplane = xp + ((b * d.Cin + ci) * d.H) * d.W;
                    const T* wrow0 = wp + ((co * d.Cin + ci) * d.K) * d.K;
                    for (index_t ky = 0; ky < d.K; ++ky) {
                        const index_t iy = oy * d.s + ky - d.p;
                        if (iy < 0 || iy >= d.H) continue;
                        const T* xrow = xplane + iy * d.W;
                        const T* wrow = wrow0 + ky * d.K;
                        for (index_t kx = 0; kx < d.K; ++kx) {
                            const index_t lo = ox_lo[static_cast<std::size_t>(kx)];
                            const index_t n = ox_n[static_cast<std::size_t>(kx)];
                            const T* src = xrow + lo * d.s + kx - d.p;
                            if (d.s == 1) {
                                axpy(dst + lo, src, wrow[kx], n);
                            } else {
                                axpy_strided(dst + lo, src, wrow[kx], n, d.s);
                            }
                        }
                    }
                }
            }
        }
    }
    check_out(out, "conv2d");

    if (detail::tracing<T>({&x, &weight, &bias})) {
        out.set_requires_grad(true);
        detail::record_step<T>([x, weight, bias, out, d]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g) return;
            const T* gp = g->data();
            const T* xp = x.data().data();
            const T* wp = weight.data().data();

            if (bias.defined() && bias.requires_grad()) {
                bias.ensure_grad();
                T* gb = bias.node()->grad.data();
                for (index_t b = 0; b < d.B; ++b)
                    for (index_t co = 0; co < d.Cout; ++co) {
                        const T* gbase = gp + ((b * d.Cout + co) * d.Ho) * d.Wo;
                        T acc = 0;
                        for (index_t i = 0; i < d.Ho * d.Wo; ++i) acc += gbase[i];
                        gb[co] += acc;
                    }
                check_grad(bias, "conv2d.bias");
            }
            const bool need_x = x.requires_grad();
            const bool need_w = weight.requires_grad();
            if (!need_x && !need_w) return;
            if (need_x) x.ensure_grad();
            if (need_w) weight.ensure_grad();
            T* gx = need_x ? x.node()->grad.data() : nullptr;
            T* gw = need_w ? weight.node()->grad.data() : nullptr;

            std::array<index_t, 16> ox_lo{}, ox_n{};
            for (index_t kx = 0; kx < d.K; ++kx) {
                index_t lo, hi;
                tap_range(kx, d.s, d.p, d.W, d.Wo, lo, hi);
                ox_lo[static_cast<std::size_t>(kx)] = lo;
                ox_n[static_cast<std::size_t>(kx)] = hi - lo + 1;
            }

            for (index_t b = 0; b < d.B; ++b) {
                for (index_t oy = 0; oy < d.Ho; ++oy) {
                    for (index_t co = 0; co < d.Cout; ++co) {
                        const T* grow = gp + ((b * d.Cout + co) * d.Ho + oy) * d.Wo;
                        for (index_t ci = 0; ci < d.Cin; ++ci) {
                            const T* xplane = xp + ((b * d.Cin + ci) * d.H) * d.W;
                            T* gxplane = need_x ? gx + ((b * d.Cin + ci) * d.H) * d.W : nullptr;
                            const index_t w0 = ((co * d.Cin + ci) * d.K) * d.K;
                            for (index_t ky = 0; ky < d.K; ++ky) {
                                const index_t iy = oy * d.s + ky - d.p;
                                if (iy < 0 || iy >= d.H) continue;
                                for (index_t kx = 0; kx < d.K; ++kx) {
                                    const index_t lo = ox_lo[static_cast<std::size_t>(kx)];
                                    const index_t n = ox_n[static_cast<std::size_t>(kx)];
                                    const index_t x0 = lo * d.s + kx - d.p;
                                    const T* xrow = xplane + iy * d.W + x0;
                                    if (need_w) {
                                        gw[w0 + ky * d.K + kx] +=
                                            d.s == 1 ? dot_rows(grow + lo, xrow, n)
                                                     : dot_rows_strided(grow + lo, xrow, n, d.s);
                                    }
                                    if (need_x) {
                                        T* gxrow = gxplane + iy * d.W + x0;
                                        const T wv = wp[w0 + ky * d.K + kx];
                                        if (d.s == 1) {
                                            axpy(gxrow, grow + lo, wv, n);
                                        } else {
                                            axpy_scatter(gxrow, grow + lo, wv, n, d.s);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (need_x) check_grad(x, "conv2d.input");
            if (need_w) check_grad(weight, "conv2d.weight");
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int padding) {
    ConvDims d = conv_dims(x, weight, stride, padding, "conv_transpose2d");
    if (stride != 1 && stride != 2) {
        throw ShapeError("conv_transpose2d: stride must be 1 or 2, got " + std::to_string(stride));
    }
    const Shape ws = weight.shape();
    d.Cin = ws.b;
    d.Cout = ws.c;
    if (x.shape().c != d.Cin) {
        throw ShapeError("conv_transpose2d: input channel dim " + std::to_string(x.shape().c) +
                         " does not match weight C_in " + std::to_string(d.Cin));
    }
    d.Ho = (d.H - 1) * d.s - 2 * d.p + d.K;
    d.Wo = (d.W - 1) * d.s - 2 * d.p + d.K;
    if (d.Ho < 1 || d.Wo < 1) {
        throw ShapeError("conv_transpose2d: output would be empty for input " + x.shape().str());
    }
    check_bias(bias, d.Cout, "conv_transpose2d");

    Tensor<T> out(Shape{d.B, d.Cout, d.Ho, d.Wo});
    const T* xp = x.data().data();
    const T* wp = weight.data().data();
    T* op = out.data().data();

    std::array<index_t, 16> ix_lo{}, ix_n{};
    if (d.K > 15) throw ShapeError("conv_transpose2d: kernel sizes above 15 are unsupported");
    for (index_t kx = 0; kx < d.K; ++kx) {
        index_t lo, hi;
        tap_range(kx, d.s, d.p, d.Wo, d.W, lo, hi);
        ix_lo[static_cast<std::size_t>(kx)] = lo;
        ix_n[static_cast<std::size_t>(kx)] = hi - lo + 1;
    }

    if (bias.defined()) {
        for (index_t b = 0; b < d.B; ++b)
            for (index_t co = 0; co < d.Cout; ++co) {
                T* obase = op + ((b * d.Cout + co) * d.Ho) * d.Wo;
                std::fill(obase, obase + d.Ho * d.Wo, bias.data()[static_cast<std::size_t>(co)]);
            }
    }

    // input-row sweep: each source row scatters into at most K output rows
    for (index_t b = 0; b < d.B; ++b) {
        for (index_t iy = 0; iy < d.H; ++iy) {
            for (index_t ci = 0; ci < d.Cin; ++ci) {
                const T* src = xp + ((b * d.Cin + ci) * d.H + iy) * d.W;
                for (index_t co = 0; co < d.Cout; ++co) {
                    T* oplane = op + ((b * d.Cout + co) * d.Ho) * d.Wo;
                    const T* wrow0 = wp + ((ci * d.Cout + co) * d.K) * d.K;
                    for (index_t ky = 0; ky < d.K; ++ky) {
                        const index_t oy = iy * d.s + ky - d.p;
                        if (oy < 0 || oy >= d.Ho) continue;
                        T* orow = oplane + oy * d.Wo;
                        const T* wrow = wrow0 + ky * d.K;
                        for (index_t kx = 0; kx < d.K; ++kx) {
                            const index_t lo = ix_lo[static_cast<std::size_t>(kx)];
                            const index_t n = ix_n[static_cast<std::size_t>(kx)];
                            T* dst = orow + lo * d.s + kx - d.p;
                            if (d.s == 1) {
                                axpy(dst, src + lo, wrow[kx], n);
                            } else {
                                axpy_scatter(dst, src + lo, wrow[kx], n, 2);
                            }
                        }
                    }
                }
            }
        }
    }
    check_out(out, "conv_transpose2d");

    if (detail::tracing<T>({&x, &weight, &bias})) {
        out.set_requires_grad(true);
        detail::record_step<T>([x, weight, bias, out, d]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g) return;
            const T* gp = g->data();
            const T* xp = x.data().data();
            const T* wp = weight.data().data();

            if (bias.defined() && bias.requires_grad()) {
                bias.ensure_grad();
                T* gb = bias.node()->grad.data();
                for (index_t b = 0; b < d.B; ++b)
                    for (index_t co = 0; co < d.Cout; ++co) {
                        const T* gbase = gp + ((b * d.Cout + co) * d.Ho) * d.Wo;
                        T acc = 0;
                        for (index_t i = 0; i < d.Ho * d.Wo; ++i) acc += gbase[i];
                        gb[co] += acc;
                    }
                check_grad(bias, "conv_transpose2d.bias");
            }
            const bool need_x = x.requires_grad();
            const bool need_w = weight.requires_grad();
            if (!need_x && !need_w) return;
            if (need_x) x.ensure_grad();
            if (need_w) weight.ensure_grad();
            T* gx = need_x ? x.node()->grad.data() : nullptr;
            T* gw = need_w ? weight.node()->grad.data() : nullptr;

            std::array<index_t, 16> ix_lo{}, ix_n{};
            for (index_t kx = 0; kx < d.K; ++kx) {
                index_t lo, hi;
                tap_range(kx, d.s, d.p, d.Wo, d.W, lo, hi);
                ix_lo[static_cast<std::size_t>(kx)] = lo;
                ix_n[static_cast<std::size_t>(kx)] = hi - lo + 1;
            }

            for (index_t b = 0; b < d.B; ++b) {
                for (index_t iy = 0; iy < d.H; ++iy) {
                    for (index_t ci = 0; ci < d.Cin; ++ci) {
                        const T* xrow = xp + ((b * d.Cin + ci) * d.H + iy) * d.W;
                        T* gxrow = need_x ? gx + ((b * d.Cin + ci) * d.H + iy) * d.W : nullptr;
                        for (index_t co = 0; co < d.Cout; ++co) {
                            const T* gplane = gp + ((b * d.Cout + co) * d.Ho) * d.Wo;
                            const index_t w0 = ((ci * d.Cout + co) * d.K) * d.K;
                            for (index_t ky = 0; ky < d.K; ++ky) {
                                const index_t oy = iy * d.s + ky - d.p;
                                if (oy < 0 || oy >= d.Ho) continue;
                                for (index_t kx = 0; kx < d.K; ++kx) {
                                    const index_t lo = ix_lo[static_cast<std::size_t>(kx)];
                                    const index_t n = ix_n[static_cast<std::size_t>(kx)];
                                    const T* grow = gplane + oy * d.Wo + lo * d.s + kx - d.p;
                                    if (d.s == 1) {
                                        if (need_w)
                                            gw[w0 + ky * d.K + kx] += dot_rows(grow, xrow + lo, n);
                                        if (need_x)
                                            axpy(gxrow + lo, grow, wp[w0 + ky * d.K + kx], n);
                                    } else {
                                        if (need_w)
                                            gw[w0 + ky * d.K + kx] +=
                                                dot_rows_strided(xrow + lo, grow, n, 2);
                                        if (need_x)
                                            axpy_strided(gxrow + lo, grow,
                                                         wp[w0 + ky * d.K + kx], n, 2);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (need_x) check_grad(x, "conv_transpose2d.input");
            if (need_w) check_grad(weight, "conv_transpose2d.weight");
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// bilinear_resize
// ---------------------------------------------------------------------------

namespace {

struct LinTap {
    index_t i0, i1;
    double t;  // weight of i1
};

inline std::vector<LinTap> linear_taps(index_t in, index_t out) {
    std::vector<LinTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (index_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const index_t i0 = static_cast<index_t>(std::floor(src));
        taps[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, index_t out_h, index_t out_w, bool disparity) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output size must be positive");
    const Shape s = x.shape();
    const T vscale = (disparity && out_w != s.w)
                         ? static_cast<T>(static_cast<double>(out_w) / static_cast<double>(s.w))
                         : T(1);

    Tensor<T> out(Shape{s.b, s.c, out_h, out_w});
    const auto ty = linear_taps(s.h, out_h);
    const auto tx = linear_taps(s.w, out_w);
    const T* xp = x.data().data();
    T* op = out.data().data();

    for (index_t bc = 0; bc < s.b * s.c; ++bc) {
        const T* plane = xp + bc * s.h * s.w;
        T* oplane = op + bc * out_h * out_w;
        for (index_t oy = 0; oy < out_h; ++oy) {
            const LinTap& yt = ty[static_cast<std::size_t>(oy)];
            const T* r0 = plane + yt.i0 * s.w;
            const T* r1 = plane + yt.i1 * s.w;
            const T wy1 = static_cast<T>(yt.t), wy0 = T(1) - wy1;
            T* orow = oplane + oy * out_w;
            for (index_t ox = 0; ox < out_w; ++ox) {
                const LinTap& xt = tx[static_cast<std::size_t>(ox)];
                const T wx1 = static_cast<T>(xt.t), wx0 = T(1) - wx1;
                orow[ox] = vscale * (wy0 * (wx0 * r0[xt.i0] + wx1 * r0[xt.i1]) +
                                     wy1 * (wx0 * r1[xt.i0] + wx1 * r1[xt.i1]));
            }
        }
    }
    check_out(out, "bilinear_resize");

    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        detail::record_step<T>([x, out, ty, tx, s, out_h, out_w, vscale]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !x.requires_grad()) return;
            x.ensure_grad();
            const T* gp = g->data();
            T* gx = x.node()->grad.data();
            for (index_t bc = 0; bc < s.b * s.c; ++bc) {
                T* gplane = gx + bc * s.h * s.w;
                const T* gorow = gp + bc * out_h * out_w;
                for (index_t oy = 0; oy < out_h; ++oy) {
                    const LinTap& yt = ty[static_cast<std::size_t>(oy)];
                    const T wy1 = static_cast<T>(yt.t), wy0 = T(1) - wy1;
                    for (index_t ox = 0; ox < out_w; ++ox) {
                        const LinTap& xt = tx[static_cast<std::size_t>(ox)];
                        const T wx1 = static_cast<T>(xt.t), wx0 = T(1) - wx1;
                        const T gv = gorow[oy * out_w + ox] * vscale;
                        gplane[yt.i0 * s.w + xt.i0] += wy0 * wx0 * gv;
                        gplane[yt.i0 * s.w + xt.i1] += wy0 * wx1 * gv;
                        gplane[yt.i1 * s.w + xt.i0] += wy1 * wx0 * gv;
                        gplane[yt.i1 * s.w + xt.i1] += wy1 * wx1 * gv;
                    }
                }
            }
            check_grad(x, "bilinear_resize");
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) {
            da = g;
            db = g;
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) {
            da = g;
            db = -g;
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) {
            da = g * y;
            db = g * x;
        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y, T g, T& da, T& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary_op(
        a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return unary_op(
        a, "mul_scalar", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return unary_op(
        a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return unary_op(
        a, "abs", [](T x) { return std::fabs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_op(
        a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(
        a, "sigmoid",
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope) {
    return unary_op(
        a, "leaky_relu", [negative_slope](T x) { return x > T(0) ? x : negative_slope * x; },
        [negative_slope](T x, T) { return x > T(0) ? T(1) : negative_slope; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    Tensor<T> out(Shape{1, 1, 1, 1});
    T acc = 0;
    for (const T v : a.data()) acc += v;
    out.data()[0] = acc;
    check_out(out, "sum_all");
    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T gv = (*g)[0];
            for (T& v : a.node()->grad) v += gv;
            check_grad(a, "sum_all");
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    const T inv = T(1) / static_cast<T>(a.numel());
    return mul_scalar(sum_all(a), inv);
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.b, 1, s.h, s.w});
    const index_t hw = s.h * s.w;
    const T inv = T(1) / static_cast<T>(s.c);
    const T* ap = a.data().data();
    T* op = out.data().data();
    for (index_t b = 0; b < s.b; ++b) {
        for (index_t c = 0; c < s.c; ++c) {
            const T* plane = ap + (b * s.c + c) * hw;
            T* oplane = op + b * hw;
            for (index_t i = 0; i < hw; ++i) oplane[i] += plane[i];
        }
        T* oplane = op + b * hw;
        for (index_t i = 0; i < hw; ++i) oplane[i] *= inv;
    }
    check_out(out, "channel_mean");
    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out, s, hw, inv]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T* gp = g->data();
            T* ga = a.node()->grad.data();
            for (index_t b = 0; b < s.b; ++b)
                for (index_t c = 0; c < s.c; ++c) {
                    T* gplane = ga + (b * s.c + c) * hw;
                    const T* gorow = gp + b * hw;
                    for (index_t i = 0; i < hw; ++i) gplane[i] += gorow[i] * inv;
                }
            check_grad(a, "channel_mean");
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: empty input list");
    const Shape ref = parts.front().shape();
    index_t ctotal = 0;
    for (const auto& p : parts) {
        const Shape ps = p.shape();
        if (ps.b != ref.b || ps.h != ref.h || ps.w != ref.w) {
            throw ShapeError("concat_channels: spatial/batch mismatch " + ps.str() + " vs " +
                             ref.str());
        }
        ctotal += ps.c;
    }
    Tensor<T> out(Shape{ref.b, ctotal, ref.h, ref.w});
    const index_t hw = ref.h * ref.w;
    T* op = out.data().data();
    for (index_t b = 0; b < ref.b; ++b) {
        index_t coff = 0;
        for (const auto& p : parts) {
            const index_t pc = p.shape().c;
            std::memcpy(op + ((b * ctotal + coff) * hw),
                        p.data().data() + (b * pc) * hw,
                        static_cast<std::size_t>(pc * hw) * sizeof(T));
            coff += pc;
        }
    }

    bool any_grad = false;
    for (const auto& p : parts)
        if (p.requires_grad()) any_grad = true;
    if (any_grad && Graph<T>::current() != nullptr) {
        out.set_requires_grad(true);
        detail::record_step<T>([parts, out, ref, ctotal, hw]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g) return;
            const T* gp = g->data();
            for (index_t b = 0; b < ref.b; ++b) {
                index_t coff = 0;
                for (const auto& p : parts) {
                    const index_t pc = p.shape().c;
                    if (p.requires_grad()) {
                        p.ensure_grad();
                        T* gpart = p.node()->grad.data() + (b * pc) * hw;
                        const T* gsrc = gp + ((b * ctotal + coff) * hw);
                        for (index_t i = 0; i < pc * hw; ++i) gpart[i] += gsrc[i];
                    }
                    coff += pc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, index_t c_begin, index_t c_end) {
    const Shape s = a.shape();
    if (c_begin < 0 || c_end > s.c || c_begin >= c_end) {
        throw ShapeError("slice_channels: range [" + std::to_string(c_begin) + "," +
                         std::to_string(c_end) + ") invalid for " + s.str());
    }
    const index_t cn = c_end - c_begin;
    const index_t hw = s.h * s.w;
    Tensor<T> out(Shape{s.b, cn, s.h, s.w});
    T* op = out.data().data();
    const T* ap = a.data().data();
    for (index_t b = 0; b < s.b; ++b) {
        std::memcpy(op + (b * cn) * hw, ap + ((b * s.c + c_begin) * hw),
                    static_cast<std::size_t>(cn * hw) * sizeof(T));
    }
    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out, s, c_begin, cn, hw]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T* gp = g->data();
            T* ga = a.node()->grad.data();
            for (index_t b = 0; b < s.b; ++b) {
                T* dst = ga + ((b * s.c + c_begin) * hw);
                const T* src = gp + (b * cn) * hw;
                for (index_t i = 0; i < cn * hw; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// spatial differences, box filter
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> diff_x(const Tensor<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(s);
    const T* ap = a.data().data();
    T* op = out.data().data();
    for (index_t r = 0; r < s.b * s.c * s.h; ++r) {
        const T* row = ap + r * s.w;
        T* orow = op + r * s.w;
        for (index_t x = 0; x + 1 < s.w; ++x) orow[x] = row[x + 1] - row[x];
        orow[s.w - 1] = T(0);
    }
    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out, s]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T* gp = g->data();
            T* ga = a.node()->grad.data();
            for (index_t r = 0; r < s.b * s.c * s.h; ++r) {
                const T* grow = gp + r * s.w;
                T* garow = ga + r * s.w;
                for (index_t x = 0; x + 1 < s.w; ++x) {
                    garow[x + 1] += grow[x];
                    garow[x] -= grow[x];
                }
            }
            check_grad(a, "diff_x");
        });
    }
    return out;
}

template <typename T>
Tensor<T> diff_y(const Tensor<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(s);
    const T* ap = a.data().data();
    T* op = out.data().data();
    for (index_t bc = 0; bc < s.b * s.c; ++bc) {
        const T* plane = ap + bc * s.h * s.w;
        T* oplane = op + bc * s.h * s.w;
        for (index_t y = 0; y + 1 < s.h; ++y)
            for (index_t x = 0; x < s.w; ++x)
                oplane[y * s.w + x] = plane[(y + 1) * s.w + x] - plane[y * s.w + x];
        for (index_t x = 0; x < s.w; ++x) oplane[(s.h - 1) * s.w + x] = T(0);
    }
    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out, s]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T* gp = g->data();
            T* ga = a.node()->grad.data();
            for (index_t bc = 0; bc < s.b * s.c; ++bc) {
                const T* gplane = gp + bc * s.h * s.w;
                T* gaplane = ga + bc * s.h * s.w;
                for (index_t y = 0; y + 1 < s.h; ++y)
                    for (index_t x = 0; x < s.w; ++x) {
                        const T gv = gplane[y * s.w + x];
                        gaplane[(y + 1) * s.w + x] += gv;
                        gaplane[y * s.w + x] -= gv;
                    }
            }
            check_grad(a, "diff_y");
        });
    }
    return out;
}

template <typename T>
Tensor<T> box_mean3x3(const Tensor<T>& a) {
    const Shape s = a.shape();
    Tensor<T> out(s);
    const T* ap = a.data().data();
    T* op = out.data().data();
    for (index_t bc = 0; bc < s.b * s.c; ++bc) {
        const T* plane = ap + bc * s.h * s.w;
        T* oplane = op + bc * s.h * s.w;
        for (index_t y = 0; y < s.h; ++y) {
            const index_t y0 = std::max<index_t>(0, y - 1), y1 = std::min(s.h - 1, y + 1);
            for (index_t x = 0; x < s.w; ++x) {
                const index_t x0 = std::max<index_t>(0, x - 1), x1 = std::min(s.w - 1, x + 1);
                T acc = 0;
                for (index_t yy = y0; yy <= y1; ++yy)
                    for (index_t xx = x0; xx <= x1; ++xx) acc += plane[yy * s.w + xx];
                oplane[y * s.w + x] = acc / static_cast<T>((y1 - y0 + 1) * (x1 - x0 + 1));
            }
        }
    }
    check_out(out, "box_mean3x3");
    if (detail::tracing<T>({&a})) {
        out.set_requires_grad(true);
        detail::record_step<T>([a, out, s]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !a.requires_grad()) return;
            a.ensure_grad();
            const T* gp = g->data();
            T* ga = a.node()->grad.data();
            for (index_t bc = 0; bc < s.b * s.c; ++bc) {
                const T* gplane = gp + bc * s.h * s.w;
                T* gaplane = ga + bc * s.h * s.w;
                for (index_t y = 0; y < s.h; ++y) {
                    const index_t y0 = std::max<index_t>(0, y - 1), y1 = std::min(s.h - 1, y + 1);
                    for (index_t x = 0; x < s.w; ++x) {
                        const index_t x0 = std::max<index_t>(0, x - 1), x1 = std::min(s.w - 1, x + 1);
                        const T gv = gplane[y * s.w + x] /
                                     static_cast<T>((y1 - y0 + 1) * (x1 - x0 + 1));
                        for (index_t yy = y0; yy <= y1; ++yy)
                            for (index_t xx = x0; xx <= x1; ++xx) gaplane[yy * s.w + xx] += gv;
                    }
                }
            }
            check_grad(a, "box_mean3x3");
        });
    }
    return out;
}

#define ESN_INSTANTIATE_OPS(T)                                                                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);   \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        int, int);                                              \
    template Tensor<T> bilinear_resize(const Tensor<T>&, index_t, index_t, bool);                \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                          \
    template Tensor<T> neg(const Tensor<T>&);                                                    \
    template Tensor<T> abs(const Tensor<T>&);                                                    \
    template Tensor<T> exp(const Tensor<T>&);                                                    \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                          \
    template Tensor<T> sum_all(const Tensor<T>&);                                                \
    template Tensor<T> mean_all(const Tensor<T>&);                                               \
    template Tensor<T> channel_mean(const Tensor<T>&);                                           \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                           \
    template Tensor<T> slice_channels(const Tensor<T>&, index_t, index_t);                       \
    template Tensor<T> diff_x(const Tensor<T>&);                                                 \
    template Tensor<T> diff_y(const Tensor<T>&);                                                 \
    template Tensor<T> box_mean3x3(const Tensor<T>&);

ESN_INSTANTIATE_OPS(float)
ESN_INSTANTIATE_OPS(double)

}  // namespace esn
