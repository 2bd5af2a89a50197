#include "esn/matching.hpp"

#include "esn/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace esn {

namespace {

std::atomic<long long> g_warp_count{0};

}  // namespace

long long warp_op_count() { return g_warp_count.load(); }
void reset_warp_op_count() { g_warp_count.store(0); }

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

template <typename T>
CostVolume<T> correlate(const Tensor<T>& f_left, const Tensor<T>& f_right,
                        const std::vector<int>& offsets) {
    if (offsets.empty()) throw ShapeError("correlate: offsets must be non-empty");
    const Shape s = f_left.shape();
    if (!(f_right.shape() == s)) {
        throw ShapeError("correlate: feature shapes differ, " + s.str() + " vs " +
                         f_right.shape().str());
    }
    const index_t D = static_cast<index_t>(offsets.size());
    const T inv_c = T(1) / static_cast<T>(s.c);

    Tensor<T> out(Shape{s.b, D, s.h, s.w});
    const T* lp = f_left.data().data();
    const T* rp = f_right.data().data();
    T* op = out.data().data();

    for (index_t b = 0; b < s.b; ++b) {
        for (index_t i = 0; i < D; ++i) {
            const index_t d = offsets[static_cast<std::size_t>(i)];
            // x - d must land in [0, W)
            const index_t x_lo = std::max<index_t>(0, d);
            const index_t x_hi = std::min<index_t>(s.w, s.w + d);  // exclusive
            T* obase = op + ((b * D + i) * s.h) * s.w;
            for (index_t c = 0; c < s.c; ++c) {
                const T* lplane = lp + ((b * s.c + c) * s.h) * s.w;
                const T* rplane = rp + ((b * s.c + c) * s.h) * s.w;
                for (index_t y = 0; y < s.h; ++y) {
                    const T* lrow = lplane + y * s.w;
                    const T* rrow = rplane + y * s.w - d;
                    T* orow = obase + y * s.w;
                    for (index_t x = x_lo; x < x_hi; ++x) orow[x] += lrow[x] * rrow[x];
                }
            }
            for (index_t j = 0; j < s.h * s.w; ++j) obase[j] *= inv_c;
        }
    }
    detail::check_finite_span(out.data(), "correlate");

    if (detail::tracing<T>({&f_left, &f_right})) {
        out.set_requires_grad(true);
        detail::record_step<T>([f_left, f_right, out, offsets, s, D, inv_c]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g) return;
            const bool need_l = f_left.requires_grad();
            const bool need_r = f_right.requires_grad();
            if (!need_l && !need_r) return;
            if (need_l) f_left.ensure_grad();
            if (need_r) f_right.ensure_grad();
            const T* gp = g->data();
            const T* lp = f_left.data().data();
            const T* rp = f_right.data().data();
            T* gl = need_l ? f_left.node()->grad.data() : nullptr;
            T* gr = need_r ? f_right.node()->grad.data() : nullptr;

            for (index_t b = 0; b < s.b; ++b) {
                for (index_t i = 0; i < D; ++i) {
                    const index_t d = offsets[static_cast<std::size_t>(i)];
                    const index_t x_lo = std::max<index_t>(0, d);
                    const index_t x_hi = std::min<index_t>(s.w, s.w + d);
                    const T* gbase = gp + ((b * D + i) * s.h) * s.w;
                    for (index_t c = 0; c < s.c; ++c) {
                        const index_t plane = ((b * s.c + c) * s.h) * s.w;
                        for (index_t y = 0; y < s.h; ++y) {
                            const T* grow = gbase + y * s.w;
                            const T* lrow = lp + plane + y * s.w;
                            const T* rrow = rp + plane + y * s.w - d;
                            T* glrow = need_l ? gl + plane + y * s.w : nullptr;
                            T* grrow = need_r ? gr + plane + y * s.w - d : nullptr;
                            if (need_l)
                                for (index_t x = x_lo; x < x_hi; ++x)
                                    glrow[x] += inv_c * grow[x] * rrow[x];
                            if (need_r)
                                for (index_t x = x_lo; x < x_hi; ++x)
                                    grrow[x] += inv_c * grow[x] * lrow[x];
                        }
                    }
                }
            }
            if (need_l) detail::check_finite_span(f_left.node()->grad, "correlate.left");
            if (need_r) detail::check_finite_span(f_right.node()->grad, "correlate.right");
        });
    }
    return CostVolume<T>{out, offsets};
}

// ---------------------------------------------------------------------------
// warp_by_disparity
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> warp_by_disparity(const Tensor<T>& f, const Tensor<T>& disparity) {
    const Shape s = f.shape();
    const Shape ds = disparity.shape();
    if (ds.b != s.b || ds.c != 1 || ds.h != s.h || ds.w != s.w) {
        throw ShapeError("warp_by_disparity: disparity shape " + ds.str() +
                         " must be (B,1,H,W) matching features " + s.str());
    }
    g_warp_count.fetch_add(1, std::memory_order_relaxed);

    Tensor<T> out(s);
    const T* fp = f.data().data();
    const T* dp = disparity.data().data();
    T* op = out.data().data();
    const double wmax = static_cast<double>(s.w - 1);

    for (index_t b = 0; b < s.b; ++b) {
        const T* dplane = dp + (b * s.h) * s.w;
        for (index_t c = 0; c < s.c; ++c) {
            const T* fplane = fp + ((b * s.c + c) * s.h) * s.w;
            T* oplane = op + ((b * s.c + c) * s.h) * s.w;
            for (index_t y = 0; y < s.h; ++y) {
                const T* frow = fplane + y * s.w;
                const T* drow = dplane + y * s.w;
                T* orow = oplane + y * s.w;
                for (index_t x = 0; x < s.w; ++x) {
                    double src = static_cast<double>(x) - static_cast<double>(drow[x]);
                    src = std::clamp(src, 0.0, wmax);
                    const index_t x0 = static_cast<index_t>(std::floor(src));
                    const index_t x1 = std::min(x0 + 1, s.w - 1);
                    const T t = static_cast<T>(src - static_cast<double>(x0));
                    orow[x] = (T(1) - t) * frow[x0] + t * frow[x1];
                }
            }
        }
    }
    detail::check_finite_span(out.data(), "warp_by_disparity");

    if (detail::tracing<T>({&f, &disparity})) {
        out.set_requires_grad(true);
        detail::record_step<T>([f, disparity, out, s, wmax]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g) return;
            const bool need_f = f.requires_grad();
            const bool need_d = disparity.requires_grad();
            if (!need_f && !need_d) return;
            if (need_f) f.ensure_grad();
            if (need_d) disparity.ensure_grad();
            const T* gp = g->data();
            const T* fp = f.data().data();
            const T* dp = disparity.data().data();
            T* gf = need_f ? f.node()->grad.data() : nullptr;
            T* gd = need_d ? disparity.node()->grad.data() : nullptr;

            for (index_t b = 0; b < s.b; ++b) {
                const T* dplane = dp + (b * s.h) * s.w;
                T* gdplane = need_d ? gd + (b * s.h) * s.w : nullptr;
                for (index_t c = 0; c < s.c; ++c) {
                    const index_t plane = ((b * s.c + c) * s.h) * s.w;
                    for (index_t y = 0; y < s.h; ++y) {
                        const T* frow = fp + plane + y * s.w;
                        const T* drow = dplane + y * s.w;
                        const T* grow = gp + plane + y * s.w;
                        for (index_t x = 0; x < s.w; ++x) {
                            const double raw = static_cast<double>(x) - static_cast<double>(drow[x]);
                            const bool clamped = raw <= 0.0 || raw >= wmax;
                            const double src = std::clamp(raw, 0.0, wmax);
                            const index_t x0 = static_cast<index_t>(std::floor(src));
                            const index_t x1 = std::min(x0 + 1, s.w - 1);
                            const T t = static_cast<T>(src - static_cast<double>(x0));
                            const T gv = grow[x];
                            if (need_f) {
                                gf[plane + y * s.w + x0] += (T(1) - t) * gv;
                                gf[plane + y * s.w + x1] += t * gv;
                            }
                            if (need_d && !clamped) {
                                // d(out)/d(disp) = -(f[x1] - f[x0])
                                gdplane[y * s.w + x] -= (frow[x1] - frow[x0]) * gv;
                            }
                        }
                    }
                }
            }
            if (need_f) detail::check_finite_span(f.node()->grad, "warp.features");
            if (need_d) detail::check_finite_span(disparity.node()->grad, "warp.disparity");
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// fmm / mask_fmm
// ---------------------------------------------------------------------------

template <typename T>
CostVolume<T> fmm(const Tensor<T>& f_left, const Tensor<T>& f_right, const Tensor<T>& d_coarse,
                  const std::vector<int>& offsets) {
    const Shape fs = f_left.shape();
    const Shape ds = d_coarse.shape();
    if (ds.h * 2 != fs.h || ds.w * 2 != fs.w) {
        throw ShapeError("fmm: coarse disparity " + ds.str() +
                         " must be half the feature resolution " + fs.str());
    }
    Tensor<T> d_up = bilinear_resize(d_coarse, fs.h, fs.w, /*disparity=*/true);
    Tensor<T> warped = warp_by_disparity(f_right, d_up);
    return correlate(f_left, warped, offsets);
}

template <typename T>
MaskFmmResult<T> mask_fmm(const Tensor<T>& f_left_2, const Tensor<T>& f_right_2,
                          const Tensor<T>& d_coarse, const Tensor<T>& ctx_coarse, int scale_s,
                          const MaskFmmParams<T>& params, const MaskFmmOptions& opts) {
    if (scale_s < 0 || scale_s > 2) {
        throw ShapeError("mask_fmm: scale must be 0, 1 or 2, got " + std::to_string(scale_s));
    }
    const Shape f2 = f_left_2.shape();
    const index_t up = index_t(1) << (2 - scale_s);
    const index_t Ht = f2.h * up, Wt = f2.w * up;

    MaskFmmResult<T> r;
    if (scale_s == 2) {
        r.left_feature = f_left_2;
        r.right_feature = f_right_2;
    } else {
        Tensor<T> lu = bilinear_resize(f_left_2, Ht, Wt);
        Tensor<T> ru = bilinear_resize(f_right_2, Ht, Wt);
        r.left_feature = conv2d(lu, params.transform_left_w, params.transform_left_b, 1, 0);
        r.right_feature = conv2d(ru, params.transform_right_w, params.transform_right_b, 1, 0);
    }

    const Shape ds = d_coarse.shape();
    if (ds.h * 2 != Ht || ds.w * 2 != Wt) {
        throw ShapeError("mask_fmm: coarse disparity " + ds.str() +
                         " must be half the target resolution " + std::to_string(Ht) + "x" +
                         std::to_string(Wt));
    }
    Tensor<T> d_up = bilinear_resize(d_coarse, Ht, Wt, /*disparity=*/true);
    Tensor<T> warped = warp_by_disparity(r.right_feature, d_up);

    r.theta = bilinear_resize(sigmoid(conv2d(ctx_coarse, params.theta_w, params.theta_b, 1, 1)),
                              Ht, Wt);
    r.mu = bilinear_resize(conv2d(ctx_coarse, params.mu_w, params.mu_b, 1, 1), Ht, Wt);

    Tensor<T> modulated = warped;
    if (!opts.force_theta_one) modulated = mul(modulated, r.theta);
    if (!opts.force_mu_zero) modulated = add(modulated, r.mu);
    r.modulated = modulated;
    r.cost = correlate(r.left_feature, modulated, opts.offsets);
    return r;
}

// ---------------------------------------------------------------------------
// disparity_to_depth
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> disparity_to_depth(const Tensor<T>& disparity, const CameraRig& rig, T min_disparity,
                             T sentinel) {
    rig.validate();
    const T fb = static_cast<T>(rig.focal_length_px * rig.baseline_m);
    Tensor<T> depth(disparity.shape());
    const auto& dv = disparity.data();
    auto& zv = depth.data();
    for (std::size_t i = 0; i < dv.size(); ++i) {
        zv[i] = dv[i] > min_disparity ? fb / dv[i] : sentinel;
    }
    return depth;
}

#define ESN_INSTANTIATE_MATCHING(T)                                                            \
    template CostVolume<T> correlate(const Tensor<T>&, const Tensor<T>&,                       \
                                     const std::vector<int>&);                                 \
    template Tensor<T> warp_by_disparity(const Tensor<T>&, const Tensor<T>&);                  \
    template CostVolume<T> fmm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               const std::vector<int>&);                                       \
    template MaskFmmResult<T> mask_fmm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       const Tensor<T>&, int, const MaskFmmParams<T>&,         \
                                       const MaskFmmOptions&);                                 \
    template Tensor<T> disparity_to_depth(const Tensor<T>&, const CameraRig&, T, T);

ESN_INSTANTIATE_MATCHING(float)
ESN_INSTANTIATE_MATCHING(double)

}  // namespace esn
