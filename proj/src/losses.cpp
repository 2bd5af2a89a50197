#include "esn/losses.hpp"

#include "esn/matching.hpp"
#include "esn/ops.hpp"

#include <cmath>
#include <cstdio>

namespace esn {

namespace {

template <typename T>
void warn_image_range(const Tensor<T>& img, const char* where) {
    static bool warned = false;
    if (warned) return;
    for (const T v : img.data()) {
        if (v < T(-1e-6) || v > T(1) + T(1e-6)) {
            std::fprintf(stderr, "warning: %s expects images in [0,1], got %g\n", where,
                         static_cast<double>(v));
            warned = true;
            return;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// smooth_l1
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid,
                    bool* zero_valid_warning) {
    const Shape s = pred.shape();
    if (!(gt.shape() == s) || !(valid.shape() == s)) {
        throw ShapeError("smooth_l1: pred " + s.str() + ", gt " + gt.shape().str() +
                         ", valid " + valid.shape().str() + " must all match");
    }
    const T* pp = pred.data().data();
    const T* gp = gt.data().data();
    const T* vp = valid.data().data();
    const index_t n = s.numel();

    double acc = 0;
    index_t count = 0;
    for (index_t i = 0; i < n; ++i) {
        if (vp[i] == T(0)) continue;
        ++count;
        const double e = std::fabs(static_cast<double>(pp[i]) - static_cast<double>(gp[i]));
        acc += e < 1.0 ? 0.5 * e * e : e - 0.5;
    }
    if (zero_valid_warning) *zero_valid_warning = (count == 0);

    Tensor<T> out(Shape{1, 1, 1, 1});
    out.data()[0] = count > 0 ? static_cast<T>(acc / static_cast<double>(count)) : T(0);
    detail::check_finite_span(out.data(), "smooth_l1");

    if (detail::tracing<T>({&pred})) {
        out.set_requires_grad(true);
        detail::record_step<T>([pred, gt, valid, out, n, count]() {
            const std::vector<T>* g = detail::upstream(out);
            if (!g || !pred.requires_grad() || count == 0) return;
            pred.ensure_grad();
            const T gv = (*g)[0] / static_cast<T>(count);
            const T* pp = pred.data().data();
            const T* gp = gt.data().data();
            const T* vp = valid.data().data();
            T* gpred = pred.node()->grad.data();
            for (index_t i = 0; i < n; ++i) {
                if (vp[i] == T(0)) continue;
                const T e = pp[i] - gp[i];
                // derivative of the penalty: e inside |e|<1, sign(e) outside
                gpred[i] += gv * (std::fabs(e) < T(1) ? e : (e > T(0) ? T(1) : T(-1)));
            }
            detail::check_finite_span(pred.node()->grad, "smooth_l1");
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// ground-truth pyramid
// ---------------------------------------------------------------------------

template <typename T>
std::pair<Tensor<T>, Tensor<T>> downsample_gt(const Tensor<T>& gt_full,
                                              const Tensor<T>& valid_full, int scale) {
    if (scale < 0) throw ShapeError("downsample_gt: negative scale");
    if (scale == 0) return {gt_full, valid_full};
    const Shape s = gt_full.shape();
    const index_t f = index_t(1) << scale;
    if (s.h % f != 0 || s.w % f != 0) {
        throw ShapeError("downsample_gt: size " + s.str() + " not divisible by " +
                         std::to_string(f));
    }
    const index_t Ho = s.h / f, Wo = s.w / f;
    Tensor<T> gt(Shape{s.b, s.c, Ho, Wo});
    Tensor<T> valid(Shape{s.b, s.c, Ho, Wo});
    const T rescale = T(1) / static_cast<T>(f);

    for (index_t bc = 0; bc < s.b * s.c; ++bc) {
        const T* gplane = gt_full.data().data() + bc * s.h * s.w;
        const T* vplane = valid_full.data().data() + bc * s.h * s.w;
        T* oplane = gt.data().data() + bc * Ho * Wo;
        T* ovplane = valid.data().data() + bc * Ho * Wo;
        for (index_t oy = 0; oy < Ho; ++oy) {
            for (index_t ox = 0; ox < Wo; ++ox) {
                double acc = 0;
                index_t cnt = 0;
                for (index_t yy = oy * f; yy < (oy + 1) * f; ++yy)
                    for (index_t xx = ox * f; xx < (ox + 1) * f; ++xx) {
                        if (vplane[yy * s.w + xx] != T(0)) {
                            acc += static_cast<double>(gplane[yy * s.w + xx]);
                            ++cnt;
                        }
                    }
                if (cnt > 0) {
                    oplane[oy * Wo + ox] = static_cast<T>(acc / static_cast<double>(cnt)) * rescale;
                    ovplane[oy * Wo + ox] = T(1);
                }
            }
        }
    }
    return {gt, valid};
}

template <typename T>
Tensor<T> supervised_total(const std::vector<Tensor<T>>& pyramid, const Tensor<T>& gt_full,
                           const Tensor<T>& valid_full, const SupervisedLossConfig& cfg) {
    if (pyramid.size() != 7) {
        throw ShapeError("supervised_total: pyramid must have 7 scales, got " +
                         std::to_string(pyramid.size()));
    }
    Tensor<T> total(Shape{1, 1, 1, 1});
    for (int s = 0; s < 7; ++s) {
        const double w = cfg.omega[static_cast<std::size_t>(s)];
        if (w == 0.0) continue;
        auto [gt_s, valid_s] = downsample_gt(gt_full, valid_full, s);
        if (!(gt_s.shape() == pyramid[static_cast<std::size_t>(s)].shape())) {
            throw ShapeError("supervised_total: pyramid scale " + std::to_string(s) + " shape " +
                             pyramid[static_cast<std::size_t>(s)].shape().str() +
                             " does not match downsampled gt " + gt_s.shape().str());
        }
        Tensor<T> ls = smooth_l1(pyramid[static_cast<std::size_t>(s)], gt_s, valid_s);
        total = add(total, mul_scalar(ls, static_cast<T>(w)));
    }
    return total;
}

// ---------------------------------------------------------------------------
// ssim / photometric
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError("ssim: shapes differ, " + a.shape().str() + " vs " + b.shape().str());
    }
    warn_image_range(a, "ssim");
    const T c1 = T(0.01) * T(0.01);
    const T c2 = T(0.03) * T(0.03);

    Tensor<T> mu_a = box_mean3x3(a);
    Tensor<T> mu_b = box_mean3x3(b);
    Tensor<T> mu_aa = mul(mu_a, mu_a);
    Tensor<T> mu_bb = mul(mu_b, mu_b);
    Tensor<T> mu_ab = mul(mu_a, mu_b);
    Tensor<T> sigma_a = sub(box_mean3x3(mul(a, a)), mu_aa);
    Tensor<T> sigma_b = sub(box_mean3x3(mul(b, b)), mu_bb);
    Tensor<T> sigma_ab = sub(box_mean3x3(mul(a, b)), mu_ab);

    Tensor<T> num = mul(add_scalar(mul_scalar(mu_ab, T(2)), c1),
                        add_scalar(mul_scalar(sigma_ab, T(2)), c2));
    Tensor<T> den = mul(add_scalar(add(mu_aa, mu_bb), c1),
                        add_scalar(add(sigma_a, sigma_b), c2));
    return div(num, den);
}

template <typename T>
Tensor<T> photometric_error_map(const Tensor<T>& left, const Tensor<T>& right,
                                const Tensor<T>& disparity, double alpha) {
    Tensor<T> reconstructed = warp_by_disparity(right, disparity);
    Tensor<T> ssim_map = ssim(reconstructed, left);
    // alpha * (1 - SSIM)/2, channel-averaged
    Tensor<T> ssim_term = channel_mean(
        mul_scalar(add_scalar(neg(ssim_map), T(1)), static_cast<T>(alpha * 0.5)));
    Tensor<T> l1_term = mul_scalar(channel_mean(abs(sub(reconstructed, left))),
                                   static_cast<T>(1.0 - alpha));
    return add(ssim_term, l1_term);
}

template <typename T>
Tensor<T> photometric_loss(const Tensor<T>& left_full, const Tensor<T>& right_full,
                           const Tensor<T>& disparity_s, int scale_s, const UnsupLossConfig& cfg) {
    const Shape ds = disparity_s.shape();
    if (cfg.full_res_compare && scale_s > 0) {
        const Shape is = left_full.shape();
        Tensor<T> d_up = bilinear_resize(disparity_s, is.h, is.w, /*disparity=*/true);
        return mean_all(photometric_error_map(left_full, right_full, d_up, cfg.alpha));
    }
    Tensor<T> left_s = scale_s == 0 ? left_full : bilinear_resize(left_full, ds.h, ds.w);
    Tensor<T> right_s = scale_s == 0 ? right_full : bilinear_resize(right_full, ds.h, ds.w);
    if (left_s.shape().h != ds.h || left_s.shape().w != ds.w) {
        throw ShapeError("photometric_loss: disparity " + ds.str() +
                         " does not match image scale " + left_s.shape().str());
    }
    return mean_all(photometric_error_map(left_s, right_s, disparity_s, cfg.alpha));
}

// ---------------------------------------------------------------------------
// smoothness
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& disparity_s, const Tensor<T>& left_s) {
    const Shape ds = disparity_s.shape();
    const Shape is = left_s.shape();
    if (ds.h != is.h || ds.w != is.w || ds.b != is.b) {
        throw ShapeError("smoothness_loss: disparity " + ds.str() + " vs image " + is.str());
    }
    Tensor<T> wx = exp(neg(channel_mean(abs(diff_x(left_s)))));
    Tensor<T> wy = exp(neg(channel_mean(abs(diff_y(left_s)))));
    Tensor<T> term_x = mul(abs(diff_x(disparity_s)), wx);
    Tensor<T> term_y = mul(abs(diff_y(disparity_s)), wy);
    return mean_all(add(term_x, term_y));
}

template <typename T>
Tensor<T> unsupervised_total(const std::vector<Tensor<T>>& pyramid, const Tensor<T>& left_full,
                             const Tensor<T>& right_full, const UnsupLossConfig& cfg) {
    if (cfg.num_scales < 1 || cfg.num_scales > static_cast<int>(pyramid.size())) {
        throw ShapeError("unsupervised_total: num_scales out of range");
    }
    Tensor<T> total(Shape{1, 1, 1, 1});
    for (int s = 0; s < cfg.num_scales; ++s) {
        const Tensor<T>& d = pyramid[static_cast<std::size_t>(s)];
        Tensor<T> pe = photometric_loss(left_full, right_full, d, s, cfg);
        Tensor<T> left_s =
            s == 0 ? left_full : bilinear_resize(left_full, d.shape().h, d.shape().w);
        Tensor<T> sm = smoothness_loss(d, left_s);
        total = add(total, add(mul_scalar(pe, static_cast<T>(cfg.lambda1)),
                               mul_scalar(sm, static_cast<T>(cfg.lambda2))));
    }
    return total;
}

#define ESN_INSTANTIATE_LOSSES(T)                                                              \
    template Tensor<T> smooth_l1(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool*); \
    template std::pair<Tensor<T>, Tensor<T>> downsample_gt(const Tensor<T>&, const Tensor<T>&, \
                                                           int);                               \
    template Tensor<T> supervised_total(const std::vector<Tensor<T>>&, const Tensor<T>&,       \
                                        const Tensor<T>&, const SupervisedLossConfig&);        \
    template Tensor<T> ssim(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> photometric_error_map(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&, double);                        \
    template Tensor<T> photometric_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        int, const UnsupLossConfig&);                          \
    template Tensor<T> smoothness_loss(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> unsupervised_total(const std::vector<Tensor<T>>&, const Tensor<T>&,     \
                                          const Tensor<T>&, const UnsupLossConfig&);

ESN_INSTANTIATE_LOSSES(float)
ESN_INSTANTIATE_LOSSES(double)

}  // namespace esn
