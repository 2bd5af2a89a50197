#include "esn/gradsuite.hpp"

#include "esn/gradcheck.hpp"
#include "esn/losses.hpp"
#include "esn/matching.hpp"
#include "esn/network.hpp"
#include "esn/ops.hpp"
#include "esn/random.hpp"

namespace esn {

namespace {

using Td = Tensor<double>;
using Fn = std::function<Td(const std::vector<Td>&)>;

Td mk_randn(Shape s, unsigned long long seed, double stddev = 1.0) {
    Rng rng(seed);
    return randn<double>(s, rng, stddev);
}

Td mk_uniform(Shape s, unsigned long long seed, double lo, double hi) {
    Rng rng(seed);
    return rand_uniform<double>(s, rng, lo, hi);
}

// Disparities whose fractional parts stay in [0.3, 0.7]: a 1e-3 finite
// difference step cannot push a sample across an interpolation cell edge.
Td mk_safe_disparity(Shape s, unsigned long long seed, double base) {
    Rng rng(seed);
    Td d = rand_uniform<double>(s, rng, 0.0, 1.0);
    for (double& v : d.data()) v = base + 0.3 + 0.4 * v;
    return d;
}

// Monotone ramp plus small jitter: neighbor differences are bounded away
// from zero, so |dx|/|dy| terms see no sign flips under perturbation.
Td mk_ramp(Shape s, unsigned long long seed, double base, double sx, double sy, double jitter) {
    Rng rng(seed);
    Td t = rand_uniform<double>(s, rng, -jitter, jitter);
    for (index_t b = 0; b < s.b; ++b)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < s.h; ++y)
                for (index_t x = 0; x < s.w; ++x)
                    t.at(b, c, y, x) += base + sx * static_cast<double>(x) +
                                        sy * static_cast<double>(y);
    return t;
}

double run(const Fn& f, std::vector<Td> inputs, index_t max_coords = 0) {
    GradCheckOptions opts;
    opts.max_coords_per_input = max_coords;
    return grad_check<double>(f, std::move(inputs), opts);
}

}  // namespace

std::vector<std::pair<std::string, double>> gradient_suite() {
    std::vector<std::pair<std::string, double>> results;
    auto report = [&results](const std::string& name, double err) {
        results.emplace_back(name, err);
    };

    // --- tensor engine primitives ---
    report("conv2d/stride1", run(
        [](const std::vector<Td>& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
        {mk_randn({2, 3, 5, 6}, 11), mk_randn({4, 3, 3, 3}, 12, 0.5), mk_randn({1, 4, 1, 1}, 13)}));
    report("conv2d/stride2", run(
        [](const std::vector<Td>& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
        {mk_randn({1, 3, 6, 8}, 21), mk_randn({4, 3, 3, 3}, 22, 0.5), mk_randn({1, 4, 1, 1}, 23)}));
    report("conv_transpose2d/stride1", run(
        [](const std::vector<Td>& in) { return conv_transpose2d(in[0], in[1], in[2], 1, 1); },
        {mk_randn({1, 3, 4, 5}, 31), mk_randn({3, 2, 3, 3}, 32, 0.5), mk_randn({1, 2, 1, 1}, 33)}));
    report("conv_transpose2d/stride2", run(
        [](const std::vector<Td>& in) { return conv_transpose2d(in[0], in[1], in[2], 2, 1); },
        {mk_randn({1, 3, 3, 4}, 41), mk_randn({3, 2, 4, 4}, 42, 0.5), mk_randn({1, 2, 1, 1}, 43)}));
    report("bilinear_resize/up", run(
        [](const std::vector<Td>& in) { return bilinear_resize(in[0], 6, 8); },
        {mk_randn({1, 2, 3, 4}, 51)}));
    report("bilinear_resize/down", run(
        [](const std::vector<Td>& in) { return bilinear_resize(in[0], 3, 4); },
        {mk_randn({1, 2, 6, 8}, 52)}));
    report("bilinear_resize/disparity", run(
        [](const std::vector<Td>& in) { return bilinear_resize(in[0], 6, 8, true); },
        {mk_safe_disparity({1, 1, 3, 4}, 53, 1.0)}));
    report("elementwise/chain", run(
        [](const std::vector<Td>& in) {
            Td y = sigmoid(mul(in[0], in[1]));
            y = leaky_relu(sub(y, mul_scalar(in[1], 0.3)));
            return div(y, add_scalar(exp(neg(in[0])), 2.0));
        },
        {mk_uniform({1, 2, 3, 4}, 61, -1.2, 1.2), mk_uniform({1, 2, 3, 4}, 62, 0.2, 0.9)}));
    report("channel_ops", run(
        [](const std::vector<Td>& in) {
            Td cat = concat_channels<double>({in[0], in[1]});
            Td sl = slice_channels(cat, 1, 3);
            return mul(channel_mean(sl), box_mean3x3(in[2]));
        },
        {mk_randn({1, 2, 3, 4}, 71), mk_randn({1, 2, 3, 4}, 72), mk_randn({1, 1, 3, 4}, 73)}));

    // --- matching kernels ---
    report("warp_by_disparity", run(
        [](const std::vector<Td>& in) { return warp_by_disparity(in[0], in[1]); },
        {mk_randn({1, 3, 4, 8}, 81), mk_safe_disparity({1, 1, 4, 8}, 82, 1.0)}));
    report("correlate", run(
        [](const std::vector<Td>& in) {
            return correlate(in[0], in[1], {-2, -1, 0, 1, 2}).scores;
        },
        {mk_randn({1, 4, 4, 6}, 91), mk_randn({1, 4, 4, 6}, 92)}));
    report("fmm", run(
        [](const std::vector<Td>& in) { return fmm(in[0], in[1], in[2]).scores; },
        {mk_randn({1, 3, 4, 8}, 101), mk_randn({1, 3, 4, 8}, 102),
         // x2 upsample doubles values: base 1.55 + frac in [0.3,0.7]*0.4/2
         mk_ramp({1, 1, 2, 4}, 103, 1.62, 0.004, 0.003, 0.01)}));
    report("mask_fmm", run(
        [](const std::vector<Td>& in) {
            MaskFmmParams<double> p;
            p.transform_left_w = in[4];
            p.transform_left_b = in[5];
            p.transform_right_w = in[6];
            p.transform_right_b = in[7];
            p.theta_w = in[8];
            p.theta_b = in[9];
            p.mu_w = in[10];
            p.mu_b = in[11];
            return mask_fmm(in[0], in[1], in[2], in[3], 1, p).cost.scores;
        },
        {mk_randn({1, 4, 4, 6}, 111), mk_randn({1, 4, 4, 6}, 112),
         mk_ramp({1, 1, 4, 6}, 113, 1.62, 0.004, 0.003, 0.01), mk_randn({1, 3, 4, 6}, 114),
         mk_randn({2, 4, 1, 1}, 115, 0.5), mk_randn({1, 2, 1, 1}, 116),
         mk_randn({2, 4, 1, 1}, 117, 0.5), mk_randn({1, 2, 1, 1}, 118),
         mk_randn({1, 3, 3, 3}, 119, 0.5), mk_randn({1, 1, 1, 1}, 120),
         mk_randn({2, 3, 3, 3}, 121, 0.5), mk_randn({1, 2, 1, 1}, 122)}));

    // --- losses ---
    {
        // errors stay clear of the |x| = 1 corner and of zero
        Rng rng(131);
        Td gt = mk_uniform({1, 1, 4, 5}, 132, 2.0, 6.0);
        Td pred = gt.clone();
        std::uniform_real_distribution<double> small(0.1, 0.6), big(1.3, 1.8);
        for (std::size_t i = 0; i < pred.data().size(); ++i) {
            const double mag = (rng() % 2 == 0) ? small(rng) : big(rng);
            pred.data()[i] += (rng() % 2 == 0) ? mag : -mag;
        }
        Td valid({1, 1, 4, 5}, 1.0);
        valid.data()[3] = 0.0;
        valid.data()[11] = 0.0;
        report("smooth_l1", run(
            [gt, valid](const std::vector<Td>& in) { return smooth_l1(in[0], gt, valid); },
            {pred}));
    }
    {
        Td gt_full = mk_uniform({1, 1, 64, 64}, 141, 2.0, 6.0);
        Td valid_full({1, 1, 64, 64}, 1.0);
        std::vector<Td> pyramid;
        Rng rng(142);
        for (int s = 0; s < 7; ++s) {
            auto [gs, vs] = downsample_gt(gt_full, valid_full, s);
            Td p = gs.clone();
            std::uniform_real_distribution<double> off(0.2, 0.7);
            for (double& v : p.data()) v += off(rng);
            pyramid.push_back(p);
        }
        SupervisedLossConfig cfg;
        report("supervised_total", run(
            [gt_full, valid_full, cfg](const std::vector<Td>& in) {
                return supervised_total(in, gt_full, valid_full, cfg);
            },
            pyramid, /*max_coords=*/60));
    }
    report("ssim", run(
        [](const std::vector<Td>& in) { return ssim(in[0], in[1]); },
        {mk_uniform({1, 3, 6, 7}, 151, 0.2, 0.8), mk_uniform({1, 3, 6, 7}, 152, 0.2, 0.8)}));
    {
        // right = left + 0.3 keeps every |reconstruction - left| term well
        // away from the L1 kink no matter the disparity
        Td left = mk_ramp({1, 3, 4, 8}, 161, 0.35, 0.004, 0.006, 0.03);
        Td right = left.clone();
        for (double& v : right.data()) v += 0.3;
        UnsupLossConfig cfg;
        report("photometric_loss", run(
            [cfg](const std::vector<Td>& in) {
                return photometric_loss(in[0], in[1], in[2], 0, cfg);
            },
            {left, right, mk_safe_disparity({1, 1, 4, 8}, 163, 1.0)}));
    }
    report("smoothness_loss", run(
        [](const std::vector<Td>& in) { return smoothness_loss(in[0], in[1]); },
        {mk_ramp({1, 1, 5, 6}, 171, 1.0, 0.08, 0.06, 0.02),
         mk_ramp({1, 3, 5, 6}, 172, 0.2, 0.05, 0.03, 0.01)}));
    {
        Td left = mk_ramp({1, 3, 8, 16}, 181, 0.35, 0.002, 0.003, 0.03);
        Td right = left.clone();
        for (double& v : right.data()) v += 0.3;
        std::vector<Td> pyramid;
        for (int s = 0; s < 4; ++s) {
            pyramid.push_back(mk_ramp({1, 1, 8 >> s, 16 >> s}, 183 + s, 1.3, 0.02, 0.015, 0.005));
        }
        // scales 4..6 are unused by the loss but the pyramid carries 7 maps
        for (int s = 4; s < 7; ++s) pyramid.push_back(Td({1, 1, 8 >> 3, 16 >> 3}, 0.5));
        UnsupLossConfig cfg;
        std::vector<Td> inputs = {left, right, pyramid[0], pyramid[1], pyramid[2], pyramid[3]};
        report("unsupervised_total", run(
            [cfg, pyramid](const std::vector<Td>& in) {
                std::vector<Td> pyr = pyramid;
                for (int s = 0; s < 4; ++s) pyr[static_cast<std::size_t>(s)] = in[2 + s];
                return unsupervised_total(pyr, in[0], in[1], cfg);
            },
            inputs));
    }
    return results;
}

}  // namespace esn
