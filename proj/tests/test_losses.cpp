#include <doctest.h>

#include "esn/dataset.hpp"
#include "esn/gradcheck.hpp"
#include "esn/losses.hpp"
#include "esn/ops.hpp"
#include "esn/random.hpp"

#include "oracles.hpp"

#include <cmath>

using namespace esn;

TEST_CASE("smooth_l1: fixture values") {
    Tensor<float> valid(Shape{1, 1, 1, 1}, 1.0f);
    auto loss_for = [&](float pred, float gt) {
        Tensor<float> p(Shape{1, 1, 1, 1}, pred);
        Tensor<float> g(Shape{1, 1, 1, 1}, gt);
        return smooth_l1(p, g, valid).item();
    };
    CHECK(loss_for(3.0f, 3.0f) == doctest::Approx(0.0f));
    CHECK(loss_for(3.5f, 3.0f) == doctest::Approx(0.125f));  // 0.5^2 / 2
    CHECK(loss_for(5.0f, 3.0f) == doctest::Approx(1.5f));    // 2 - 0.5
}

TEST_CASE("smooth_l1: zero valid pixels yields 0 with a warning flag") {
    Tensor<float> p(Shape{1, 1, 2, 2}, 5.0f);
    Tensor<float> g(Shape{1, 1, 2, 2}, 1.0f);
    Tensor<float> none(Shape{1, 1, 2, 2}, 0.0f);
    bool warned = false;
    Tensor<float> loss = smooth_l1(p, g, none, &warned);
    CHECK(loss.item() == 0.0f);
    CHECK(warned);
}

TEST_CASE("smooth_l1: continuous and C1 at |x| = 1") {
    Tensor<double> valid(Shape{1, 1, 1, 1}, 1.0);
    Tensor<double> gt(Shape{1, 1, 1, 1}, 0.0);
    auto value_and_slope = [&](double x) {
        Tensor<double> p(Shape{1, 1, 1, 1}, x, true);
        Graph<double> g;
        Tensor<double> loss = smooth_l1(p, gt, valid);
        const double v = loss.item();
        g.backward(loss);
        return std::pair<double, double>{v, p.grad()[0]};
    };
    auto [v_in, s_in] = value_and_slope(1.0 - 1e-7);
    auto [v_out, s_out] = value_and_slope(1.0 + 1e-7);
    CHECK(v_in == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(v_out == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(s_in == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(s_out == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("smooth_l1: gradient reaches pred only at valid pixels") {
    Tensor<double> p = Tensor<double>::from_data(Shape{1, 1, 1, 3}, {1.0, 2.0, 3.0});
    p.set_requires_grad(true);
    Tensor<double> g = Tensor<double>::from_data(Shape{1, 1, 1, 3}, {0.7, 0.7, 0.7});
    Tensor<double> valid = Tensor<double>::from_data(Shape{1, 1, 1, 3}, {1.0, 0.0, 1.0});
    Graph<double> graph;
    Tensor<double> loss = smooth_l1(p, g, valid);
    graph.backward(loss);
    CHECK(p.grad()[0] != 0.0);
    CHECK(p.grad()[1] == 0.0);
    CHECK(p.grad()[2] != 0.0);
}

TEST_CASE("downsample_gt: valid-aware pooling with value rescaling") {
    // one 2x2 block fully valid, one with a single valid pixel, one empty
    Tensor<float> gt = Tensor<float>::from_data(Shape{1, 1, 2, 6},
                                                {2, 4, 8, 0, 0, 0,
                                                 6, 4, 0, 0, 0, 0});
    Tensor<float> valid = Tensor<float>::from_data(Shape{1, 1, 2, 6},
                                                   {1, 1, 1, 0, 0, 0,
                                                    1, 1, 0, 0, 0, 0});
    auto [g1, v1] = downsample_gt(gt, valid, 1);
    CHECK(g1.shape() == Shape{1, 1, 1, 3});
    CHECK(g1.at(0, 0, 0, 0) == doctest::Approx(2.0f));  // mean 4, rescaled by 1/2
    CHECK(v1.at(0, 0, 0, 0) == 1.0f);
    CHECK(g1.at(0, 0, 0, 1) == doctest::Approx(4.0f));  // single valid pixel 8 -> 4
    CHECK(v1.at(0, 0, 0, 1) == 1.0f);
    CHECK(v1.at(0, 0, 0, 2) == 0.0f);
}

namespace {

std::vector<Tensor<float>> perfect_pyramid(const Tensor<float>& gt, const Tensor<float>& valid) {
    std::vector<Tensor<float>> pyr;
    for (int s = 0; s < 7; ++s) pyr.push_back(downsample_gt(gt, valid, s).first);
    return pyr;
}

}  // namespace

TEST_CASE("supervised_total: zero weights, perfect pyramid, one-hot weight") {
    Rng rng(3);
    Tensor<float> gt = rand_uniform<float>({1, 1, 64, 64}, rng, 1.0f, 8.0f);
    Tensor<float> valid(Shape{1, 1, 64, 64}, 1.0f);
    auto pyr = perfect_pyramid(gt, valid);

    SupervisedLossConfig zero;
    zero.omega = {0, 0, 0, 0, 0, 0, 0};
    CHECK(supervised_total(pyr, gt, valid, zero).item() == 0.0f);

    SupervisedLossConfig uniform;
    uniform.omega = {1, 1, 1, 1, 1, 1, 1};
    CHECK(supervised_total(pyr, gt, valid, uniform).item() == doctest::Approx(0.0f));

    // corrupt the finest map; a one-hot weight at s=0 must equal plain smooth_l1
    auto noisy = pyr;
    noisy[0] = add_scalar(pyr[0], 0.7f);
    SupervisedLossConfig onehot;
    onehot.omega = {1, 0, 0, 0, 0, 0, 0};
    const float via_total = supervised_total(noisy, gt, valid, onehot).item();
    const float direct = smooth_l1(noisy[0], gt, valid).item();
    CHECK(via_total == doctest::Approx(direct));
}

TEST_CASE("supervised_total: invalid pixels are inert") {
    Rng rng(5);
    Tensor<float> gt = rand_uniform<float>({1, 1, 64, 64}, rng, 1.0f, 8.0f);
    Tensor<float> valid(Shape{1, 1, 64, 64}, 1.0f);
    // knock out a block and fill it with garbage in a second copy
    for (index_t y = 8; y < 24; ++y)
        for (index_t x = 8; x < 40; ++x) valid.at(0, 0, y, x) = 0.0f;
    Tensor<float> gt_garbage = gt.clone();
    for (index_t y = 8; y < 24; ++y)
        for (index_t x = 8; x < 40; ++x) gt_garbage.at(0, 0, y, x) = 1e6f;

    auto pyr = perfect_pyramid(gt, valid);
    SupervisedLossConfig cfg;
    const float a = supervised_total(pyr, gt, valid, cfg).item();
    const float b = supervised_total(pyr, gt_garbage, valid, cfg).item();
    CHECK(a == doctest::Approx(b));
}

TEST_CASE("ssim: identical images give exactly 1") {
    Rng rng(7);
    Tensor<float> a = rand_uniform<float>({1, 3, 6, 8}, rng, 0.0f, 1.0f);
    Tensor<float> map = ssim(a, a);
    for (float v : map.data()) CHECK(v == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("ssim: a constant luminance offset scores below 1") {
    Tensor<float> a(Shape{1, 1, 5, 5}, 0.0f);
    Tensor<float> b(Shape{1, 1, 5, 5}, 1.0f);
    Tensor<float> map = ssim(a, b);
    for (float v : map.data()) CHECK(v < 1.0f);
}

TEST_CASE("ssim: matches the windowed formula oracle") {
    Rng rng(11);
    Tensor<double> a = rand_uniform<double>({1, 3, 7, 9}, rng, 0.0, 1.0);
    Tensor<double> b = rand_uniform<double>({1, 3, 7, 9}, rng, 0.0, 1.0);
    CHECK(oracle::max_abs_diff(ssim(a, b), oracle::ssim_ref(a, b)) <= 1e-6);
}

TEST_CASE("photometric: perfect reconstruction scores zero") {
    Rng rng(13);
    Tensor<float> img = rand_uniform<float>({1, 3, 8, 16}, rng, 0.0f, 1.0f);
    Tensor<float> zero_d(Shape{1, 1, 8, 16}, 0.0f);
    UnsupLossConfig cfg;
    CHECK(photometric_loss(img, img, zero_d, 0, cfg).item() == doctest::Approx(0.0f));
}

TEST_CASE("photometric: exact integer compensation is zero away from borders") {
    SynthSpec spec;
    spec.count = 1;
    spec.height = 64;
    spec.width = 128;
    spec.style = DisparityStyle::UniformShift;
    spec.shift = 4.0;
    Rng rng(17);
    const StereoSample s = synth_generate(spec, rng)[0];

    Tensor<float> d(Shape{1, 1, 64, 128}, 4.0f);
    Tensor<float> map = photometric_error_map(s.left, s.right, d, 0.85);
    double interior_max = 0;
    for (index_t y = 0; y < 64; ++y)
        for (index_t x = 6; x < 128; ++x) {
            interior_max = std::max(interior_max,
                                    std::fabs(static_cast<double>(map.at(0, 0, y, x))));
        }
    CHECK(interior_max <= 1e-5);
    // border columns cannot be reconstructed and carry the residual
    double border_max = 0;
    for (index_t y = 0; y < 64; ++y)
        for (index_t x = 0; x < 4; ++x) {
            border_max = std::max(border_max, std::fabs(static_cast<double>(map.at(0, 0, y, x))));
        }
    CHECK(border_max > 1e-4);
}

TEST_CASE("photometric: disparity gradient passes the finite-difference check") {
    Rng rng(19);
    // a constant right-left offset keeps the L1 term away from its kink
    Tensor<double> left = rand_uniform<double>({1, 3, 4, 8}, rng, 0.3, 0.45);
    Tensor<double> right = add_scalar(left, 0.3);
    Tensor<double> d = rand_uniform<double>({1, 1, 4, 8}, rng, 1.3, 1.7);
    UnsupLossConfig cfg;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> f =
        [left, right, cfg](const std::vector<Tensor<double>>& in) {
            return photometric_loss(left, right, in[0], 0, cfg);
        };
    CHECK(grad_check<double>(f, {d}) <= 1e-4);
}

TEST_CASE("smoothness: constant disparity scores zero") {
    Rng rng(23);
    Tensor<float> img = rand_uniform<float>({1, 3, 6, 8}, rng, 0.0f, 1.0f);
    Tensor<float> d(Shape{1, 1, 6, 8}, 3.0f);
    CHECK(smoothness_loss(d, img).item() == 0.0f);
}

TEST_CASE("smoothness: a step edge is penalized, less so on an image edge") {
    const index_t H = 6, W = 8;
    Tensor<float> d(Shape{1, 1, H, W}, 1.0f);
    for (index_t y = 0; y < H; ++y)
        for (index_t x = W / 2; x < W; ++x) d.at(0, 0, y, x) = 5.0f;

    Tensor<float> flat(Shape{1, 3, H, W}, 0.5f);
    const float on_flat = smoothness_loss(d, flat).item();
    CHECK(on_flat > 0.0f);

    Tensor<float> edged = flat.clone();
    for (index_t c = 0; c < 3; ++c)
        for (index_t y = 0; y < H; ++y)
            for (index_t x = W / 2; x < W; ++x) edged.at(0, c, y, x) = 1.0f;
    const float on_edge = smoothness_loss(d, edged).item();
    CHECK(on_edge < on_flat);
}

TEST_CASE("unsupervised_total: decomposition and weight linearity") {
    SynthSpec spec;
    spec.count = 1;
    spec.height = 64;
    spec.width = 64;
    spec.shift = 4.0;
    Rng rng(29);
    const StereoSample s = synth_generate(spec, rng)[0];

    // constant-disparity pyramid: the smoothness term vanishes identically,
    // leaving lambda1 * photometric (border residue only, small)
    std::vector<Tensor<float>> pyr;
    for (int sc = 0; sc < 7; ++sc) {
        pyr.push_back(Tensor<float>(Shape{1, 1, 64 >> sc, 64 >> sc},
                                    4.0f / static_cast<float>(1 << sc)));
    }
    UnsupLossConfig cfg;
    double pe_sum = 0;
    for (int sc = 0; sc < cfg.num_scales; ++sc) {
        pe_sum += photometric_loss(s.left, s.right, pyr[static_cast<std::size_t>(sc)], sc, cfg)
                      .item();
        Tensor<float> left_s = sc == 0 ? s.left
                                       : bilinear_resize(s.left, 64 >> sc, 64 >> sc);
        CHECK(smoothness_loss(pyr[static_cast<std::size_t>(sc)], left_s).item() == 0.0f);
    }
    const double total = unsupervised_total(pyr, s.left, s.right, cfg).item();
    CHECK(total == doctest::Approx(cfg.lambda1 * pe_sum).epsilon(1e-4));

    UnsupLossConfig doubled = cfg;
    doubled.lambda1 = 2 * cfg.lambda1;
    const double total2 = unsupervised_total(pyr, s.left, s.right, doubled).item();
    CHECK(total2 - total == doctest::Approx(cfg.lambda1 * pe_sum).epsilon(1e-4));
}
