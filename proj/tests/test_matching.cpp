#include <doctest.h>

#include "esn/matching.hpp"
#include "esn/ops.hpp"
#include "esn/random.hpp"

#include "oracles.hpp"

#include <cmath>

using namespace esn;

namespace {

index_t argmax_channel(const Tensor<float>& scores, index_t b, index_t y, index_t x) {
    const index_t D = scores.shape().c;
    index_t best = 0;
    float best_v = scores.at(b, 0, y, x);
    for (index_t i = 1; i < D; ++i) {
        if (scores.at(b, i, y, x) > best_v) {
            best_v = scores.at(b, i, y, x);
            best = i;
        }
    }
    return best;
}

// Unit-normalize the channel vector at each pixel: the self-score becomes
// constant, so the zero offset strictly dominates (Cauchy-Schwarz).
void normalize_pixels(Tensor<float>& f) {
    const Shape s = f.shape();
    for (index_t b = 0; b < s.b; ++b)
        for (index_t y = 0; y < s.h; ++y)
            for (index_t x = 0; x < s.w; ++x) {
                double norm = 0;
                for (index_t c = 0; c < s.c; ++c) norm += f.at(b, c, y, x) * f.at(b, c, y, x);
                const float inv = static_cast<float>(1.0 / std::sqrt(norm + 1e-12));
                for (index_t c = 0; c < s.c; ++c) f.at(b, c, y, x) *= inv;
            }
}

// Rectified pair with exact integer displacement: both views crop the same
// normalized wide strip, the right view shifted +shift columns.
std::pair<Tensor<float>, Tensor<float>> shifted_pair(index_t c, index_t h, index_t w,
                                                     index_t shift, Rng& rng) {
    Tensor<float> wide = randn<float>({1, c, h, w + shift}, rng);
    normalize_pixels(wide);
    Tensor<float> fl(Shape{1, c, h, w}), fr(Shape{1, c, h, w});
    for (index_t cc = 0; cc < c; ++cc)
        for (index_t y = 0; y < h; ++y)
            for (index_t x = 0; x < w; ++x) {
                fl.at(0, cc, y, x) = wide.at(0, cc, y, x);
                fr.at(0, cc, y, x) = wide.at(0, cc, y, x + shift);
            }
    return {fl, fr};
}

}  // namespace

TEST_CASE("correlate: normalized self-product of ones is 1 everywhere") {
    Tensor<float> f(Shape{1, 4, 3, 5}, 1.0f);
    CostVolume<float> cv = correlate(f, f, {0});
    for (float v : cv.scores.data()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("correlate: 40 candidates at scale 3 cover 320 full-resolution pixels") {
    Rng rng(5);
    Tensor<float> fl = randn<float>({2, 8, 8, 16}, rng);  // s=3 features for 64x128 input
    Tensor<float> fr = randn<float>({2, 8, 8, 16}, rng);
    std::vector<int> offsets(40);
    for (int i = 0; i < 40; ++i) offsets[i] = i;
    CostVolume<float> cv = correlate(fl, fr, offsets);
    CHECK(cv.scores.shape() == Shape{2, 40, 8, 16});
    CHECK(static_cast<int>(cv.offsets.size()) * 8 == 320);
}

TEST_CASE("correlate: matches the nested-loop oracle on random inputs") {
    Rng rng(9);
    std::uniform_int_distribution<index_t> db(1, 2), dc(1, 8), dh(2, 16), dw(4, 16);
    for (int trial = 0; trial < 25; ++trial) {
        Shape s{db(rng), dc(rng), dh(rng), dw(rng)};
        Tensor<float> fl = randn<float>(s, rng);
        Tensor<float> fr = randn<float>(s, rng);
        std::vector<int> offs = {0, 1, 2, 3, -1};
        Tensor<float> got = correlate(fl, fr, offs).scores;
        Tensor<float> want = oracle::correlate_ref(fl, fr, offs);
        CHECK(oracle::max_abs_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("correlate: rejects empty offsets and mismatched shapes") {
    Tensor<float> a(Shape{1, 2, 3, 4});
    CHECK_THROWS_AS(correlate(a, a, {}), ShapeError);
    Tensor<float> b(Shape{1, 3, 3, 4});
    CHECK_THROWS_AS(correlate(a, b, {0}), ShapeError);
}

TEST_CASE("warp: zero disparity is the exact identity") {
    Rng rng(13);
    Tensor<float> f = randn<float>({1, 3, 4, 8}, rng);
    Tensor<float> zero(Shape{1, 1, 4, 8}, 0.0f);
    CHECK(oracle::max_abs_diff(warp_by_disparity(f, zero), f) == 0.0);
}

TEST_CASE("warp: integer shift on a ramp, with border clamp") {
    Tensor<float> ramp = Tensor<float>::from_data(Shape{1, 1, 1, 8},
                                                  {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor<float> one(Shape{1, 1, 1, 8}, 1.0f);
    Tensor<float> warped = warp_by_disparity(ramp, one);
    CHECK(warped.data()[0] == doctest::Approx(0.0f));  // clamped at x=0
    for (index_t x = 1; x < 8; ++x) {
        CHECK(warped.data()[static_cast<std::size_t>(x)] ==
              doctest::Approx(ramp.data()[static_cast<std::size_t>(x - 1)]));
    }
}

TEST_CASE("warp: half-pixel disparity averages horizontal neighbors") {
    Rng rng(17);
    Tensor<float> f = randn<float>({1, 2, 3, 8}, rng);
    Tensor<float> half(Shape{1, 1, 3, 8}, 0.5f);
    Tensor<float> got = warp_by_disparity(f, half);
    Tensor<float> want = oracle::warp_ref(f, half);
    CHECK(oracle::max_abs_diff(got, want) <= 1e-6);
    // interior pixels are exactly the neighbor average
    for (index_t c = 0; c < 2; ++c)
        for (index_t y = 0; y < 3; ++y)
            for (index_t x = 1; x < 8; ++x) {
                CHECK(got.at(0, c, y, x) ==
                      doctest::Approx(0.5f * (f.at(0, c, y, x) + f.at(0, c, y, x - 1))));
            }
}

TEST_CASE("warp: composing constant integer warps equals the summed warp") {
    Rng rng(19);
    Tensor<float> f = randn<float>({1, 2, 4, 16}, rng);
    Tensor<float> d1(Shape{1, 1, 4, 16}, 2.0f);
    Tensor<float> d2(Shape{1, 1, 4, 16}, 3.0f);
    Tensor<float> d12(Shape{1, 1, 4, 16}, 5.0f);
    Tensor<float> two_step = warp_by_disparity(warp_by_disparity(f, d1), d2);
    Tensor<float> one_step = warp_by_disparity(f, d12);
    // away from the clamped left border
    for (index_t c = 0; c < 2; ++c)
        for (index_t y = 0; y < 4; ++y)
            for (index_t x = 5; x < 16; ++x) {
                CHECK(std::fabs(two_step.at(0, c, y, x) - one_step.at(0, c, y, x)) <= 1e-6f);
            }
}

TEST_CASE("warp: executions are counted for topology assertions") {
    reset_warp_op_count();
    Tensor<float> f(Shape{1, 1, 2, 4}, 1.0f);
    Tensor<float> d(Shape{1, 1, 2, 4}, 0.0f);
    warp_by_disparity(f, d);
    warp_by_disparity(f, d);
    CHECK(warp_op_count() == 2);
}

TEST_CASE("fmm: zero residual peaks at offset 0 for a self-match") {
    Rng rng(23);
    Tensor<float> f = randn<float>({1, 6, 8, 16}, rng);
    normalize_pixels(f);
    Tensor<float> d0(Shape{1, 1, 4, 8}, 0.0f);
    CostVolume<float> cv = fmm(f, f, d0);
    CHECK(cv.scores.shape().c == 5);
    for (index_t y = 1; y < 7; ++y)
        for (index_t x = 3; x < 13; ++x) {
            CHECK(argmax_channel(cv.scores, 0, y, x) == 2);  // offset 0 sits at index 2
        }
}

TEST_CASE("fmm: coarse estimate at half scale compensates a 4 px shift") {
    Rng rng(29);
    // right view's content sits 4 px to the right in texture space, i.e.
    // disparity +4 under the x - d convention
    auto [fl, fr] = shifted_pair(6, 8, 32, 4, rng);
    Tensor<float> d_coarse(Shape{1, 1, 4, 16}, 2.0f);
    CostVolume<float> cv = fmm(fl, fr, d_coarse);
    REQUIRE(cv.scores.shape().c == 5);
    index_t hits = 0, total = 0;
    for (index_t y = 0; y < 8; ++y)
        for (index_t x = 6; x < 26; ++x) {
            ++total;
            if (argmax_channel(cv.scores, 0, y, x) == 2) ++hits;
        }
    CHECK(static_cast<double>(hits) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("fmm: output channel count tracks the offsets, 5 by default") {
    Rng rng(31);
    Tensor<float> f = randn<float>({1, 3, 4, 32}, rng);
    Tensor<float> d(Shape{1, 1, 2, 16}, 0.0f);
    CHECK(fmm(f, f, d).scores.shape().c == 5);
}

namespace {

MaskFmmParams<float> random_mask_params(int scale, index_t c2, index_t cs, index_t ctx_c,
                                        Rng& rng) {
    MaskFmmParams<float> p;
    if (scale != 2) {
        p.transform_left_w = randn<float>({cs, c2, 1, 1}, rng, 0.4f);
        p.transform_left_b = randn<float>({1, cs, 1, 1}, rng, 0.1f);
        p.transform_right_w = randn<float>({cs, c2, 1, 1}, rng, 0.4f);
        p.transform_right_b = randn<float>({1, cs, 1, 1}, rng, 0.1f);
    }
    p.theta_w = randn<float>({1, ctx_c, 3, 3}, rng, 0.4f);
    p.theta_b = randn<float>({1, 1, 1, 1}, rng, 0.1f);
    p.mu_w = randn<float>({cs, ctx_c, 3, 3}, rng, 0.4f);
    p.mu_b = randn<float>({1, cs, 1, 1}, rng, 0.1f);
    return p;
}

}  // namespace

TEST_CASE("mask_fmm: forcing theta=1, mu=0 reduces it to plain fmm bit-for-bit") {
    Rng rng(37);
    Tensor<float> fl2 = randn<float>({1, 4, 8, 12}, rng);
    Tensor<float> fr2 = randn<float>({1, 4, 8, 12}, rng);
    Tensor<float> ctx = randn<float>({1, 3, 4, 6}, rng);
    Tensor<float> d = rand_uniform<float>({1, 1, 4, 6}, rng, 0.0f, 2.0f);

    SUBCASE("scale 2, identity feature transform") {
        MaskFmmParams<float> p = random_mask_params(2, 4, 4, 3, rng);
        MaskFmmOptions opts;
        opts.force_theta_one = true;
        opts.force_mu_zero = true;
        MaskFmmResult<float> m = mask_fmm(fl2, fr2, d, ctx, 2, p, opts);
        CostVolume<float> plain = fmm(fl2, fr2, d);
        REQUIRE(m.cost.scores.shape() == plain.scores.shape());
        for (std::size_t i = 0; i < plain.scores.data().size(); ++i) {
            CHECK(m.cost.scores.data()[i] == plain.scores.data()[i]);
        }
    }
    SUBCASE("scale 1, comparing against fmm on the transformed features") {
        Tensor<float> d1 = rand_uniform<float>({1, 1, 8, 12}, rng, 0.0f, 2.0f);
        Tensor<float> ctx1 = randn<float>({1, 3, 8, 12}, rng);
        MaskFmmParams<float> p = random_mask_params(1, 4, 6, 3, rng);
        MaskFmmOptions opts;
        opts.force_theta_one = true;
        opts.force_mu_zero = true;
        MaskFmmResult<float> m = mask_fmm(fl2, fr2, d1, ctx1, 1, p, opts);
        CostVolume<float> plain = fmm(m.left_feature, m.right_feature, d1);
        for (std::size_t i = 0; i < plain.scores.data().size(); ++i) {
            CHECK(m.cost.scores.data()[i] == plain.scores.data()[i]);
        }
    }
}

TEST_CASE("mask_fmm: theta=0 leaves only the trade-off feature") {
    Rng rng(41);
    Tensor<float> fl2 = randn<float>({1, 4, 8, 12}, rng);
    Tensor<float> fr2 = randn<float>({1, 4, 8, 12}, rng);
    Tensor<float> ctx = randn<float>({1, 3, 4, 6}, rng);
    Tensor<float> d = rand_uniform<float>({1, 1, 4, 6}, rng, 0.0f, 2.0f);
    MaskFmmParams<float> p = random_mask_params(2, 4, 4, 3, rng);
    // force theta to zero by saturating the sigmoid
    p.theta_w = Tensor<float>(Shape{1, 3, 3, 3}, 0.0f);
    p.theta_b = Tensor<float>(Shape{1, 1, 1, 1}, -100.0f);
    MaskFmmResult<float> m = mask_fmm(fl2, fr2, d, ctx, 2, p);
    CHECK(oracle::max_abs_diff(m.modulated, m.mu) <= 1e-7);
}

TEST_CASE("mask_fmm: theta stays inside [0,1] for arbitrary context") {
    Rng rng(43);
    Tensor<float> fl2 = randn<float>({1, 4, 8, 12}, rng);
    Tensor<float> fr2 = randn<float>({1, 4, 8, 12}, rng);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<float> ctx = randn<float>({1, 3, 4, 6}, rng, 10.0f);
        Tensor<float> d = rand_uniform<float>({1, 1, 4, 6}, rng, 0.0f, 2.0f);
        MaskFmmParams<float> p = random_mask_params(2, 4, 4, 3, rng);
        MaskFmmResult<float> m = mask_fmm(fl2, fr2, d, ctx, 2, p);
        for (float v : m.theta.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("mask_fmm: rejects scales outside 0..2") {
    Tensor<float> f(Shape{1, 2, 4, 4});
    Tensor<float> d(Shape{1, 1, 2, 2});
    Tensor<float> ctx(Shape{1, 2, 2, 2});
    MaskFmmParams<float> p;
    CHECK_THROWS_AS(mask_fmm(f, f, d, ctx, 3, p), ShapeError);
}

TEST_CASE("disparity_to_depth: fixtures, sentinel, and round trip") {
    CameraRig rig{720.0, 0.54};
    Tensor<float> d = Tensor<float>::from_data(Shape{1, 1, 1, 3}, {38.88f, 0.0f, 10.0f});
    Tensor<float> z = disparity_to_depth(d, rig);
    CHECK(z.data()[0] == doctest::Approx(10.0).epsilon(1e-4));
    CHECK(z.data()[1] == doctest::Approx(-1.0));  // invalid sentinel
    CHECK(z.data()[2] == doctest::Approx(38.88).epsilon(1e-4));

    Rng rng(47);
    Tensor<float> disp = rand_uniform<float>({1, 1, 4, 4}, rng, 1.0f, 60.0f);
    Tensor<float> depth = disparity_to_depth(disp, rig);
    Tensor<float> back = disparity_to_depth(depth, rig);  // z = fb/d is an involution
    for (std::size_t i = 0; i < disp.data().size(); ++i) {
        CHECK(back.data()[i] ==
              doctest::Approx(disp.data()[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(disparity_to_depth(disp, CameraRig{0.0, 1.0}), ConfigError);
}
