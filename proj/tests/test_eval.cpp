#include <doctest.h>

#include "esn/eval.hpp"
#include "esn/random.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace esn;
namespace fs = std::filesystem;

namespace {

Tensor<float> scalar_map(std::initializer_list<float> vals, index_t w) {
    return Tensor<float>::from_data(Shape{1, 1, 1, w}, std::vector<float>(vals));
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("epe: fixtures") {
    Tensor<float> valid(Shape{1, 1, 1, 4}, 1.0f);
    Tensor<float> gt = scalar_map({10, 10, 10, 10}, 4);
    CHECK(epe(gt, gt, valid) == doctest::Approx(0.0));
    CHECK(epe(scalar_map({12, 12, 12, 12}, 4), gt, valid) == doctest::Approx(2.0));
    CHECK(epe(scalar_map({11, 11, 13, 13}, 4), gt, valid) == doctest::Approx(2.0));

    Tensor<float> none(Shape{1, 1, 1, 4}, 0.0f);
    CHECK_THROWS_AS(epe(gt, gt, none), DataError);
}

TEST_CASE("d1_rate: rule fixtures") {
    Tensor<float> one(Shape{1, 1, 1, 1}, 1.0f);
    // |err| = 4 >= 3 px but 4% relative error
    CHECK(d1_rate(scalar_map({104}, 1), scalar_map({100}, 1), one, OutlierRule::PaperOr) == 1.0);
    CHECK(d1_rate(scalar_map({104}, 1), scalar_map({100}, 1), one, OutlierRule::KittiAnd) == 0.0);
    // |err| = 0.6 < 3 px but 6% relative error
    CHECK(d1_rate(scalar_map({10.6f}, 1), scalar_map({10}, 1), one, OutlierRule::PaperOr) == 1.0);
    CHECK(d1_rate(scalar_map({10.6f}, 1), scalar_map({10}, 1), one, OutlierRule::KittiAnd) == 0.0);
    // perfect prediction is never an outlier
    CHECK(d1_rate(scalar_map({10}, 1), scalar_map({10}, 1), one, OutlierRule::PaperOr) == 0.0);
    CHECK(d1_rate(scalar_map({10}, 1), scalar_map({10}, 1), one, OutlierRule::KittiAnd) == 0.0);
    // both thresholds crossed
    CHECK(d1_rate(scalar_map({14}, 1), scalar_map({10}, 1), one, OutlierRule::KittiAnd) == 1.0);
}

TEST_CASE("d1_rate: the OR rule dominates the AND rule on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<float> gt = rand_uniform<float>({1, 1, 4, 8}, rng, 0.5f, 80.0f);
        Tensor<float> noise = randn<float>({1, 1, 4, 8}, rng, 3.0f);
        Tensor<float> pred = gt.clone();
        for (std::size_t i = 0; i < pred.data().size(); ++i) pred.data()[i] += noise.data()[i];
        Tensor<float> valid(Shape{1, 1, 4, 8}, 1.0f);
        CHECK(d1_rate(pred, gt, valid, OutlierRule::PaperOr) >=
              d1_rate(pred, gt, valid, OutlierRule::KittiAnd));
    }
}

TEST_CASE("metrics are permutation invariant over pixels") {
    Rng rng(7);
    Tensor<float> gt = rand_uniform<float>({1, 1, 4, 8}, rng, 1.0f, 50.0f);
    Tensor<float> pred = rand_uniform<float>({1, 1, 4, 8}, rng, 1.0f, 50.0f);
    Tensor<float> valid(Shape{1, 1, 4, 8}, 1.0f);
    for (std::size_t i = 0; i < 8; ++i) valid.data()[i * 3] = 0.0f;

    std::vector<std::size_t> perm(gt.data().size());
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<float> gt_p(gt.shape()), pred_p(pred.shape()), valid_p(valid.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        gt_p.data()[i] = gt.data()[perm[i]];
        pred_p.data()[i] = pred.data()[perm[i]];
        valid_p.data()[i] = valid.data()[perm[i]];
    }
    CHECK(epe(pred_p, gt_p, valid_p) == doctest::Approx(epe(pred, gt, valid)));
    CHECK(d1_rate(pred_p, gt_p, valid_p, OutlierRule::PaperOr) ==
          doctest::Approx(d1_rate(pred, gt, valid, OutlierRule::PaperOr)));
}

TEST_CASE("aggregate EPE is the pixel-count-weighted mean of per-image EPEs") {
    Rng rng(11);
    std::vector<ImageEval> evals;
    double weighted = 0;
    index_t pixels = 0;
    for (int i = 0; i < 3; ++i) {
        const index_t w = 4 + 4 * i;
        Tensor<float> gt = rand_uniform<float>({1, 1, 2, w}, rng, 1.0f, 20.0f);
        Tensor<float> pred = rand_uniform<float>({1, 1, 2, w}, rng, 1.0f, 20.0f);
        Tensor<float> valid(Shape{1, 1, 2, w}, 1.0f);
        valid.data()[0] = 0.0f;
        ImageEval e = evaluate_image("img" + std::to_string(i), pred, gt, valid);
        weighted += e.epe * static_cast<double>(e.valid_pixels);
        pixels += e.valid_pixels;
        evals.push_back(e);
    }
    EvalReport rep = evaluate_set(evals, OutlierRule::PaperOr);
    CHECK(rep.pixel_count == pixels);
    CHECK(rep.epe == doctest::Approx(weighted / static_cast<double>(pixels)));
}

TEST_CASE("export_artifacts: black error map, white mask, deterministic bytes") {
    const fs::path dir = fs::temp_directory_path() / "esn_export_test";
    fs::remove_all(dir);

    Rng rng(13);
    Tensor<float> pred = rand_uniform<float>({1, 1, 8, 8}, rng, 0.0f, 30.0f);
    Tensor<float> gt = pred.clone();
    Tensor<float> ones_mask(Shape{1, 1, 8, 8}, 1.0f);

    export_artifacts(pred, gt, {ones_mask}, dir.string());

    // zero error: every error-map byte decodes from value 0 -> reread as scalar check
    const std::string err_png = (dir / "error.png").string();
    REQUIRE(fs::exists(err_png));
    const std::string first = slurp(err_png);

    // identical inputs, byte-identical files
    export_artifacts(pred, gt, {ones_mask}, dir.string());
    CHECK(slurp(err_png) == first);
    CHECK(slurp((dir / "occlusion_s0.png").string()) ==
          slurp((dir / "occlusion_s0.png").string()));

    // decode-free black/white probes: a PNG of constant 0 differs from constant 255
    Tensor<float> zeros(Shape{1, 1, 8, 8}, 0.0f);
    const fs::path dir2 = fs::temp_directory_path() / "esn_export_test2";
    fs::remove_all(dir2);
    export_artifacts(zeros, zeros, {zeros}, dir2.string());
    // all-zero error (black) written for both, so the two error maps agree
    CHECK(slurp((dir / "error.png").string()) == slurp((dir2 / "error.png").string()));
    // mask 1 (white) differs from mask 0 (black)
    CHECK(slurp((dir / "occlusion_s0.png").string()) !=
          slurp((dir2 / "occlusion_s0.png").string()));

    fs::remove_all(dir);
    fs::remove_all(dir2);
}
