#include "esn/eval.hpp"

#include "esn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace esn {

OutlierRule outlier_rule_from_string(const std::string& s) {
    if (s == "paper_or" || s == "or") return OutlierRule::PaperOr;
    if (s == "kitti_and" || s == "and") return OutlierRule::KittiAnd;
    throw ConfigError("unknown outlier rule '" + s + "' (expected paper_or or kitti_and)");
}

namespace {

struct PixelStats {
    double err_sum = 0;
    index_t count = 0;
    index_t outliers_or = 0;
    index_t outliers_and = 0;
};

PixelStats scan(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& valid) {
    if (!(pred.shape() == gt.shape()) || !(pred.shape() == valid.shape())) {
        throw ShapeError("metrics: pred " + pred.shape().str() + ", gt " + gt.shape().str() +
                         ", valid " + valid.shape().str() + " must match");
    }
    PixelStats st;
    const float* pp = pred.data().data();
    const float* gp = gt.data().data();
    const float* vp = valid.data().data();
    for (std::size_t i = 0; i < pred.data().size(); ++i) {
        if (vp[i] == 0.0f) continue;
        ++st.count;
        const double e = std::fabs(static_cast<double>(pp[i]) - static_cast<double>(gp[i]));
        st.err_sum += e;
        if (e == 0.0) continue;
        const double ratio_threshold = 0.05 * static_cast<double>(gp[i]);
        if (e >= 3.0 || e >= ratio_threshold) ++st.outliers_or;
        if (e > 3.0 && e > ratio_threshold) ++st.outliers_and;
    }
    return st;
}

}  // namespace

double epe(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& valid) {
    const PixelStats st = scan(pred, gt, valid);
    if (st.count == 0) throw DataError("epe: no valid pixels");
    return st.err_sum / static_cast<double>(st.count);
}

double d1_rate(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& valid,
               OutlierRule rule) {
    const PixelStats st = scan(pred, gt, valid);
    if (st.count == 0) throw DataError("d1_rate: no valid pixels");
    const index_t out = rule == OutlierRule::PaperOr ? st.outliers_or : st.outliers_and;
    return static_cast<double>(out) / static_cast<double>(st.count);
}

ImageEval evaluate_image(const std::string& name, const Tensor<float>& pred,
                         const Tensor<float>& gt, const Tensor<float>& valid) {
    const PixelStats st = scan(pred, gt, valid);
    if (st.count == 0) throw DataError("evaluate_image: no valid pixels in '" + name + "'");
    ImageEval e;
    e.name = name;
    e.valid_pixels = st.count;
    e.epe = st.err_sum / static_cast<double>(st.count);
    e.d1_paper_or = static_cast<double>(st.outliers_or) / static_cast<double>(st.count);
    e.d1_kitti_and = static_cast<double>(st.outliers_and) / static_cast<double>(st.count);
    return e;
}

EvalReport evaluate_set(const std::vector<ImageEval>& images, OutlierRule rule) {
    EvalReport r;
    r.rule = rule;
    r.per_image = images;
    double err = 0, out_or = 0, out_and = 0;
    for (const ImageEval& e : images) {
        const double n = static_cast<double>(e.valid_pixels);
        err += e.epe * n;
        out_or += e.d1_paper_or * n;
        out_and += e.d1_kitti_and * n;
        r.pixel_count += e.valid_pixels;
    }
    if (r.pixel_count == 0) throw DataError("evaluate_set: no valid pixels");
    const double total = static_cast<double>(r.pixel_count);
    r.epe = err / total;
    r.d1_paper_or = out_or / total;
    r.d1_kitti_and = out_and / total;
    r.d1_all = rule == OutlierRule::PaperOr ? r.d1_paper_or : r.d1_kitti_and;
    return r;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("report: cannot open '" + path + "'");
    out << "image,valid_pixels,epe,d1_paper_or,d1_kitti_and\n";
    char line[256];
    for (const ImageEval& e : report.per_image) {
        std::snprintf(line, sizeof(line), "%s,%lld,%.6f,%.6f,%.6f\n", e.name.c_str(),
                      static_cast<long long>(e.valid_pixels), e.epe, e.d1_paper_or, e.d1_kitti_and);
        out << line;
    }
    std::snprintf(line, sizeof(line), "TOTAL,%lld,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(report.pixel_count), report.epe, report.d1_paper_or,
                  report.d1_kitti_and);
    out << line;
}

std::string report_summary(const EvalReport& report) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line),
                  "images: %zu  valid pixels: %lld\n"
                  "EPE: %.4f px\n"
                  "D1 (>=3px or >=5%%):  %.4f\n"
                  "D1 (>3px and >5%%):   %.4f\n",
                  report.per_image.size(), static_cast<long long>(report.pixel_count), report.epe,
                  report.d1_paper_or, report.d1_kitti_and);
    os << line;
    return os.str();
}

// ---------------------------------------------------------------------------
// visual exports
// ---------------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Piecewise-linear blue->cyan->green->yellow->red map.
void colormap(double v, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
    v = std::clamp(v, 0.0, 1.0);
    const double r4 = std::clamp(1.5 - std::fabs(4.0 * v - 3.0), 0.0, 1.0);
    const double g4 = std::clamp(1.5 - std::fabs(4.0 * v - 2.0), 0.0, 1.0);
    const double b4 = std::clamp(1.5 - std::fabs(4.0 * v - 1.0), 0.0, 1.0);
    r = to_byte(r4);
    g = to_byte(g4);
    b = to_byte(b4);
}

void dump_gray(const std::string& path, const Tensor<float>& map, double scale) {
    const Shape s = map.shape();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(s.h * s.w));
    for (index_t i = 0; i < s.h * s.w; ++i) {
        px[static_cast<std::size_t>(i)] =
            to_byte(static_cast<double>(map.data()[static_cast<std::size_t>(i)]) / scale);
    }
    write_png_gray8(path, px, s.h, s.w);
}

void dump_color(const std::string& path, const Tensor<float>& map, double scale) {
    const Shape s = map.shape();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(s.h * s.w * 3));
    for (index_t i = 0; i < s.h * s.w; ++i) {
        std::uint8_t r, g, b;
        colormap(static_cast<double>(map.data()[static_cast<std::size_t>(i)]) / scale, r, g, b);
        px[static_cast<std::size_t>(i * 3 + 0)] = r;
        px[static_cast<std::size_t>(i * 3 + 1)] = g;
        px[static_cast<std::size_t>(i * 3 + 2)] = b;
    }
    write_png_rgb8(path, px, s.h, s.w);
}

}  // namespace

void export_artifacts(const Tensor<float>& pred, const Tensor<float>& gt,
                      const std::vector<Tensor<float>>& occlusion_masks,
                      const std::string& out_dir, const ExportOptions& opts) {
    std::filesystem::create_directories(out_dir);
    if (pred.defined()) {
        dump_gray(out_dir + "/disparity.png", pred, opts.max_disparity);
        dump_color(out_dir + "/disparity_color.png", pred, opts.max_disparity);
    }
    if (gt.defined()) {
        dump_gray(out_dir + "/gt.png", gt, opts.max_disparity);
        Tensor<float> err(pred.shape());
        for (std::size_t i = 0; i < err.data().size(); ++i) {
            err.data()[i] = std::min(static_cast<float>(opts.max_error),
                                     std::fabs(pred.data()[i] - gt.data()[i]));
        }
        dump_gray(out_dir + "/error.png", err, opts.max_error);
        dump_color(out_dir + "/error_color.png", err, opts.max_error);
    }
    for (std::size_t i = 0; i < occlusion_masks.size(); ++i) {
        if (!occlusion_masks[i].defined()) continue;
        dump_gray(out_dir + "/occlusion_s" + std::to_string(i) + ".png", occlusion_masks[i], 1.0);
    }
}

}  // namespace esn
