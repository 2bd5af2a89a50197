#pragma once

#include "esn/tensor.hpp"

#include <string>
#include <vector>

namespace esn {

enum class OutlierRule {
    PaperOr,   // |err| >= 3 px OR |err|/gt >= 5%
    KittiAnd,  // |err| > 3 px AND |err|/gt > 5%
};

OutlierRule outlier_rule_from_string(const std::string& s);

// Mean absolute disparity error over valid pixels. Throws on zero valid
// pixels.
double epe(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& valid);

// Fraction of valid pixels that are outliers under the chosen rule. Pixels
// with zero error are never outliers.
double d1_rate(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& valid,
               OutlierRule rule);

struct ImageEval {
    std::string name;
    double epe = 0;
    double d1_paper_or = 0;
    double d1_kitti_and = 0;
    index_t valid_pixels = 0;
};

struct EvalReport {
    double epe = 0;
    double d1_all = 0;  // under the selected rule
    OutlierRule rule = OutlierRule::PaperOr;
    double d1_paper_or = 0;
    double d1_kitti_and = 0;
    index_t pixel_count = 0;
    std::vector<ImageEval> per_image;
};

EvalReport evaluate_set(const std::vector<ImageEval>& images, OutlierRule rule);
ImageEval evaluate_image(const std::string& name, const Tensor<float>& pred,
                         const Tensor<float>& gt, const Tensor<float>& valid);

void write_report_csv(const std::string& path, const EvalReport& report);
std::string report_summary(const EvalReport& report);

struct ExportOptions {
    double max_disparity = 64.0;  // grayscale scaling for disparity maps
    double max_error = 5.0;       // clipping value for error maps
};

// Writes disparity / error / occlusion visualizations as PNGs with
// deterministic names into out_dir. gt and masks may be undefined / empty.
void export_artifacts(const Tensor<float>& pred, const Tensor<float>& gt,
                      const std::vector<Tensor<float>>& occlusion_masks,
                      const std::string& out_dir, const ExportOptions& opts = {});

}  // namespace esn
