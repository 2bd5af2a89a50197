#pragma once

#include "esn/matching.hpp"
#include "esn/random.hpp"
#include "esn/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace esn {

// Known occluded region of a synthetic occlusion-style sample, in left-image
// pixel coordinates.
struct OcclusionBand {
    index_t x0 = 0, x1 = 0;  // [x0, x1)
    index_t y0 = 0, y1 = 0;
};

struct StereoSample {
    Tensor<float> left;   // (1,3,H,W), values in [0,1] pre-normalization
    Tensor<float> right;  // same shape
    Tensor<float> gt_disparity;  // (1,1,H,W) in pixels; undefined when absent
    Tensor<float> valid_mask;    // (1,1,H,W) in {0,1}; undefined when absent
    std::optional<CameraRig> rig;
    std::optional<OcclusionBand> occluded_band;
    std::string source_tag;

    bool has_gt() const { return gt_disparity.defined(); }
    const Tensor<float>& gt() const {
        if (!gt_disparity.defined()) throw DataError("sample has no ground-truth disparity");
        return gt_disparity;
    }
    // Copy with ground truth stripped, for stages that must not see it.
    StereoSample without_gt() const {
        StereoSample s = *this;
        s.gt_disparity = Tensor<float>();
        s.valid_mask = Tensor<float>();
        return s;
    }
    void validate() const;
};

// ImageNet channel statistics.
Tensor<float> normalize(const Tensor<float>& image);
Tensor<float> denormalize(const Tensor<float>& image);

// Identical crop window across left, right, ground truth, and mask; the crop
// is purely positional, disparities are not rescaled.
StereoSample random_crop(const StereoSample& sample, index_t crop_h, index_t crop_w, Rng& rng);

// Center crop down to the nearest multiple of `divisor` in both dimensions,
// so full-size images can run through the network.
StereoSample crop_to_divisible(const StereoSample& sample, index_t divisor);

enum class DisparityStyle { UniformShift, TwoLayerOcclusion, SmoothRamp };

struct SynthSpec {
    int count = 4;
    index_t height = 64;
    index_t width = 128;
    DisparityStyle style = DisparityStyle::UniformShift;
    // UniformShift: every sample uses this disparity (pixels)
    double shift = 4.0;
    // TwoLayerOcclusion: background / foreground disparities
    double background_disparity = 3.0;
    double foreground_disparity = 8.0;
    // SmoothRamp: disparity runs linearly from ramp_min (top row) to
    // ramp_max (bottom row)
    double ramp_min = 2.0;
    double ramp_max = 6.0;
    // Band-limited texture: number of random cosine waves and the maximum
    // spatial frequency in cycles per pixel
    int texture_waves = 24;
    double texture_max_freq = 0.15;
    // Quantize wave frequencies to whole cycles across the width so the
    // texture tiles horizontally
    bool periodic_x = false;
};

// Deterministic synthetic stereo pairs: the right view resamples the same
// band-limited texture the left view shows, displaced by the known disparity
// field, so the ground truth is exact by construction.
std::vector<StereoSample> synth_generate(const SynthSpec& spec, Rng& rng);

// Directory layout: NNNNNN_left.ppm / _right.ppm / _disp.pfm (+ _meta.txt).
void save_dataset(const std::string& dir, const std::vector<StereoSample>& samples);
std::vector<StereoSample> load_dataset(const std::string& dir);

// Concatenate single-sample tensors along the batch axis.
Tensor<float> stack_batch(const std::vector<Tensor<float>>& parts);

}  // namespace esn
