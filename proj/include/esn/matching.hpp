#pragma once

#include "esn/tensor.hpp"

#include <vector>

namespace esn {

// Per-pixel matching scores over a set of candidate disparities. Channel i
// holds the channel-normalized dot product between the left feature at
// (x, y) and the right feature at (x - offsets[i], y); out-of-range samples
// score zero.
template <typename T>
struct CostVolume {
    Tensor<T> scores;          // (B, D, H, W)
    std::vector<int> offsets;  // length D
};

struct CameraRig {
    double focal_length_px = 0;
    double baseline_m = 0;

    void validate() const {
        if (focal_length_px <= 0 || baseline_m <= 0) {
            throw ConfigError("camera rig: focal length and baseline must be positive");
        }
    }
};

template <typename T>
CostVolume<T> correlate(const Tensor<T>& f_left, const Tensor<T>& f_right,
                        const std::vector<int>& offsets);

// Samples f at horizontal coordinate x - disparity(x, y) with 1-d bilinear
// interpolation and border clamping. Positive disparity means the matching
// right-view pixel sits that many pixels to the left, so zero disparity is
// the identity warp. Differentiable in both the features and the disparity.
template <typename T>
Tensor<T> warp_by_disparity(const Tensor<T>& f, const Tensor<T>& disparity);

// Running count of executed warps, for topology assertions.
long long warp_op_count();
void reset_warp_op_count();

// Feature matching at one pyramid scale: upsample the coarse disparity x2
// (rescaling values into this scale's pixel units), warp the right features
// by it, correlate against the left features over `offsets`.
template <typename T>
CostVolume<T> fmm(const Tensor<T>& f_left, const Tensor<T>& f_right, const Tensor<T>& d_coarse,
                  const std::vector<int>& offsets = {-2, -1, 0, 1, 2});

// Learned heads for the occlusion-aware variant, one set per scale.
// transform_* are 1x1 convolutions applied after upsampling the scale-2
// features (undefined at scale 2, where the features pass through as-is);
// theta_/mu_ are 3x3 convolutions over the coarse decoder context.
template <typename T>
struct MaskFmmParams {
    Tensor<T> transform_left_w, transform_left_b;
    Tensor<T> transform_right_w, transform_right_b;
    Tensor<T> theta_w, theta_b;
    Tensor<T> mu_w, mu_b;
};

struct MaskFmmOptions {
    std::vector<int> offsets = {-2, -1, 0, 1, 2};
    // Test hooks: bypass the mask multiply / trade-off add, which is exactly
    // theta == 1 / mu == 0.
    bool force_theta_one = false;
    bool force_mu_zero = false;
};

template <typename T>
struct MaskFmmResult {
    CostVolume<T> cost;
    Tensor<T> theta;        // (B, 1, H_s, W_s), in [0, 1]
    Tensor<T> mu;           // (B, C, H_s, W_s)
    Tensor<T> modulated;    // warped * theta + mu
    Tensor<T> left_feature;   // transformed left features at scale_s
    Tensor<T> right_feature;  // transformed right features at scale_s (pre-warp)
};

// Occlusion-aware feature matching. Takes the scale-2 feature maps, the
// scale-(s+1) disparity estimate and decoder context, and produces the
// residual cost volume at scale_s in {0, 1, 2} along with the mask and
// trade-off tensors. The mask is trained only through this pathway.
template <typename T>
MaskFmmResult<T> mask_fmm(const Tensor<T>& f_left_2, const Tensor<T>& f_right_2,
                          const Tensor<T>& d_coarse, const Tensor<T>& ctx_coarse, int scale_s,
                          const MaskFmmParams<T>& params, const MaskFmmOptions& opts = {});

// depth = focal_length_px * baseline_m / disparity. Disparities at or below
// `min_disparity` map to `sentinel` instead of exploding.
template <typename T>
Tensor<T> disparity_to_depth(const Tensor<T>& disparity, const CameraRig& rig,
                             T min_disparity = T(1e-3), T sentinel = T(-1));

extern template CostVolume<float> correlate(const Tensor<float>&, const Tensor<float>&,
                                            const std::vector<int>&);
extern template Tensor<float> warp_by_disparity(const Tensor<float>&, const Tensor<float>&);

}  // namespace esn
