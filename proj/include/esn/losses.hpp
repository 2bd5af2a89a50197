#pragma once

#include "esn/tensor.hpp"

#include <array>
#include <utility>
#include <vector>

namespace esn {

struct SupervisedLossConfig {
    // Per-scale weights for scales 0..6, finest first.
    std::array<double, 7> omega{1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05};
};

struct UnsupLossConfig {
    double lambda1 = 5.0;   // photometric weight
    double lambda2 = 0.1;   // smoothness weight
    double alpha = 0.85;    // SSIM vs L1 mix inside the photometric term
    int num_scales = 4;
    // Compare the warped right image against the full-resolution left image
    // instead of the per-scale downsampled one.
    bool full_res_compare = false;
};

// Mean over valid pixels of the smooth-L1 penalty on pred - gt. valid is a
// 0/1 mask of the same shape; gradient reaches pred only where valid. Zero
// valid pixels yields 0 and sets *zero_valid_warning when provided.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid,
                    bool* zero_valid_warning = nullptr);

// Valid-aware 2^s x 2^s average pooling of a full-resolution disparity map,
// with values rescaled by 1/2^s into the coarse scale's pixel units. Returns
// the pooled map and its validity mask (a block is valid if any source pixel
// was).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> downsample_gt(const Tensor<T>& gt_full,
                                              const Tensor<T>& valid_full, int scale);

// Weighted sum over scales of smooth_l1 against the downsampled ground truth.
template <typename T>
Tensor<T> supervised_total(const std::vector<Tensor<T>>& pyramid, const Tensor<T>& gt_full,
                           const Tensor<T>& valid_full, const SupervisedLossConfig& cfg);

// Per-pixel, per-channel SSIM map with 3x3 count-normalized mean windows and
// constants C1 = 0.01^2, C2 = 0.03^2. Inputs are expected in [0, 1]; values
// outside only trigger a one-time warning.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b);

// Photometric reconstruction error per pixel: reconstruct the left view by
// warping the right view with the disparity, then mix SSIM and L1 terms with
// weight alpha. All inputs at the same (single) scale.
template <typename T>
Tensor<T> photometric_error_map(const Tensor<T>& left, const Tensor<T>& right,
                                const Tensor<T>& disparity, double alpha);

// Scalar photometric loss for pyramid scale `scale_s`, taking the
// full-resolution image pair and handling the downsampling internally.
template <typename T>
Tensor<T> photometric_loss(const Tensor<T>& left_full, const Tensor<T>& right_full,
                           const Tensor<T>& disparity_s, int scale_s, const UnsupLossConfig& cfg);

// Edge-aware smoothness: mean of |dx d| e^{-|dx I|} + |dy d| e^{-|dy I|},
// image gradients channel-averaged before the exponent.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& disparity_s, const Tensor<T>& left_s);

// Sum over scales 0..num_scales-1 of lambda1 * photometric + lambda2 *
// smoothness.
template <typename T>
Tensor<T> unsupervised_total(const std::vector<Tensor<T>>& pyramid, const Tensor<T>& left_full,
                             const Tensor<T>& right_full, const UnsupLossConfig& cfg);

extern template Tensor<float> smooth_l1(const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, bool*);
extern template Tensor<float> ssim(const Tensor<float>&, const Tensor<float>&);

}  // namespace esn
