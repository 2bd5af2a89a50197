#pragma once

#include "esn/tensor.hpp"

#include <vector>

namespace esn {

// 2-d convolution. weight (C_out, C_in, k, k), square kernel, bias either
// undefined or (1, C_out, 1, 1). Output spatial size floor((H+2p-k)/s)+1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding);

// Transposed convolution. weight (C_in, C_out, k, k), stride 1 or 2.
// Output spatial size (H-1)*s - 2p + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int padding);

// Bilinear interpolation, half-pixel-center convention with border clamping
// (source coordinate (i+0.5)*in/out - 0.5). With disparity=true the values
// are rescaled by out_w/in_w so a disparity map stays in output-pixel units.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, index_t out_h, index_t out_w,
                          bool disparity = false);

// Binary elementwise ops. b may share a's shape, be a scalar (1,1,1,1), or be
// a single-channel (B,1,H,W) map broadcast across a's channels.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);

template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope = T(0.1));

template <typename T> Tensor<T> sum_all(const Tensor<T>& a);   // -> (1,1,1,1)
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);  // -> (1,1,1,1)
template <typename T> Tensor<T> channel_mean(const Tensor<T>& a);  // (B,C,H,W) -> (B,1,H,W)

template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_channels(const Tensor<T>& a, index_t c_begin, index_t c_end);

// Forward differences along x / y; the last column / row is zero.
template <typename T> Tensor<T> diff_x(const Tensor<T>& a);
template <typename T> Tensor<T> diff_y(const Tensor<T>& a);

// 3x3 mean filter normalized by the number of in-bounds taps, so constants
// are preserved at borders.
template <typename T> Tensor<T> box_mean3x3(const Tensor<T>& a);

extern template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, int, int);
extern template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, int, int);

}  // namespace esn
