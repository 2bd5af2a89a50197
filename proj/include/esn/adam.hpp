#pragma once

#include "esn/tensor.hpp"

#include <vector>

namespace esn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers plus the shared step counter. Buffers are
// allocated lazily on the first step and keyed by parameter order.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    long long step = 0;
};

// One bias-corrected Adam update over `params`, reading each tensor's grad
// buffer (missing grads count as zero). Parameter order must match the
// state's; shapes are validated every call.
template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg);

extern template void adam_step(const std::vector<Tensor<float>>&, AdamState<float>&, const AdamConfig&);
extern template void adam_step(const std::vector<Tensor<double>>&, AdamState<double>&, const AdamConfig&);

}  // namespace esn
