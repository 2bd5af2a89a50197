#pragma once

#include "esn/tensor.hpp"

#include <functional>
#include <vector>

namespace esn {

struct GradCheckOptions {
    double epsilon = 1e-3;
    // Cap on perturbed coordinates per input tensor; <=0 sweeps all of them.
    // Sampled coordinates are chosen deterministically from `seed`.
    index_t max_coords_per_input = 0;
    unsigned long long seed = 7;
};

// Compares reverse-mode gradients of f against central finite differences.
// f may return any tensor; it is reduced to a scalar through a fixed random
// projection so sign errors cannot cancel. Returns the max over coordinates
// of |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T>
double grad_check(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, const GradCheckOptions& opts = {});

// Single-input convenience form.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  double epsilon = 1e-3);

extern template double grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>&,
                                  std::vector<Tensor<double>>, const GradCheckOptions&);

}  // namespace esn
