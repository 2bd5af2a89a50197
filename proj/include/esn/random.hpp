#pragma once

#include "esn/tensor.hpp"

#include <random>

namespace esn {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> randn(Shape s, Rng& rng, T stddev = T(1), T mean = T(0)) {
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    Tensor<T> t(s);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> rand_uniform(Shape s, Rng& rng, T lo = T(0), T hi = T(1)) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    Tensor<T> t(s);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace esn
