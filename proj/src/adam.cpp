#include "esn/adam.hpp"

#include <cmath>

namespace esn {

template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].data().size(), T(0));
            state.v[i].assign(params[i].data().size(), T(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " tensors but got " + std::to_string(params.size()));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T one_minus_b1 = T(1) - b1, one_minus_b2 = T(1) - b2;

    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<T>& p = params[i];
        if (state.m[i].size() != p.data().size()) {
            throw ShapeError("adam_step: parameter " + std::to_string(i) +
                             " changed size since state was created");
        }
        const std::vector<T>* g = p.grad_allocated() ? &p.node()->grad : nullptr;
        std::vector<T>& m = state.m[i];
        std::vector<T>& v = state.v[i];
        std::vector<T>& val = p.data();
        for (std::size_t j = 0; j < val.size(); ++j) {
            const T gj = g ? (*g)[j] : T(0);
            m[j] = b1 * m[j] + one_minus_b1 * gj;
            v[j] = b2 * v[j] + one_minus_b2 * gj * gj;
            const double mhat = static_cast<double>(m[j]) / bc1;
            const double vhat = static_cast<double>(v[j]) / bc2;
            val[j] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
        detail::check_finite_span(val, "adam_step");
    }
}

template void adam_step(const std::vector<Tensor<float>>&, AdamState<float>&, const AdamConfig&);
template void adam_step(const std::vector<Tensor<double>>&, AdamState<double>&, const AdamConfig&);

}  // namespace esn
