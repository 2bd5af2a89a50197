#include "esn/gradcheck.hpp"

#include "esn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace esn {

namespace {

// Fixed projection so the scalarized objective exercises every output
// coordinate with a distinct weight.
template <typename T>
Tensor<T> projection_like(const Tensor<T>& y, unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.25, 1.75);
    Tensor<T> r(y.shape());
    for (T& v : r.data()) v = static_cast<T>(dist(rng) * (rng() % 2 == 0 ? 1.0 : -1.0));
    return r;
}

template <typename T>
double projected_value(const Tensor<T>& y, const Tensor<T>& r) {
    const auto& yv = y.data();
    const auto& rv = r.data();
    double acc = 0;
    for (std::size_t i = 0; i < yv.size(); ++i)
        acc += static_cast<double>(yv[i]) * static_cast<double>(rv[i]);
    return acc;
}

}  // namespace

template <typename T>
double grad_check(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, const GradCheckOptions& opts) {
    for (auto& in : inputs) in.set_requires_grad(true);

    Tensor<T> projection;
    {
        Graph<T> graph;
        Tensor<T> y = f(inputs);
        projection = projection_like(y, opts.seed);
        Tensor<T> loss = sum_all(mul(y, projection));
        graph.backward(loss);
    }
    std::vector<std::vector<T>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        in.ensure_grad();
        analytic.push_back(in.node()->grad);
        in.set_requires_grad(false);
    }

    auto eval = [&]() -> double {
        Tensor<T> y = f(inputs);
        if (y.shape() != projection.shape()) {
            throw Error("grad_check: f produced inconsistent output shapes");
        }
        return projected_value(y, projection);
    };

    std::mt19937_64 pick(opts.seed ^ 0x9e3779b97f4a7c15ull);
    const double eps = opts.epsilon;
    double worst = 0.0;

    for (std::size_t t = 0; t < inputs.size(); ++t) {
        std::vector<T>& val = inputs[t].data();
        const index_t n = static_cast<index_t>(val.size());
        std::vector<index_t> coords(static_cast<std::size_t>(n));
        std::iota(coords.begin(), coords.end(), index_t(0));
        if (opts.max_coords_per_input > 0 && n > opts.max_coords_per_input) {
            std::shuffle(coords.begin(), coords.end(), pick);
            coords.resize(static_cast<std::size_t>(opts.max_coords_per_input));
        }
        for (const index_t i : coords) {
            const T saved = val[static_cast<std::size_t>(i)];
            val[static_cast<std::size_t>(i)] = saved + static_cast<T>(eps);
            const double plus = eval();
            val[static_cast<std::size_t>(i)] = saved - static_cast<T>(eps);
            const double minus = eval();
            val[static_cast<std::size_t>(i)] = saved;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double a = static_cast<double>(analytic[t][static_cast<std::size_t>(i)]);
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                throw NumericError("grad_check: non-finite value encountered");
            }
            const double rel = std::fabs(a - numeric) /
                               std::max({1.0, std::fabs(a), std::fabs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  double epsilon) {
    GradCheckOptions opts;
    opts.epsilon = epsilon;
    std::function<Tensor<T>(const std::vector<Tensor<T>>&)> wrapped =
        [&f](const std::vector<Tensor<T>>& ins) { return f(ins[0]); };
    return grad_check<T>(wrapped, {x.clone()}, opts);
}

template double grad_check(const std::function<Tensor<float>(const std::vector<Tensor<float>>&)>&,
                           std::vector<Tensor<float>>, const GradCheckOptions&);
template double grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>&,
                           std::vector<Tensor<double>>, const GradCheckOptions&);
template double grad_check(const std::function<Tensor<float>(const Tensor<float>&)>&,
                           const Tensor<float>&, double);
template double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>&,
                           const Tensor<double>&, double);

}  // namespace esn
