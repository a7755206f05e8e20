#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ssounds/rng.hpp"
#include "ssounds/tensor.hpp"

namespace ssounds::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Scalar u^T X v for a fixed random (u, v); turns any tensor output into a
// loss without going through mse.
inline Tensor project_to_scalar(const Tensor& x, std::uint64_t seed) {
    const Tensor m = x.rank() == 2 ? x : reshape(x, {1, x.size()});
    Rng rng(seed);
    const Tensor u = random_tensor(rng, {1, m.rows()}, false);
    const Tensor v = random_tensor(rng, {m.cols(), 1}, false);
    return reshape(matmul(matmul(u, m), v), {1});
}

struct GradcheckResult {
    // max over inputs of ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central differences on every element of every input.
inline GradcheckResult gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5) {
    std::vector<Tensor> in = inputs;
    for (auto& t : in) t.zero_grad();
    backward(f(in));
    GradcheckResult result;
    for (std::size_t k = 0; k < in.size(); ++k) {
        if (!in[k].requires_grad()) continue;
        const std::vector<double> analytic(in[k].grad().begin(), in[k].grad().end());
        std::vector<double> numeric(analytic.size());
        auto data = in[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            double plus = 0.0, minus = 0.0;
            {
                NoGradGuard guard;
                data[i] = orig + step;
                plus = f(in).item();
                data[i] = orig - step;
                minus = f(in).item();
            }
            data[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * step);
        }
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
        }
        const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
        const double rel = std::sqrt(diff) / denom;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_input = k;
        }
    }
    return result;
}

} // namespace ssounds::testing
