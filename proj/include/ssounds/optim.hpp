#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssounds/error.hpp"
#include "ssounds/model.hpp"

namespace ssounds {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Moments for one parameter tensor plus the shared step counter.
struct AdamWState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    bool operator==(const AdamWState&) const = default;
};

// One decoupled-decay update of a single tensor whose moments are (m, v);
// `step` is the 1-based step index after incrementing.
inline void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                         std::span<double> v, std::uint64_t step, const AdamWOptions& opt) {
    if (param.size() != grad.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ShapeError("adamw: parameter, gradient and moment sizes differ");
    }
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    const double step_size = opt.lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    const double decay = 1.0 - opt.lr * opt.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
        param[i] *= decay;
        param[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + opt.eps);
    }
}

// AdamW over a fixed list of parameter tensors (shared handles into a model).
class AdamW {
public:
    AdamW(std::vector<NamedParameter> params, AdamWOptions options)
        : params_(std::move(params)), options_(options) {
        if (!(options_.lr >= 0.0)) throw ConfigError("adamw: learning rate must be non-negative");
        reset();
    }

    void reset() {
        state_.step = 0;
        state_.m.clear();
        state_.v.clear();
        for (const auto& p : params_) {
            state_.m.emplace_back(p.tensor.size(), 0.0);
            state_.v.emplace_back(p.tensor.size(), 0.0);
        }
    }

    const AdamWOptions& options() const noexcept { return options_; }
    const std::vector<NamedParameter>& parameters() const noexcept { return params_; }
    const AdamWState& state() const noexcept { return state_; }

    void load_state(AdamWState state) {
        if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
            throw DimensionError("adamw: state holds " + std::to_string(state.m.size()) + " tensors, optimizer has " +
                                 std::to_string(params_.size()));
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (state.m[i].size() != params_[i].tensor.size() || state.v[i].size() != params_[i].tensor.size()) {
                throw DimensionError("adamw: state for " + params_[i].name + " has the wrong size");
            }
        }
        state_ = std::move(state);
    }

    // Applies one update from the gradients currently stored on the tensors.
    // Non-finite gradients abort before any parameter is touched.
    void step() {
        for (const auto& p : params_) {
            const auto g = p.tensor.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!std::isfinite(g[i])) {
                    throw NumericError("adamw: non-finite gradient in " + p.name + "[" + std::to_string(i) +
                                       "] at step " + std::to_string(state_.step + 1));
                }
            }
        }
        ++state_.step;
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& t = params_[k].tensor;
            adamw_update(t.mutable_data(), t.grad(), state_.m[k], state_.v[k], state_.step, options_);
        }
    }

private:
    std::vector<NamedParameter> params_;
    AdamWOptions options_;
    AdamWState state_;
};

} // namespace ssounds
