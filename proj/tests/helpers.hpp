#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stemsep/rng.hpp"
#include "stemsep/tensor.hpp"

namespace stemsep::test {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false,
                            float lo = -1.0f, float hi = 1.0f) {
    return Tensor::rand_uniform(std::move(shape), lo, hi, rng, requires_grad);
}

// Relative error with an absolute fallback for near-zero pairs. The fallback
// threshold must cover the fp32 quantization of the loss: a central
// difference at step h on a loss of magnitude f carries noise on the order of
// eps32 * f / h, so gradients below that scale are compared absolutely.
inline bool grads_close(double analytic, double numeric, double rel_tol, double abs_floor) {
    const double denom = std::max(std::fabs(analytic), std::fabs(numeric));
    if (denom < abs_floor) return std::fabs(analytic - numeric) < abs_floor;
    return std::fabs(analytic - numeric) / denom < rel_tol;
}

inline double fd_noise_floor(double loss_magnitude, double h) {
    constexpr double kEps32 = 1.1920929e-7;
    return std::max(1e-5, 150.0 * kEps32 * std::fabs(loss_magnitude) / h);
}

struct FdFailure {
    std::string param;
    std::size_t index = 0;
    double analytic = 0, numeric = 0;
};

// Central finite differences against one backward pass. loss_fn must rebuild
// the graph from the current parameter values on every call. Checks every
// element of every listed parameter unless max_per_param limits it.
inline bool fd_check(const std::function<Tensor()>& loss_fn,
                     std::vector<std::pair<std::string, Tensor>> params, double h, double rel_tol,
                     FdFailure* failure = nullptr, int max_per_param = -1,
                     std::uint64_t sample_seed = 1234) {
    Tensor loss = loss_fn();
    backward(loss);
    const double floor = fd_noise_floor(loss.item(), h);
    std::vector<std::vector<float>> analytic;
    for (auto& [name, p] : params)
        analytic.push_back(p.has_grad() ? p.grad_vec() : std::vector<float>(p.numel(), 0.0f));

    Rng pick(sample_seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi].second;
        std::vector<std::size_t> idx;
        if (max_per_param < 0 || static_cast<std::size_t>(max_per_param) >= p.numel()) {
            for (std::size_t i = 0; i < p.numel(); ++i) idx.push_back(i);
        } else {
            for (int k = 0; k < max_per_param; ++k)
                idx.push_back(static_cast<std::size_t>(pick.below(static_cast<int>(p.numel()))));
        }
        for (std::size_t i : idx) {
            const float saved = p.data()[i];
            p.data()[i] = saved + static_cast<float>(h);
            const double fp = loss_fn().item();
            p.data()[i] = saved - static_cast<float>(h);
            const double fm = loss_fn().item();
            p.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            if (!grads_close(a, numeric, rel_tol, floor)) {
                if (failure) *failure = {params[pi].first, i, a, numeric};
                return false;
            }
        }
    }
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.vec()[i]) - b.vec()[i]));
    return m;
}

}  // namespace stemsep::test
