#pragma once

// Central finite-difference gradient check used by the unit and acceptance
// tests.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace wfm::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int coordinates = 0;
};

/// Compares d f / d `leaf` from autograd with central differences on
/// `coordinates` random entries of `leaf`. The relative error uses
/// max(|analytic|, |numeric|, 1e-2) as denominator.
inline GradCheckResult grad_check(const std::function<torch::Tensor()>& f, torch::Tensor leaf,
                                  int coordinates, uint64_t seed, double eps = 1e-6) {
    if (leaf.grad().defined()) {
        leaf.mutable_grad().zero_();
    }
    f().backward();
    const auto analytic = leaf.grad().detach().clone().flatten();

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick(0, leaf.numel() - 1);
    GradCheckResult result;
    // Only the perturbation runs without grad; f itself may need autograd
    // (the gradient penalty differentiates inside its forward pass).
    auto set = [&](int64_t i, double v) {
        torch::NoGradGuard no_grad;
        leaf.view({-1})[i].fill_(v);
    };
    for (int k = 0; k < coordinates; ++k) {
        const int64_t i = pick(rng);
        const double orig = leaf.view({-1})[i].item<double>();
        set(i, orig + eps);
        const double up = f().item<double>();
        set(i, orig - eps);
        const double down = f().item<double>();
        set(i, orig);
        const double numeric = (up - down) / (2 * eps);
        const double a = analytic[i].item<double>();
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-2});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
        ++result.coordinates;
    }
    return result;
}

}  // namespace wfm::testing
