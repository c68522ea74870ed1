#pragma once

// Central finite-difference check of loss_and_grad, shared by the unit tests
// and the acceptance suite.

#include "surfprobe/probe_model.hpp"
#include "surfprobe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace surfprobe::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
};

// ReLU on/off pattern of every hidden unit for every example.
inline std::vector<bool> relu_pattern(const MLPParams& p, const Eigen::MatrixXd& x) {
    const auto fwd = forward(p, x);
    std::vector<bool> pattern;
    for (std::size_t l = 1; l < fwd.cache.inputs.size(); ++l) {
        const auto& a = fwd.cache.inputs[l];
        for (Eigen::Index i = 0; i < a.size(); ++i) pattern.push_back(a.data()[i] > 0.0);
    }
    return pattern;
}

// Relative error |a - n| / max(|a|, |n|, floor) per coordinate. Coordinates
// whose perturbation flips a ReLU unit are not differentiable along the probe
// direction and are skipped.
inline GradCheckResult check_gradients(MLPParams params, const Eigen::MatrixXd& x, std::span<const double> targets,
                                       const Head& head, double step = 1e-5, double floor = 1e-4) {
    GradCheckResult result;
    const auto analytic = loss_and_grad(params, x, targets, head);
    auto probe = [&](double* value, double grad) {
        const double saved = *value;
        *value = saved + step;
        const double up = loss_and_grad(params, x, targets, head).loss;
        const auto up_pattern = relu_pattern(params, x);
        *value = saved - step;
        const double down = loss_and_grad(params, x, targets, head).loss;
        const auto down_pattern = relu_pattern(params, x);
        *value = saved;
        if (up_pattern != down_pattern) {
            ++result.skipped_kinks;
            return;
        }
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(grad), std::abs(numeric), floor});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(grad - numeric) / denom);
        ++result.checked;
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        const auto& g = analytic.grads[l];
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) probe(layer.weight.data() + i, g.weight.data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias.data() + i, g.bias.data()[i]);
    }
    return result;
}

struct GradCase {
    MLPParams params;
    Eigen::MatrixXd x;
    std::vector<double> targets;
    Head head;
};

// Random small problem: dims <= 8, batch <= 4, 1-3 layers.
inline GradCase random_grad_case(std::uint64_t seed, int head_kind) {
    Rng rng(seed);
    auto dim = [&] { return static_cast<std::size_t>(1 + rng.index(8)); };
    const auto batch = static_cast<Eigen::Index>(1 + rng.index(4));
    MLPConfig cfg;
    cfg.in_dim = dim();
    cfg.hidden_dim = dim();
    cfg.n_layers = static_cast<int>(1 + rng.index(3));
    GradCase c;
    std::size_t n_chars = 0;
    if (head_kind == 0) {
        c.head = RegressionHead{};
    } else if (head_kind == 1) {
        c.head = BinaryHead{};
    } else {
        cfg.out_dim = dim();
        n_chars = 2 + rng.index(5);
        Eigen::MatrixXd chars(static_cast<Eigen::Index>(n_chars), static_cast<Eigen::Index>(cfg.out_dim));
        for (Eigen::Index i = 0; i < chars.size(); ++i) chars.data()[i] = rng.normal();
        c.head = CharHead{chars};
    }
    c.params = init_params(cfg, rng.next());
    for (auto& layer : c.params.layers) {
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * rng.normal();
    }
    c.x.resize(batch, static_cast<Eigen::Index>(cfg.in_dim));
    for (Eigen::Index i = 0; i < c.x.size(); ++i) c.x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < batch; ++i) {
        if (head_kind == 0) c.targets.push_back(rng.uniform(-2.0, 2.0));
        if (head_kind == 1) c.targets.push_back(static_cast<double>(rng.index(2)));
        if (head_kind == 2) c.targets.push_back(static_cast<double>(rng.index(n_chars)));
    }
    return c;
}

}  // namespace surfprobe::testing
