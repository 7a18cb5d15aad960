#pragma once

#include <span>
#include <vector>

#include "hcp/tensor.hpp"

namespace hcp::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Coupled L2 decay: added to the gradient before the moment updates.
    double weight_decay = 1e-4;
};

struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;

    static AdamState for_params(std::span<Tensor* const> params, AdamConfig config);
};

/// One bias-corrected Adam update over `params`, reading each tensor's grad
/// (absent grad counts as zero). Tensors that do not require grad are left
/// untouched.
void adam_step(std::span<Tensor* const> params, AdamState& state);

void zero_grads(std::span<Tensor* const> params);

}  // namespace hcp::ad
