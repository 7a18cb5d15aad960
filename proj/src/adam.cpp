#include "hcp/adam.hpp"

#include <cmath>

#include "hcp/errors.hpp"

namespace hcp::ad {

AdamState AdamState::for_params(std::span<Tensor* const> params, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (const Tensor* p : params) {
        s.m.emplace_back(p->size(), 0.0);
        s.v.emplace_back(p->size(), 0.0);
    }
    return s;
}

void adam_step(std::span<Tensor* const> params, AdamState& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                            " tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.m[i].size() != params[i]->size() || state.v[i].size() != params[i]->size())
            throw ContractError("adam_step: moment shape does not match parameter " +
                                shape_str(params[i]->shape()));

    const auto& c = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.requires_grad()) continue;
        auto data = p.data();
        auto grad = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = (grad.empty() ? 0.0 : grad[j]) + c.weight_decay * data[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            data[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

void zero_grads(std::span<Tensor* const> params) {
    for (Tensor* p : params) p->zero_grad();
}

}  // namespace hcp::ad
