#pragma once

#include <functional>
#include <span>

#include "hcp/autodiff.hpp"

namespace hcp::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
};

/// Compares tape gradients of `loss_fn` against central differences.
///
/// The relative error of one coordinate is |analytic - numeric| divided by
/// max(|analytic|, |numeric|, abs_floor); the floor keeps coordinates whose
/// true gradient is ~0 from dividing roundoff by roundoff.
GradCheckReport grad_check(std::span<Tensor* const> params, const std::function<Var(Tape&)>& loss_fn,
                           double step = 1e-5, double abs_floor = 1e-6);

}  // namespace hcp::ad
