#include "hcp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace hcp::ad {

GradCheckReport grad_check(std::span<Tensor* const> params, const std::function<Var(Tape&)>& loss_fn,
                           double step, double abs_floor) {
    for (Tensor* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(loss_fn(tape));
    }
    std::vector<std::vector<double>> analytic;
    for (Tensor* p : params)
        analytic.emplace_back(p->has_grad() ? std::vector<double>(p->grad().begin(), p->grad().end())
                                            : std::vector<double>(p->size(), 0.0));

    auto eval = [&] {
        Tape tape;
        return loss_fn(tape).value()[0];
    };

    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        if (!p.requires_grad()) continue;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double orig = p[j];
            p[j] = orig + step;
            const double fp = eval();
            p[j] = orig - step;
            const double fm = eval();
            p[j] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[pi][j];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
            ++rep.checked;
            rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_param = pi;
                rep.worst_index = j;
            }
        }
    }
    return rep;
}

}  // namespace hcp::ad
