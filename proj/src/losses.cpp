#include "hcp/losses.hpp"

#include <cmath>
#include <string>

#include "hcp/errors.hpp"

namespace hcp::loss {

using ad::Tensor;
using ad::Var;

void validate(const LossConfig& cfg) {
    if (!(cfg.gamma_pos >= 0.0) || !(cfg.gamma_neg >= 0.0)) throw ConfigError("loss.gamma_pos/gamma_neg must be >= 0");
    if (cfg.gamma_neg < cfg.gamma_pos) throw ConfigError("loss.gamma_neg must be >= loss.gamma_pos");
    if (!(cfg.clip >= 0.0 && cfg.clip < 1.0)) throw ConfigError("loss.clip must lie in [0, 1)");
}

double new_class_weight(int n_total, int n_new) {
    if (n_new < 1) throw ContractError("new_class_weight: no new classes");
    if (n_total < n_new) throw ContractError("new_class_weight: more new classes than seen classes");
    return std::sqrt(static_cast<double>(n_total) / static_cast<double>(n_new));
}

namespace {

// Per-entry bracketed term (without the leading minus and the weights).
Var asl_terms(Var probs, const Tensor& targets, const LossConfig& cfg) {
    for (double p : probs.value().data())
        if (!(p >= 0.0 && p <= 1.0)) throw NumericError("wasl: probability " + std::to_string(p) + " outside [0,1]");
    ad::Tape& tape = *probs.tape();
    Var y = tape.constant(targets);
    Var one_minus_y = tape.constant([&] {
        Tensor t(targets.shape());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0 - targets[i];
        return t;
    }());

    Var pc = ad::clamp(probs, cfg.eps, 1.0 - cfg.eps);
    Var pos = ad::mul(ad::pow(ad::add_scalar(ad::scale(pc, -1.0), 1.0), cfg.gamma_pos), ad::log(pc));

    Var shifted = cfg.clip > 0.0 ? ad::clamp(ad::add_scalar(probs, -cfg.clip), 0.0, 1.0) : probs;
    Var safe = ad::clamp(shifted, -1.0, 1.0 - cfg.eps);
    Var neg = ad::mul(ad::pow(shifted, cfg.gamma_neg), ad::log(ad::add_scalar(ad::scale(safe, -1.0), 1.0)));
    return ad::add(ad::mul(y, pos), ad::mul(one_minus_y, neg));
}

}  // namespace

Var wasl_loss(Var probs, const Tensor& targets, const Tensor& weights, const LossConfig& cfg) {
    const std::size_t K = probs.size();
    if (targets.size() != K || weights.size() != K)
        throw ShapeError("wasl_loss: probabilities, targets and weights must have equal length");
    Tensor coef(probs.shape());
    for (std::size_t k = 0; k < K; ++k) coef[k] = -weights[k] / static_cast<double>(K);
    Tensor y = targets.reshaped(probs.shape());
    Var terms = asl_terms(probs, y, cfg);
    return ad::sum(ad::mul(probs.tape()->constant(std::move(coef)), terms));
}

Var wasl_batch(Var probs, const Tensor& targets, const Tensor& weights, const Tensor& mask, const LossConfig& cfg) {
    if (probs.shape().size() != 2 || targets.shape() != probs.shape() || weights.shape() != probs.shape() ||
        mask.shape() != probs.shape())
        throw ShapeError("wasl_batch: probabilities, targets, weights and mask must share shape " +
                         ad::shape_str(probs.shape()));
    const std::size_t B = probs.shape()[0], K = probs.shape()[1];
    Tensor coef(probs.shape());
    for (std::size_t b = 0; b < B; ++b) {
        double kept = 0.0;
        for (std::size_t k = 0; k < K; ++k) kept += mask[b * K + k] != 0.0 ? 1.0 : 0.0;
        if (kept == 0.0) continue;
        for (std::size_t k = 0; k < K; ++k)
            if (mask[b * K + k] != 0.0)
                coef[b * K + k] = -weights[b * K + k] / (kept * static_cast<double>(B));
    }
    Var terms = asl_terms(probs, targets, cfg);
    return ad::sum(ad::mul(probs.tape()->constant(std::move(coef)), terms));
}

}  // namespace hcp::loss
