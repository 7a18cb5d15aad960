#include "hcp/model_check.hpp"

#include <random>

#include "hcp/losses.hpp"
#include "hcp/probe.hpp"
#include "hcp/purifier.hpp"

namespace hcp::runner {

using ad::Tensor;
using ad::Var;

ad::GradCheckReport purifier_gradcheck(const GradCheckSetup& s) {
    std::mt19937_64 rng(s.seed);
    model::PurifierConfig pc;
    pc.d = s.d;
    pc.heads = s.heads;
    pc.blocks = s.blocks;
    auto m = model::PurifierModel::create(pc, rng);

    // Two sessions so that frozen rows, the stability head and the open
    // plasticity head all take part.
    std::vector<int> first, second;
    for (int k = 0; k < s.classes; ++k) (k < s.classes / 2 ? first : second).push_back(k);
    if (!first.empty()) {
        m.expand_for_session(first, rng);
        m.merge_classifiers();
    }
    m.expand_for_session(second, rng);
    // Random embeddings and heads so no parameter sits at a trivial value.
    std::normal_distribution<double> n01(0.0, 0.5);
    for (Tensor* p : m.trainable_params())
        for (double& v : p->data()) v += n01(rng);

    const auto M = static_cast<std::size_t>(s.classes), L = static_cast<std::size_t>(s.tokens);
    Tensor tokens({s.batch, L, s.d});
    for (double& v : tokens.data()) v = n01(rng);
    std::vector<std::vector<std::uint8_t>> labels(s.batch, std::vector<std::uint8_t>(M, 0));
    std::uniform_int_distribution<int> coin(0, 1);
    for (auto& row : labels)
        for (auto& y : row) y = static_cast<std::uint8_t>(coin(rng));
    labels[0].assign(M, 0);
    labels[0][0] = 1;
    const auto mix = probe::batch_mixing(labels, 1.0, 1.0, rng);

    const std::size_t K = M + 1;
    Tensor targets({s.batch, K}), weights({s.batch, K}, 1.0), mask({s.batch, K}, 1.0);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t k = 0; k < M; ++k) {
            targets[b * K + k] = labels[b][k];
            if (k >= first.size()) weights[b * K + k] = loss::new_class_weight(static_cast<int>(M), static_cast<int>(second.size()));
        }
        targets[b * K + M] = 1.0;
        mask[b * K + M] = mix.has_unknown[b];
    }
    loss::LossConfig lc;

    auto loss_fn = [&](ad::Tape& tape) {
        const auto r = model::forward_purify(tape, m, tokens);
        Var probs = ad::sigmoid(model::classify(tape, m, r.o_s));
        Var unknown = ad::bmm(tape.constant(mix.mix), r.o_s);
        Var up = ad::sigmoid(ad::reshape(model::unknown_logit(tape, m, unknown), {s.batch, 1}));
        return loss::wasl_batch(ad::concat_cols(probs, up), targets, weights, mask, lc);
    };
    const auto params = m.trainable_params();
    return ad::grad_check(params, loss_fn, s.step);
}

}  // namespace hcp::runner
