#include "hcp/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "hcp/adam.hpp"
#include "hcp/errors.hpp"

namespace hcp::runner {

using ad::Tensor;
using ad::Var;

namespace {

Tensor gather_tokens(std::span<const data::MultiLabelSample> samples, std::span<const std::size_t> idx) {
    const Tensor& first = samples[idx[0]].tokens;
    const std::size_t L = first.shape()[0], d = first.shape()[1];
    Tensor out({idx.size(), L, d});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto src = samples[idx[b]].tokens.data();
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * L * d));
    }
    return out;
}

struct Evaluation {
    metrics::SessionResult result;
    Predictions predictions;
    std::vector<std::uint8_t> truths;  // [n x M]
};

Evaluation evaluate_impl(const model::PurifierModel& model, std::span<const data::MultiLabelSample> test,
                         double f1_threshold, int batch) {
    Evaluation ev;
    std::vector<std::size_t> all(test.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    ev.predictions = predict(model, test, all, true, batch);
    const auto& ids = model.class_ids();
    const std::size_t N = test.size(), M = ids.size(), d = model.d();

    metrics::PredictionMatrix pm;
    pm.n = N;
    pm.m = M;
    pm.scores = ev.predictions.probs;
    pm.truths.resize(N * M);
    pm.class_ids = ids;
    pm.session = model.session();
    for (std::size_t i = 0; i < N; ++i) {
        pm.sample_ids.push_back(test[i].sample_id);
        for (std::size_t k = 0; k < M; ++k) pm.truths[i * M + k] = test[i].labels_full[static_cast<std::size_t>(ids[k])];
    }
    ev.truths = pm.truths;

    auto& r = ev.result;
    r.session = model.session();
    const auto mr = metrics::map_over_classes(pm);
    r.map = mr.map;
    for (std::size_t k = 0; k < M; ++k)
        if (!std::isnan(mr.per_class[k])) r.per_class_ap[ids[k]] = mr.per_class[k];
    const auto f1 = metrics::f1_scores(pm, f1_threshold);
    r.cf1 = f1.cf1;
    r.of1 = f1.of1;

    // C-H over the purified feature of every class that is truly present.
    std::vector<double> feats;
    std::vector<int> labels;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < M; ++k)
            if (pm.truths[i * M + k]) {
                const double* f = ev.predictions.features.data() + (i * M + k) * d;
                feats.insert(feats.end(), f, f + d);
                labels.push_back(ids[k]);
            }
    std::set<int> groups(labels.begin(), labels.end());
    r.ch_index = groups.size() >= 2 ? metrics::calinski_harabasz(feats, d, labels)
                                    : std::numeric_limits<double>::quiet_NaN();
    return ev;
}

}  // namespace

Predictions predict(const model::PurifierModel& model, std::span<const data::MultiLabelSample> samples,
                    std::span<const std::size_t> indices, bool keep_features, int batch) {
    Predictions p;
    p.n = indices.size();
    p.m = model.num_classes();
    p.d = model.d();
    p.probs.assign(p.n * p.m, 0.0);
    if (keep_features) p.features.assign(p.n * p.m * p.d, 0.0);
    if (p.n == 0) return p;
    const auto bs = static_cast<std::size_t>(std::max(batch, 1));
    const long chunks = static_cast<long>((p.n + bs - 1) / bs);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (long c = 0; c < chunks; ++c) {
        try {
        const std::size_t lo = static_cast<std::size_t>(c) * bs, hi = std::min(p.n, lo + bs);
        const Tensor tokens = gather_tokens(samples, indices.subspan(lo, hi - lo));
        ad::Tape tape;
        const auto r = model::forward_purify(tape, model, tokens);
        const Var probs = ad::sigmoid(model::classify(tape, model, r.o_s));
        std::copy(probs.value().data().begin(), probs.value().data().end(),
                  p.probs.begin() + static_cast<std::ptrdiff_t>(lo * p.m));
        if (keep_features)
            std::copy(r.o_s.value().data().begin(), r.o_s.value().data().end(),
                      p.features.begin() + static_cast<std::ptrdiff_t>(lo * p.m * p.d));
        } catch (...) {
#pragma omp critical(hcp_predict_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return p;
}

metrics::SessionResult evaluate(const model::PurifierModel& model, std::span<const data::MultiLabelSample> test,
                                double f1_threshold, int batch) {
    return evaluate_impl(model, test, f1_threshold, batch).result;
}

Experiment::Experiment(ExperimentConfig cfg, const data::Dataset& dataset) : cfg_(std::move(cfg)), data_(dataset) {
    validate(cfg_);
    std::vector<std::string> names;
    for (const auto& c : data_.classes) names.push_back(c.name);
    protocol_ = data::build_protocol(static_cast<int>(data_.classes.size()), cfg_.protocol.base,
                                     cfg_.protocol.increment, names);
    pools_ = data::assign_sessions(data_.train, protocol_);
    if (data_.test.empty()) throw DatasetError("dataset has no test samples");
    if (data_.config.d != cfg_.dataset.d) throw ConfigError("dataset token width does not match dataset.d");
    model::PurifierConfig pc;
    pc.d = static_cast<std::size_t>(cfg_.dataset.d);
    pc.heads = cfg_.train.heads;
    pc.blocks = cfg_.train.blocks;
    pc.pre_norm = cfg_.train.pre_norm;
    auto rng = rng_stream(cfg_.seed, 0, Stream::Init);
    state_.model = model::PurifierModel::create(pc, rng);
}

void Experiment::run_all() {
    for (int t = state_.session + 1; t <= protocol_.sessions(); ++t) run_session(t);
}

const metrics::SessionResult& Experiment::run_session(int t) {
    if (t != state_.session + 1)
        throw StateError("session " + std::to_string(t) + " requested after session " + std::to_string(state_.session));
    if (t > protocol_.sessions())
        throw StateError("protocol has only " + std::to_string(protocol_.sessions()) + " sessions");
    const auto start = std::chrono::steady_clock::now();

    std::optional<model::PurifierModel> snapshot;
    if (t > 1) snapshot = state_.model;
    const auto& pool = pools_[static_cast<std::size_t>(t - 1)];
    const auto& new_ids = protocol_.classes(t);
    auto rng = rng_stream(cfg_.seed, t, Stream::Expand);
    state_.model.expand_for_session(new_ids, rng, cfg_.train.fp);

    // Effective labels in model class order: old classes from the snapshot
    // (or all negative), current classes from the masked ground truth.
    const std::size_t n_old = snapshot ? snapshot->num_classes() : 0;
    std::vector<data::LabelVector> effective(pool.size());
    Predictions old_probs;
    if (snapshot && cfg_.re_enabled) old_probs = predict(*snapshot, data_.train, pool, false, cfg_.train.eval_batch);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        auto& y = effective[i];
        if (cfg_.re_enabled && n_old > 0) {
            std::span<const double> row(old_probs.probs.data() + i * n_old, n_old);
            y = recall::pseudo_labels(row, snapshot->class_ids(), state_.queue, cfg_.re);
        } else {
            y.assign(n_old, 0);
        }
        const auto cur = data::mask_labels(data_.train[pool[i]], t, protocol_);
        y.insert(y.end(), cur.begin(), cur.end());
    }

    auto before = state_.model.frozen_state_bytes();
    train_session(t, pool, effective);
    frozen_snapshots.emplace_back(std::move(before), state_.model.frozen_state_bytes());

    auto ev = evaluate_impl(state_.model, data_.test, cfg_.train.f1_threshold, cfg_.train.eval_batch);
    const auto& ids = state_.model.class_ids();
    const std::size_t M = ids.size();

    // Pseudo-label thresholds for the next session, fit on this session's
    // training pool with the labels the model was trained on.
    {
        const auto probs = predict(state_.model, data_.train, pool, false, cfg_.train.eval_batch);
        std::vector<std::uint8_t> pos(pool.size() * M);
        for (std::size_t i = 0; i < pool.size(); ++i)
            std::copy(effective[i].begin(), effective[i].end(), pos.begin() + static_cast<std::ptrdiff_t>(i * M));
        recall::update_queue(state_.queue, recall::fit_distributions(probs.probs, pos, ids), t, cfg_.re.queue_mode,
                             cfg_.re.ema_rho);
    }
    recall::update_queue(state_.eval_history, recall::fit_distributions(ev.predictions.probs, ev.truths, ids), t);
    if (t > 1)
        for (int k : protocol_.seen_through(t - 1)) {
            const auto it = state_.eval_history.history.find(k);
            if (it == state_.eval_history.history.end() || !it->second.count(t)) continue;
            if (it->second.begin()->first >= t) continue;
            ev.result.per_class_forgetting[k] = recall::confidence_forgetting(it->second, t);
        }

    state_.model.merge_classifiers();
    state_.session = t;
    ev.result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state_.results.push_back(std::move(ev.result));
    return state_.results.back();
}

void Experiment::train_session(int t, std::span<const std::size_t> pool,
                               const std::vector<data::LabelVector>& effective) {
    auto& model = state_.model;
    const auto params = model.trainable_params();
    ad::AdamConfig ac;
    ac.lr = t == 1 ? cfg_.train.lr_base : cfg_.train.lr_incremental;
    ac.weight_decay = cfg_.train.weight_decay;
    auto opt = ad::AdamState::for_params(params, ac);
    ad::zero_grads(params);

    const std::size_t M = model.num_classes();
    const std::size_t n_new = protocol_.classes(t).size();
    const double w_new = loss::new_class_weight(static_cast<int>(M), static_cast<int>(n_new));
    const bool pu = cfg_.pu.enabled;
    const bool pu_neg = pu && cfg_.pu.real_negative_targets;
    const std::size_t K = M + (pu ? 1 : 0) + (pu_neg ? M : 0);

    const std::size_t P = pool.size(), B = static_cast<std::size_t>(cfg_.train.batch);
    std::vector<std::size_t> order(P);
    for (int e = 0; e < cfg_.train.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = rng_stream(cfg_.seed, t, Stream::Shuffle, static_cast<std::uint64_t>(e));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t lo = 0, bi = 0; lo < P; lo += B, ++bi) {
            const std::size_t nb = std::min(B, P - lo);
            std::vector<std::size_t> idx(nb);
            std::vector<data::LabelVector> rows(nb);
            for (std::size_t b = 0; b < nb; ++b) {
                idx[b] = pool[order[lo + b]];
                rows[b] = effective[order[lo + b]];
            }
            const Tensor tokens = gather_tokens(data_.train, idx);
            Tensor targets({nb, K}), weights({nb, K}), mask({nb, K}, 1.0);
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t k = 0; k < M; ++k) {
                    targets[b * K + k] = rows[b][k];
                    weights[b * K + k] = k + n_new >= M ? w_new : 1.0;
                }

            ad::Tape tape;
            const auto r = model::forward_purify(tape, model, tokens);
            Var probs = ad::sigmoid(model::classify(tape, model, r.o_s));
            if (pu) {
                auto mix_rng = rng_stream(cfg_.seed, t, Stream::Mix, static_cast<std::uint64_t>(e), bi);
                auto mix = probe::batch_mixing(rows, cfg_.pu.alpha, cfg_.pu.beta, mix_rng);
                Var unknown = ad::bmm(tape.constant(std::move(mix.mix)), r.o_s);
                Var up = ad::sigmoid(ad::reshape(model::unknown_logit(tape, model, unknown), {nb, 1}));
                probs = ad::concat_cols(probs, up);
                for (std::size_t b = 0; b < nb; ++b) {
                    targets[b * K + M] = 1.0;
                    weights[b * K + M] = 1.0;
                    mask[b * K + M] = mix.has_unknown[b];
                }
                if (pu_neg) {
                    Var real = ad::sigmoid(ad::reshape(model::unknown_logit(tape, model, r.o_s), {nb, M}));
                    probs = ad::concat_cols(probs, real);
                    for (std::size_t b = 0; b < nb; ++b)
                        for (std::size_t k = 0; k < M; ++k) {
                            weights[b * K + M + 1 + k] = 1.0;
                            mask[b * K + M + 1 + k] = rows[b][k];
                        }
                }
            }
            const Var loss = loss::wasl_batch(probs, targets, weights, mask, cfg_.loss);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) {
                std::ostringstream msg;
                msg << "non-finite loss " << lv << " at session " << t << ", epoch " << e << ", batch " << bi
                    << "; sample ids:";
                for (std::size_t i : idx) msg << ' ' << data_.train[i].sample_id;
                double pmax = 0.0;
                for (const Tensor* p : params)
                    for (double v : p->data()) pmax = std::max(pmax, std::abs(v));
                msg << "; max |param| " << pmax;
                throw NumericError(msg.str());
            }
            tape.backward(loss);
            ad::adam_step(params, opt);
            ad::zero_grads(params);
        }
    }
}

double mean_old_forgetting(const ExperimentState& state) {
    if (state.results.empty()) throw MetricError("no session results");
    const auto& f = state.results.back().per_class_forgetting;
    if (f.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, v] : f) s += v;
    return s / static_cast<double>(f.size());
}

}  // namespace hcp::runner
