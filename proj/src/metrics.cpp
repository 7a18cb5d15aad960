#include "hcp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "hcp/errors.hpp"

namespace hcp::metrics {

void PredictionMatrix::validate() const {
    if (scores.size() != n * m || truths.size() != n * m)
        throw ShapeError("PredictionMatrix: scores/truths must hold " + std::to_string(n) + " x " +
                         std::to_string(m) + " entries");
    if (class_ids.size() != m) throw ShapeError("PredictionMatrix: one class id per column");
    if (!sample_ids.empty() && sample_ids.size() != n) throw ShapeError("PredictionMatrix: one sample id per row");
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> truths,
                         std::span<const int> sample_ids) {
    if (scores.size() != truths.size()) throw ShapeError("average_precision: scores and truths differ in length");
    if (!sample_ids.empty() && sample_ids.size() != scores.size())
        throw ShapeError("average_precision: one sample id per score");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto id = [&](std::size_t i) { return sample_ids.empty() ? static_cast<long>(i) : static_cast<long>(sample_ids[i]); };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return id(a) < id(b);
    });
    double hits = 0.0, acc = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (truths[order[r]]) {
            hits += 1.0;
            acc += hits / static_cast<double>(r + 1);
        }
    if (hits == 0.0) throw MetricError("average_precision: column has no positive sample");
    return acc / hits;
}

MapResult map_over_classes(const PredictionMatrix& pm) {
    pm.validate();
    MapResult out;
    out.per_class.assign(pm.m, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::uint8_t> has_pos(pm.m, 0);
    const long M = static_cast<long>(pm.m);
#pragma omp parallel for schedule(static) if (M >= 8)
    for (long c = 0; c < M; ++c) {
        std::vector<double> s(pm.n);
        std::vector<std::uint8_t> t(pm.n);
        bool any = false;
        for (std::size_t i = 0; i < pm.n; ++i) {
            s[i] = pm.scores[i * pm.m + c];
            t[i] = pm.truths[i * pm.m + c];
            any = any || t[i];
        }
        if (!any) continue;
        has_pos[c] = 1;
        out.per_class[c] = average_precision(s, t, pm.sample_ids);
    }
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < pm.m; ++c) {
        if (!has_pos[c]) {
            out.excluded.push_back(pm.class_ids[c]);
            continue;
        }
        sum += out.per_class[c];
        ++used;
    }
    if (used == 0) throw MetricError("map_over_classes: no class has a positive sample");
    out.map = sum / static_cast<double>(used);
    return out;
}

F1Result f1_scores(const PredictionMatrix& pm, double threshold) {
    pm.validate();
    if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("f1_scores: threshold must lie in (0, 1)");
    double tp_all = 0.0, fp_all = 0.0, fn_all = 0.0, cf1 = 0.0;
    for (std::size_t c = 0; c < pm.m; ++c) {
        double tp = 0.0, fp = 0.0, fn = 0.0;
        for (std::size_t i = 0; i < pm.n; ++i) {
            const bool pred = pm.scores[i * pm.m + c] >= threshold;
            const bool truth = pm.truths[i * pm.m + c] != 0;
            tp += pred && truth;
            fp += pred && !truth;
            fn += !pred && truth;
        }
        const double denom = 2.0 * tp + fp + fn;
        cf1 += denom > 0.0 ? 2.0 * tp / denom : 0.0;
        tp_all += tp;
        fp_all += fp;
        fn_all += fn;
    }
    F1Result r;
    r.cf1 = pm.m ? cf1 / static_cast<double>(pm.m) : 0.0;
    const double denom = 2.0 * tp_all + fp_all + fn_all;
    r.of1 = denom > 0.0 ? 2.0 * tp_all / denom : 0.0;
    return r;
}

Accuracies session_accuracies(std::span<const double> session_maps) {
    if (session_maps.empty()) throw MetricError("session_accuracies: no sessions");
    const double sum = std::accumulate(session_maps.begin(), session_maps.end(), 0.0);
    return {sum / static_cast<double>(session_maps.size()), session_maps.back()};
}

double calinski_harabasz(std::span<const double> features, std::size_t d, std::span<const int> labels) {
    if (d == 0 || features.size() != labels.size() * d)
        throw ShapeError("calinski_harabasz: features must be N x d with one label per row");
    const std::size_t N = labels.size();
    std::map<int, std::size_t> group_of;
    for (int l : labels) group_of.emplace(l, group_of.size());
    const std::size_t g = group_of.size();
    if (g < 2) throw MetricError("calinski_harabasz: need at least two groups");

    std::vector<double> mean(d, 0.0), cmean(g * d, 0.0);
    std::vector<double> count(g, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t k = group_of[labels[i]];
        count[k] += 1.0;
        for (std::size_t c = 0; c < d; ++c) {
            mean[c] += features[i * d + c];
            cmean[k * d + c] += features[i * d + c];
        }
    }
    for (double& v : mean) v /= static_cast<double>(N);
    for (std::size_t k = 0; k < g; ++k)
        for (std::size_t c = 0; c < d; ++c) cmean[k * d + c] /= count[k];

    double between = 0.0, within = 0.0;
    for (std::size_t k = 0; k < g; ++k)
        for (std::size_t c = 0; c < d; ++c) between += count[k] * (cmean[k * d + c] - mean[c]) * (cmean[k * d + c] - mean[c]);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t k = group_of[labels[i]];
        for (std::size_t c = 0; c < d; ++c) within += (features[i * d + c] - cmean[k * d + c]) * (features[i * d + c] - cmean[k * d + c]);
    }
    if (within == 0.0) return between == 0.0 ? 0.0 : kInfiniteSeparation;
    return (between / static_cast<double>(g - 1)) / (within / static_cast<double>(N - g));
}

}  // namespace hcp::metrics
