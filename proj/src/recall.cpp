#include "hcp/recall.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hcp/errors.hpp"

namespace hcp::recall {

const ClassStats* ConfidenceDistributionTable::find(int class_id) const {
    auto it = current.find(class_id);
    return it == current.end() ? nullptr : &it->second;
}

double ConfidenceDistributionTable::threshold(int class_id, double sigma_c, double fallback) const {
    const ClassStats* s = find(class_id);
    if (!s) return fallback;
    return s->mean - sigma_c * std::sqrt(s->var);
}

nlohmann::json ConfidenceDistributionTable::to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& [id, s] : current) {
        nlohmann::json hist = nlohmann::json::array();
        if (auto it = history.find(id); it != history.end())
            for (const auto& [t, mu] : it->second) hist.push_back({t, mu});
        classes.push_back({{"class_id", id}, {"mean", s.mean}, {"var", s.var}, {"count", s.count}, {"history", hist}});
    }
    // Classes that only have history (no live statistics).
    for (const auto& [id, h] : history) {
        if (current.count(id)) continue;
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& [t, mu] : h) hist.push_back({t, mu});
        classes.push_back({{"class_id", id}, {"history", hist}});
    }
    return {{"last_session", last_session}, {"classes", classes}};
}

ConfidenceDistributionTable ConfidenceDistributionTable::from_json(const nlohmann::json& j) {
    ConfidenceDistributionTable t;
    t.last_session = j.at("last_session").get<int>();
    for (const auto& c : j.at("classes")) {
        const int id = c.at("class_id").get<int>();
        if (c.contains("mean"))
            t.current[id] = {c.at("mean").get<double>(), c.at("var").get<double>(), c.at("count").get<long>()};
        for (const auto& h : c.at("history")) t.history[id][h.at(0).get<int>()] = h.at(1).get<double>();
    }
    return t;
}

SessionStats fit_distributions(std::span<const double> probs, std::span<const std::uint8_t> positives,
                               std::span<const int> class_ids) {
    const std::size_t C = class_ids.size();
    if (C == 0) return {};
    if (probs.size() != positives.size() || probs.size() % C != 0)
        throw ShapeError("fit_distributions: probability and label matrices must be N x " + std::to_string(C));
    const std::size_t N = probs.size() / C;
    SessionStats out;
    for (std::size_t c = 0; c < C; ++c) {
        long n = 0;
        double sum = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            if (positives[i * C + c]) {
                sum += probs[i * C + c];
                ++n;
            }
        if (n == 0) {
            out.excluded.push_back(class_ids[c]);
            continue;
        }
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            if (positives[i * C + c]) ss += (probs[i * C + c] - mean) * (probs[i * C + c] - mean);
        out.stats[class_ids[c]] = {mean, ss / static_cast<double>(n), n};
    }
    return out;
}

void update_queue(ConfidenceDistributionTable& table, const SessionStats& fresh, int session, QueueMode mode,
                  double rho) {
    if (session <= table.last_session)
        throw StateError("update_queue: session " + std::to_string(session) + " is not after " +
                         std::to_string(table.last_session));
    for (const auto& [id, s] : fresh.stats) {
        auto it = table.current.find(id);
        if (mode == QueueMode::Ema && it != table.current.end()) {
            it->second.mean = rho * it->second.mean + (1.0 - rho) * s.mean;
            it->second.var = rho * it->second.var + (1.0 - rho) * s.var;
            it->second.count = s.count;
        } else {
            table.current[id] = s;
        }
        table.history[id][session] = s.mean;
    }
    table.last_session = session;
}

void validate(const PseudoLabelConfig& cfg) {
    if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0)) throw ConfigError("re.epsilon must lie in (0, 1)");
    if (cfg.top_k < 1) throw ConfigError("re.top_k must be >= 1");
    if (!(cfg.fallback > 0.0 && cfg.fallback < 1.0)) throw ConfigError("re.fallback must lie in (0, 1)");
    if (!(cfg.ema_rho >= 0.0 && cfg.ema_rho <= 1.0)) throw ConfigError("re.ema_rho must lie in [0, 1]");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::RE: return "re";
        case Strategy::Static: return "static";
        case Strategy::TopK: return "topk";
    }
    return "re";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "re") return Strategy::RE;
    if (name == "static") return Strategy::Static;
    if (name == "topk") return Strategy::TopK;
    throw ConfigError("unknown pseudo-label strategy '" + name + "' (expected re, static or topk)");
}

LabelVector pseudo_label_re(std::span<const double> probs, std::span<const double> thresholds) {
    if (probs.size() != thresholds.size()) throw ShapeError("pseudo_label_re: one threshold per class is required");
    LabelVector y(probs.size(), 0);
    for (std::size_t k = 0; k < probs.size(); ++k) y[k] = probs[k] >= thresholds[k] ? 1 : 0;
    return y;
}

LabelVector pseudo_label_static(std::span<const double> probs, double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ContractError("pseudo_label_static: epsilon must lie in (0, 1)");
    LabelVector y(probs.size(), 0);
    for (std::size_t k = 0; k < probs.size(); ++k) y[k] = probs[k] >= epsilon ? 1 : 0;
    return y;
}

LabelVector pseudo_label_topk(std::span<const double> probs, int k) {
    if (k < 1) throw ContractError("pseudo_label_topk: K must be >= 1");
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    LabelVector y(probs.size(), 0);
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), probs.size());
    for (std::size_t i = 0; i < take; ++i) y[order[i]] = 1;
    return y;
}

LabelVector pseudo_labels(std::span<const double> probs, std::span<const int> class_ids,
                          const ConfidenceDistributionTable& table, const PseudoLabelConfig& cfg) {
    if (probs.size() != class_ids.size()) throw ShapeError("pseudo_labels: one class id per probability");
    switch (cfg.strategy) {
        case Strategy::Static: return pseudo_label_static(probs, cfg.epsilon);
        case Strategy::TopK: return pseudo_label_topk(probs, cfg.top_k);
        case Strategy::RE: break;
    }
    std::vector<double> thr(class_ids.size());
    for (std::size_t k = 0; k < class_ids.size(); ++k) thr[k] = table.threshold(class_ids[k], cfg.sigma_c, cfg.fallback);
    return pseudo_label_re(probs, thr);
}

double confidence_forgetting(const std::map<int, double>& history, int final_session) {
    auto last = history.find(final_session);
    if (last == history.end())
        throw MetricError("confidence_forgetting: no mean confidence recorded at session " +
                          std::to_string(final_session));
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [t, mu] : history)
        if (t < final_session) best = std::max(best, mu - last->second);
    if (!std::isfinite(best))
        throw MetricError("confidence_forgetting: no history before session " + std::to_string(final_session));
    return best;
}

}  // namespace hcp::recall
