#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Recall enhancement: per-class confidence distributions of a finished
// model, class-specific pseudo-label thresholds derived from them, and the
// confidence-forgetting metric over their history.
namespace hcp::recall {

using LabelVector = std::vector<std::uint8_t>;

struct ClassStats {
    double mean = 0.0;
    double var = 0.0;  // over the positive samples only
    long count = 0;
};

struct SessionStats {
    std::map<int, ClassStats> stats;
    std::vector<int> excluded;  // classes without any positive sample
};

enum class QueueMode { Replace, Ema };

struct ConfidenceDistributionTable {
    std::map<int, ClassStats> current;
    std::map<int, std::map<int, double>> history;  // class -> session -> mean
    int last_session = 0;

    const ClassStats* find(int class_id) const;
    /// mu_k - sigma_c * sigma_k, or `fallback` when the class has no entry.
    double threshold(int class_id, double sigma_c, double fallback) const;

    nlohmann::json to_json() const;
    static ConfidenceDistributionTable from_json(const nlohmann::json& j);
};

/// Mean and variance of the probabilities of each class over the samples
/// where it is positive. `probs` and `positives` are row-major [N x C] with
/// columns in the order of `class_ids`.
SessionStats fit_distributions(std::span<const double> probs, std::span<const std::uint8_t> positives,
                               std::span<const int> class_ids);

/// Folds one session's statistics into the table (replace, or EMA with
/// table <- rho * table + (1 - rho) * new) and appends the new means to the
/// history. Sessions must strictly increase.
void update_queue(ConfidenceDistributionTable& table, const SessionStats& fresh, int session,
                  QueueMode mode = QueueMode::Replace, double rho = 0.5);

enum class Strategy { RE, Static, TopK };

struct PseudoLabelConfig {
    Strategy strategy = Strategy::RE;
    double epsilon = 0.9;   // static threshold
    int top_k = 2;
    double sigma_c = 0.0;   // RE threshold = mu - sigma_c * sigma
    double fallback = 0.8;  // RE threshold for classes without statistics
    QueueMode queue_mode = QueueMode::Replace;
    double ema_rho = 0.5;
};

void validate(const PseudoLabelConfig& cfg);
std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

LabelVector pseudo_label_re(std::span<const double> probs, std::span<const double> thresholds);
LabelVector pseudo_label_static(std::span<const double> probs, double epsilon);
LabelVector pseudo_label_topk(std::span<const double> probs, int k);

/// Dispatches on cfg.strategy. `class_ids` names the columns of `probs`.
LabelVector pseudo_labels(std::span<const double> probs, std::span<const int> class_ids,
                          const ConfidenceDistributionTable& table, const PseudoLabelConfig& cfg);

/// F_k = max over t < T of (mu_{t,k} - mu_{T,k}).
double confidence_forgetting(const std::map<int, double>& history, int final_session);

}  // namespace hcp::recall
