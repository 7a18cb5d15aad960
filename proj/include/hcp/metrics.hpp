#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <vector>

namespace hcp::metrics {

/// Scores and ground truth for N samples over M classes, row-major.
struct PredictionMatrix {
    std::size_t n = 0, m = 0;
    std::vector<double> scores;
    std::vector<std::uint8_t> truths;
    std::vector<int> class_ids;   // size m
    std::vector<int> sample_ids;  // size n; used for tie-breaking
    int session = 0;

    void validate() const;
};

/// Plain (non-interpolated) AP: mean precision at the rank of each positive,
/// ranking by descending score with ties broken by the lower sample id.
/// Throws MetricError when the column has no positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> truths,
                         std::span<const int> sample_ids = {});

struct MapResult {
    double map = 0.0;
    std::vector<double> per_class;  // NaN for excluded columns
    std::vector<int> excluded;      // class ids without positives
};

MapResult map_over_classes(const PredictionMatrix& pm);

struct F1Result {
    double cf1 = 0.0;
    double of1 = 0.0;
};

F1Result f1_scores(const PredictionMatrix& pm, double threshold = 0.5);

struct Accuracies {
    double avg = 0.0;
    double last = 0.0;
};

Accuracies session_accuracies(std::span<const double> session_maps);

/// Returned when the within-group dispersion vanishes but the groups differ.
inline constexpr double kInfiniteSeparation = std::numeric_limits<double>::infinity();

/// Calinski-Harabasz index of `features` ([N x d], row-major) grouped by
/// `labels`.
double calinski_harabasz(std::span<const double> features, std::size_t d, std::span<const int> labels);

struct SessionResult {
    int session = 0;
    double map = 0.0;
    double cf1 = 0.0;
    double of1 = 0.0;
    std::map<int, double> per_class_ap;
    std::map<int, double> per_class_forgetting;
    double ch_index = 0.0;
    double wall_time = 0.0;  // seconds; never part of reproducible outputs
};

}  // namespace hcp::metrics
