#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcp/tensor.hpp"

// Synthetic multi-label data: patch-token grids with planted class
// prototypes, and the Bi-Cj session protocol over them.
namespace hcp::data {

using LabelVector = std::vector<std::uint8_t>;
using Matrix = std::vector<std::vector<double>>;

struct ClassSpec {
    int class_id = 0;
    std::string name;
    std::vector<double> prototype;  // unit norm
    int occupancy = 1;
};

struct DatasetConfig {
    int num_classes = 20;
    int d = 16;
    int h = 4;
    int w = 4;
    int samples_per_session = 600;
    // Number of sessions the training split is sized for (train size is
    // samples_per_session * sessions); the runner sets it from the protocol.
    int sessions = 1;
    int test_samples = 1000;
    // Pairwise co-presence probabilities; cooccurrence[a][j] is the chance
    // that j appears given anchor class a. Empty means "build the default".
    Matrix cooccurrence;
    double base_cooccurrence = 0.03;
    double partner_cooccurrence = 0.3;
    int partners = 2;
    double noise_std = 0.3;
    int occupancy = 2;
    std::uint64_t seed = 0;
    std::vector<std::string> names;  // optional; defaults per num_classes

    int tokens() const { return h * w; }
};

void validate(const DatasetConfig& cfg);

struct MultiLabelSample {
    int sample_id = 0;
    ad::Tensor tokens;     // [L, d]
    LabelVector labels_full;  // indexed by class id
};

struct Dataset {
    DatasetConfig config;
    std::vector<ClassSpec> classes;
    std::vector<MultiLabelSample> train;
    std::vector<MultiLabelSample> test;
};

std::vector<std::string> default_class_names(int num_classes);

/// Symmetric co-occurrence matrix: every pair at `base`, plus `partners`
/// random partner links per class at `partner` probability.
Matrix default_cooccurrence(int num_classes, double base, double partner, int partners, std::uint64_t seed);

/// Label draw: an anchor class uniformly at random, then every other class j
/// independently with probability cooc[anchor][j]. Always non-empty.
LabelVector sample_labels(const Matrix& cooc, std::mt19937_64& rng);

/// Expected number of positives under sample_labels.
double expected_cardinality(const Matrix& cooc);

Dataset generate_dataset(const DatasetConfig& cfg);

// --- protocol ----------------------------------------------------------------

struct SessionProtocol {
    int base = 0;
    int increment = 1;
    std::vector<std::vector<int>> partitions;  // C_1..C_T, class ids in name order

    int sessions() const { return static_cast<int>(partitions.size()); }
    const std::vector<int>& classes(int t) const;      // C_t, 1-based t
    std::vector<int> seen_through(int t) const;        // C_1 u ... u C_t, in learning order
    int session_of(int class_id) const;                // 0 if unknown
    int num_classes() const;
};

SessionProtocol build_protocol(int num_classes, int base, int increment, std::span<const std::string> names);

/// Indices into `train` of the samples with at least one positive in C_t,
/// one pool per session. A sample may enter several pools.
std::vector<std::vector<std::size_t>> assign_sessions(std::span<const MultiLabelSample> train,
                                                      const SessionProtocol& protocol);

/// Training view of a sample at session t: its labels restricted to C_t, in
/// partition order.
LabelVector mask_labels(const MultiLabelSample& sample, int t, const SessionProtocol& protocol);

// --- JSON -------------------------------------------------------------------

nlohmann::json config_to_json(const DatasetConfig& cfg);
DatasetConfig config_from_json(const nlohmann::json& j);
nlohmann::json dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const nlohmann::json& j);

}  // namespace hcp::data
