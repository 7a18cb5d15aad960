#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hcp/tensor.hpp"

// Probing unknown knowledge: split the purified class features of one image
// into present / absent sets and mix the absent ones into a synthetic
// "unknown class" feature.
namespace hcp::probe {

struct ProbeConfig {
    bool enabled = false;
    double alpha = 1.0;
    double beta = 1.0;
    bool real_negative_targets = false;  // also train real features toward 0 on the unknown output
};

void validate(const ProbeConfig& cfg);

struct FeaturePartition {
    ad::Tensor present;  // [M1, d], empty tensor when M1 == 0
    ad::Tensor absent;   // [M2, d], empty tensor when M2 == 0
    std::vector<std::size_t> present_rows;
    std::vector<std::size_t> absent_rows;
    std::size_t m1() const { return present_rows.size(); }
    std::size_t m2() const { return absent_rows.size(); }
};

/// Row i goes to `present` iff y[i] == 1.
FeaturePartition partition_features(const ad::Tensor& o_s, std::span<const std::uint8_t> y);

/// Draws M2 independent Beta(alpha, beta) weights and normalizes them onto
/// the simplex. Draws that all come out ~0 are retried up to 8 times, then
/// the weights fall back to uniform.
std::vector<double> sample_weights(std::size_t m2, double alpha, double beta, std::mt19937_64& rng);

struct UnknownSample {
    ad::Tensor feature;  // [1, d]
    std::vector<double> weights;
    int target = 1;
};

/// Convex combination of the rows of `absent` [M2, d] with raw non-negative
/// weights `lambda`, normalized here. Throws DomainError if they sum to ~0.
UnknownSample mix_features(const ad::Tensor& absent, std::vector<double> lambda);

/// nullopt when there is no absent feature to mix.
std::optional<UnknownSample> synthesize_unknown(const ad::Tensor& absent, double alpha, double beta,
                                                std::mt19937_64& rng);

/// Mixing weights for a batch: [B, 1, M] with row b holding the simplex
/// weights over the absent entries of labels[b] (zeros elsewhere), so that
/// bmm(mix, O_S) yields one unknown feature per item. has_unknown[b] is 0 for
/// items without absent classes.
struct BatchMix {
    ad::Tensor mix;
    std::vector<std::uint8_t> has_unknown;
};
BatchMix batch_mixing(std::span<const std::vector<std::uint8_t>> labels, double alpha, double beta,
                      std::mt19937_64& rng);

}  // namespace hcp::probe
