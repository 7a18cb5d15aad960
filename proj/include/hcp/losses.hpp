#pragma once

#include "hcp/autodiff.hpp"

namespace hcp::loss {

struct LossConfig {
    double gamma_pos = 0.0;
    double gamma_neg = 4.0;
    double clip = 0.05;  // negative probability shift m
    double eps = 1e-8;   // probabilities are clipped to [eps, 1 - eps] before logs
};

void validate(const LossConfig& cfg);

/// sqrt(n_total / n_new): the loss weight of a current-session class when
/// n_total classes have been seen and n_new of them are new.
double new_class_weight(int n_total, int n_new);

/// Weighted asymmetric loss of one prediction vector:
///   -(1/K) * sum_k w_k * [ y_k (1-p_k)^g+ log p_k + (1-y_k) q_k^g- log(1-q_k) ]
/// with q_k = max(p_k - clip, 0). `probs`, `targets`, `weights` all have K
/// entries. Returns a scalar Var.
ad::Var wasl_loss(ad::Var probs, const ad::Tensor& targets, const ad::Tensor& weights, const LossConfig& cfg);

/// Batched form over [B, K]: entries with mask 0 are dropped and each row is
/// averaged over its own count of kept entries; rows are then averaged.
ad::Var wasl_batch(ad::Var probs, const ad::Tensor& targets, const ad::Tensor& weights, const ad::Tensor& mask,
                   const LossConfig& cfg);

}  // namespace hcp::loss
