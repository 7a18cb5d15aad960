#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcp/autodiff.hpp"

// Feature purification: one learnable embedding per class, attended jointly
// with the patch tokens through a stack of multi-head self-attention blocks.
// Each session appends embeddings for its new classes and freezes the old
// ones; a frozen stability head scores old classes and a trainable plasticity
// head scores the current ones plus one unknown output.
namespace hcp::model {

struct AttentionBlock {
    int heads = 1;
    bool pre_norm = true;
    ad::Tensor ln_gamma, ln_beta;  // [d], only used with pre_norm
    ad::Tensor wq, wk, wv, wo;     // [d, d], applied as X * W
    ad::Tensor bo;                 // [d]

    static AttentionBlock create(std::size_t d, int heads, bool pre_norm, std::mt19937_64& rng);
    std::vector<ad::Tensor*> params();
};

struct LinearHead {
    ad::Tensor weight;  // [rows, d]; row k scores class k
    ad::Tensor bias;    // [rows]

    std::size_t rows() const { return weight.shape()[0]; }
};

struct ClassEmbeddingBank {
    std::optional<ad::Tensor> frozen;  // S_{1:t-1}
    std::optional<ad::Tensor> trainable;  // S_t
    std::vector<int> class_ids;  // row -> class id, frozen rows first

    std::size_t frozen_rows() const { return frozen ? frozen->shape()[0] : 0; }
    std::size_t trainable_rows() const { return trainable ? trainable->shape()[0] : 0; }
    std::size_t rows() const { return frozen_rows() + trainable_rows(); }
};

struct ClassifierPair {
    std::optional<LinearHead> stability;   // old classes, frozen
    std::optional<LinearHead> plasticity;  // |C_t| real rows + unknown row

    std::size_t stability_rows() const { return stability ? stability->rows() : 0; }
    std::size_t plasticity_real_rows() const { return plasticity ? plasticity->rows() - 1 : 0; }
};

struct PurifierConfig {
    std::size_t d = 16;
    int heads = 2;
    int blocks = 3;
    bool pre_norm = true;
    double embedding_init_std = 0.02;
};

class PurifierModel {
public:
    PurifierModel() = default;
    static PurifierModel create(const PurifierConfig& cfg, std::mt19937_64& rng);

    /// Freezes the current trainable embeddings, appends fresh rows for
    /// `new_ids` and opens a plasticity head with |new_ids| + 1 outputs.
    /// With freeze_old = false (fine-tuning baseline) the old embeddings and
    /// the stability rows move back into the trainable bank and head instead.
    void expand_for_session(std::span<const int> new_ids, std::mt19937_64& rng, bool freeze_old = true);

    /// Folds the plasticity head's real rows into the stability head and drops
    /// the unknown row. Throws StateError when there is nothing to merge.
    void merge_classifiers();

    std::size_t d() const { return cfg_.d; }
    const PurifierConfig& config() const { return cfg_; }
    int session() const { return session_; }
    std::size_t num_classes() const { return bank_.rows(); }
    const std::vector<int>& class_ids() const { return bank_.class_ids; }

    ClassEmbeddingBank& bank() { return bank_; }
    const ClassEmbeddingBank& bank() const { return bank_; }
    std::vector<AttentionBlock>& blocks() { return blocks_; }
    const std::vector<AttentionBlock>& blocks() const { return blocks_; }
    ClassifierPair& classifiers() { return heads_; }
    const ClassifierPair& classifiers() const { return heads_; }

    /// Parameters updated during the current session.
    std::vector<ad::Tensor*> trainable_params();

    /// Raw bytes of everything that must stay fixed during a session: the
    /// frozen embeddings and the stability head.
    std::vector<std::uint8_t> frozen_state_bytes() const;

    nlohmann::json to_json() const;
    static PurifierModel from_json(const nlohmann::json& j);

private:
    PurifierConfig cfg_;
    std::vector<AttentionBlock> blocks_;
    ClassEmbeddingBank bank_;
    ClassifierPair heads_;
    int session_ = 0;
};

struct PurifyResult {
    ad::Var o_p;  // [B, L, d]
    ad::Var o_s;  // [B, M, d]
};

struct ForwardOptions {
    // Copies of every attention probability tensor, [B, N, N] per head.
    std::vector<ad::Tensor>* attention = nullptr;
};

/// Differentiable forward for training: parameters enter the tape as leaves.
PurifyResult forward_purify(ad::Tape& tape, PurifierModel& model, const ad::Tensor& tokens,
                            const ForwardOptions& opts = {});
/// Inference forward: parameters enter as read-only views.
PurifyResult forward_purify(ad::Tape& tape, const PurifierModel& model, const ad::Tensor& tokens,
                            const ForwardOptions& opts = {});

/// Diagonal class scores: row k of O_S through output k of its head.
/// Returns logits [B, M] (apply sigmoid for probabilities).
ad::Var classify(ad::Tape& tape, PurifierModel& model, ad::Var o_s);
ad::Var classify(ad::Tape& tape, const PurifierModel& model, ad::Var o_s);

/// Unknown-class logit of features [B, d] (or [B, 1, d]) through the
/// plasticity head's last output. Returns [B].
ad::Var unknown_logit(ad::Tape& tape, PurifierModel& model, ad::Var features);
ad::Var unknown_logit(ad::Tape& tape, const PurifierModel& model, ad::Var features);

nlohmann::json tensor_to_json(const ad::Tensor& t);
ad::Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace hcp::model
