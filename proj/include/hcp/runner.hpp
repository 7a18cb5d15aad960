#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcp/losses.hpp"
#include "hcp/metrics.hpp"
#include "hcp/probe.hpp"
#include "hcp/purifier.hpp"
#include "hcp/recall.hpp"
#include "hcp/synth_data.hpp"

namespace hcp::runner {

struct ProtocolConfig {
    int base = 10;
    int increment = 2;
};

struct TrainConfig {
    bool fp = true;  // freeze old embeddings and the stability head
    int epochs = 15;
    int batch = 32;
    double lr_base = 1e-3;
    double lr_incremental = 5e-4;
    double weight_decay = 1e-4;
    int blocks = 3;
    int heads = 2;
    bool pre_norm = true;
    int eval_batch = 128;
    double f1_threshold = 0.5;
};

struct OutputConfig {
    std::string dir = "out";
    bool checkpoints = true;
    bool save_dataset = false;
};

struct ExperimentConfig {
    data::DatasetConfig dataset;
    bool dataset_seed_fixed = false;  // dataset.seed given explicitly; otherwise it follows `seed`
    ProtocolConfig protocol;
    TrainConfig train;
    bool re_enabled = false;
    recall::PseudoLabelConfig re;
    probe::ProbeConfig pu;
    loss::LossConfig loss;
    OutputConfig out;
    std::uint64_t seed = 0;

    std::string variant() const;  // FT, FP, FP+RE, FP+PU or FP+RE+PU
};

void validate(const ExperimentConfig& cfg);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The five ablation variants applied on top of `base`.
std::vector<std::string> ablation_variants();
ExperimentConfig with_variant(ExperimentConfig base, const std::string& variant);

/// Independent RNG stream for one (seed, session, purpose, a, b) tuple.
enum class Stream : std::uint64_t { Init = 1, Expand = 2, Shuffle = 3, Mix = 4 };
std::mt19937_64 rng_stream(std::uint64_t seed, int session, Stream purpose, std::uint64_t a = 0,
                           std::uint64_t b = 0);

data::DatasetConfig effective_dataset_config(const ExperimentConfig& cfg);

/// Everything needed to continue an experiment after session `session`.
struct ExperimentState {
    int session = 0;
    model::PurifierModel model;
    recall::ConfidenceDistributionTable queue;  // pseudo-label thresholds
    recall::ConfidenceDistributionTable eval_history;  // test-split confidences, for F_k
    std::vector<metrics::SessionResult> results;
};

/// Probabilities (and optionally purified class features) of `model` on the
/// selected samples, evaluated without gradients. probs is [n x M] in the
/// model's class order; features is [n x M x d].
struct Predictions {
    std::size_t n = 0, m = 0, d = 0;
    std::vector<double> probs;
    std::vector<double> features;
};
Predictions predict(const model::PurifierModel& model, std::span<const data::MultiLabelSample> samples,
                    std::span<const std::size_t> indices, bool keep_features, int batch = 128);

/// Metrics of `model` over the test split for the classes it knows.
metrics::SessionResult evaluate(const model::PurifierModel& model, std::span<const data::MultiLabelSample> test,
                                double f1_threshold = 0.5, int batch = 128);

class Experiment {
public:
    Experiment(ExperimentConfig cfg, const data::Dataset& dataset);

    const ExperimentConfig& config() const { return cfg_; }
    const data::SessionProtocol& protocol() const { return protocol_; }
    const ExperimentState& state() const { return state_; }
    void set_state(ExperimentState s) { state_ = std::move(s); }

    /// Trains and evaluates session `t`; t must be state().session + 1.
    const metrics::SessionResult& run_session(int t);
    void run_all();

    /// Called after each session with the bytes of the frozen state before
    /// and after training (used to check the freeze contract).
    std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>> frozen_snapshots;

private:
    void train_session(int t, std::span<const std::size_t> pool,
                       const std::vector<data::LabelVector>& effective);

    ExperimentConfig cfg_;
    const data::Dataset& data_;
    data::SessionProtocol protocol_;
    std::vector<std::vector<std::size_t>> pools_;
    ExperimentState state_;
};

// --- artifacts --------------------------------------------------------------

inline constexpr int kResultsSchemaVersion = 1;
inline constexpr int kCheckpointSchemaVersion = 1;

nlohmann::json session_result_to_json(const metrics::SessionResult& r);
metrics::SessionResult session_result_from_json(const nlohmann::json& j);

nlohmann::json results_json(const ExperimentConfig& cfg, const ExperimentState& state);
std::string sessions_csv(const ExperimentState& state);

nlohmann::json checkpoint_json(const ExperimentConfig& cfg, const ExperimentState& state);
void save_checkpoint(const ExperimentConfig& cfg, const ExperimentState& state, const std::filesystem::path& path);
struct LoadedCheckpoint {
    ExperimentConfig config;
    ExperimentState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Parses a JSON file; syntax errors become ParseError with the byte offset.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
/// Creates `dir` and checks that a file can be written there.
void ensure_writable_dir(const std::filesystem::path& dir);

struct RunOutcome {
    ExperimentState state;
    double wall_seconds = 0.0;
    bool frozen_intact = true;  // frozen bytes unchanged by every session trained here
    std::size_t frozen_bytes_checked = 0;
};

/// Full experiment with artifacts under `out_dir`. When `resume` is given the
/// run continues from it.
RunOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                          std::optional<ExperimentState> resume = std::nullopt, const data::Dataset* dataset = nullptr);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double avg_acc = 0.0;
    double last_acc = 0.0;
    double mean_forgetting = 0.0;
    double final_ch = 0.0;
    double wall_seconds = 0.0;
    bool frozen_intact = true;
    std::size_t frozen_bytes_checked = 0;
};

/// The five variants over seeds base.seed .. base.seed + seeds - 1, each in
/// out_dir/<variant>/seed_<s>. Variants that agree on everything that affects
/// session 1 share its result.
std::vector<AblationRow> ablate(const ExperimentConfig& base, int seeds, const std::filesystem::path& out_dir);

/// Mean final-session F_k over the classes learned before the last session.
double mean_old_forgetting(const ExperimentState& state);

std::string summary_markdown(const std::vector<AblationRow>& rows);
nlohmann::json summary_json(const std::vector<AblationRow>& rows);

}  // namespace hcp::runner
