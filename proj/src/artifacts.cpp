#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <sstream>

#include "hcp/errors.hpp"
#include "hcp/runner.hpp"

namespace hcp::runner {

namespace {

nlohmann::json id_map(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

std::map<int, double> id_map_from(const nlohmann::json& j) {
    std::map<int, double> m;
    for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
    return m;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string fmt(double v, int prec = 4) {
    if (std::isinf(v)) return "inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
}

}  // namespace

nlohmann::json session_result_to_json(const metrics::SessionResult& r) {
    nlohmann::json j{{"session", r.session},
                     {"map", r.map},
                     {"cf1", r.cf1},
                     {"of1", r.of1},
                     {"per_class_ap", id_map(r.per_class_ap)},
                     {"per_class_forgetting", id_map(r.per_class_forgetting)}};
    // JSON has no infinities: a vanished within-group spread is flagged.
    j["ch_capped"] = std::isinf(r.ch_index);
    j["ch_index"] = std::isfinite(r.ch_index) ? nlohmann::json(r.ch_index) : nlohmann::json(nullptr);
    return j;
}

metrics::SessionResult session_result_from_json(const nlohmann::json& j) {
    metrics::SessionResult r;
    r.session = j.at("session").get<int>();
    r.map = j.at("map").get<double>();
    r.cf1 = j.at("cf1").get<double>();
    r.of1 = j.at("of1").get<double>();
    r.per_class_ap = id_map_from(j.at("per_class_ap"));
    r.per_class_forgetting = id_map_from(j.at("per_class_forgetting"));
    if (j.at("ch_index").is_null())
        r.ch_index = j.value("ch_capped", false) ? metrics::kInfiniteSeparation : std::numeric_limits<double>::quiet_NaN();
    else
        r.ch_index = j.at("ch_index").get<double>();
    return r;
}

nlohmann::json results_json(const ExperimentConfig& cfg, const ExperimentState& state) {
    nlohmann::json sessions = nlohmann::json::array();
    std::vector<double> maps;
    for (const auto& r : state.results) {
        sessions.push_back(session_result_to_json(r));
        maps.push_back(r.map);
    }
    nlohmann::json summary = nlohmann::json::object();
    if (!maps.empty()) {
        const auto acc = metrics::session_accuracies(maps);
        const auto& last = state.results.back();
        summary = {{"avg_acc", acc.avg},
                   {"last_acc", acc.last},
                   {"last_cf1", last.cf1},
                   {"last_of1", last.of1},
                   {"mean_forgetting", mean_old_forgetting(state)},
                   {"per_class_forgetting", id_map(last.per_class_forgetting)}};
    }
    return {{"schema_version", kResultsSchemaVersion},
            {"variant", cfg.variant()},
            {"seed", cfg.seed},
            {"config", config_to_json(cfg)},
            {"sessions", sessions},
            {"summary", summary}};
}

std::string sessions_csv(const ExperimentState& state) {
    std::ostringstream o;
    o << std::setprecision(17);
    o << "session,mAP,CF1,OF1,per_class_AP,per_class_F,CH_index\n";
    auto pairs = [](const std::map<int, double>& m) {
        std::ostringstream s;
        s << std::setprecision(17);
        bool first = true;
        for (const auto& [k, v] : m) {
            s << (first ? "" : ";") << k << ':' << v;
            first = false;
        }
        return s.str();
    };
    for (const auto& r : state.results)
        o << r.session << ',' << r.map << ',' << r.cf1 << ',' << r.of1 << ",\"" << pairs(r.per_class_ap) << "\",\""
          << pairs(r.per_class_forgetting) << "\"," << (std::isinf(r.ch_index) ? std::string("inf") : [&] {
                 std::ostringstream c;
                 c << std::setprecision(17) << r.ch_index;
                 return c.str();
             }()) << '\n';
    return o.str();
}

nlohmann::json checkpoint_json(const ExperimentConfig& cfg, const ExperimentState& state) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& r : state.results) results.push_back(session_result_to_json(r));
    return {{"schema_version", kCheckpointSchemaVersion},
            {"session", state.session},
            {"config", config_to_json(cfg)},
            {"model", state.model.to_json()},
            {"queue", state.queue.to_json()},
            {"eval_history", state.eval_history.to_json()},
            {"results", results}};
}

void save_checkpoint(const ExperimentConfig& cfg, const ExperimentState& state, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_text_file(path, checkpoint_json(cfg, state).dump());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    try {
        const int version = j.at("schema_version").get<int>();
        if (version > kCheckpointSchemaVersion)
            throw SchemaError("checkpoint schema version " + std::to_string(version) +
                              " is newer than this build supports (" + std::to_string(kCheckpointSchemaVersion) +
                              "); upgrade hcp to read it");
        if (version < 1) throw SchemaError("checkpoint schema version " + std::to_string(version) + " is invalid");
        LoadedCheckpoint out;
        out.config = config_from_json(j.at("config"));
        out.state.session = j.at("session").get<int>();
        out.state.model = model::PurifierModel::from_json(j.at("model"));
        out.state.queue = recall::ConfidenceDistributionTable::from_json(j.at("queue"));
        out.state.eval_history = recall::ConfidenceDistributionTable::from_json(j.at("eval_history"));
        for (const auto& r : j.at("results")) out.state.results.push_back(session_result_from_json(r));
        if (out.state.model.session() != out.state.session ||
            out.state.results.size() != static_cast<std::size_t>(out.state.session))
            throw SchemaError("checkpoint '" + path.string() + "' is internally inconsistent");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("checkpoint '" + path.string() + "': " + e.what());
    }
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                          std::optional<ExperimentState> resume, const data::Dataset* dataset) {
    validate(cfg);
    ensure_writable_dir(out_dir);
    const auto start = std::chrono::steady_clock::now();
    data::Dataset generated;
    if (!dataset) {
        generated = data::generate_dataset(effective_dataset_config(cfg));
        dataset = &generated;
    }
    if (cfg.out.save_dataset) write_text_file(out_dir / "dataset.json", data::dataset_to_json(*dataset).dump());

    Experiment exp(cfg, *dataset);
    if (resume) {
        if (resume->session > exp.protocol().sessions())
            throw StateError("resume state is past the last session of the protocol");
        exp.set_state(std::move(*resume));
        if (cfg.out.checkpoints && exp.state().session > 0)
            save_checkpoint(cfg, exp.state(),
                            out_dir / "checkpoints" / ("session_" + std::to_string(exp.state().session) + ".json"));
    }
    for (int t = exp.state().session + 1; t <= exp.protocol().sessions(); ++t) {
        exp.run_session(t);
        if (cfg.out.checkpoints)
            save_checkpoint(cfg, exp.state(), out_dir / "checkpoints" / ("session_" + std::to_string(t) + ".json"));
    }

    RunOutcome out;
    out.state = exp.state();
    for (const auto& [before, after] : exp.frozen_snapshots) {
        out.frozen_intact = out.frozen_intact && before == after;
        out.frozen_bytes_checked += before.size();
    }
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text_file(out_dir / "results.json", results_json(cfg, out.state).dump(2) + "\n");
    write_text_file(out_dir / "sessions.csv", sessions_csv(out.state));
    nlohmann::json timing = nlohmann::json::array();
    for (const auto& r : out.state.results) timing.push_back({{"session", r.session}, {"seconds", r.wall_time}});
    write_text_file(out_dir / "timing.json",
                    nlohmann::json{{"sessions", timing}, {"total_seconds", out.wall_seconds}}.dump(2) + "\n");
    return out;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base, int seeds, const std::filesystem::path& out_dir) {
    if (seeds < 1) throw ConfigError("ablate needs at least one seed");
    validate(base);
    ensure_writable_dir(out_dir);
    const auto variants = ablation_variants();
    std::vector<std::vector<AblationRow>> per_seed(static_cast<std::size_t>(seeds));
    std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < seeds; ++i) {
        try {
            ExperimentConfig seeded = base;
            seeded.seed = base.seed + static_cast<std::uint64_t>(i);
            const auto ds = data::generate_dataset(effective_dataset_config(seeded));
            // Session 1 has no old classes, so only the unknown head changes
            // it; every variant resumes from one of two shared states.
            struct First {
                ExperimentState state;
                double seconds = 0.0;
                bool intact = true;
                std::size_t bytes = 0;
            };
            std::map<bool, First> first;
            for (bool pu : {false, true}) {
                const auto t0 = std::chrono::steady_clock::now();
                Experiment exp(with_variant(seeded, pu ? "FP+PU" : "FP"), ds);
                exp.run_session(1);
                const auto& [before, after] = exp.frozen_snapshots.front();
                first[pu] = {exp.state(),
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                             before == after, before.size()};
            }
            for (const auto& v : variants) {
                const auto cfg = with_variant(seeded, v);
                const auto dir = out_dir / v / ("seed_" + std::to_string(seeded.seed));
                const auto& s1 = first.at(cfg.pu.enabled);
                const auto outcome = run_experiment(cfg, dir, s1.state, &ds);
                std::vector<double> maps;
                for (const auto& r : outcome.state.results) maps.push_back(r.map);
                const auto acc = metrics::session_accuracies(maps);
                per_seed[static_cast<std::size_t>(i)].push_back({v, seeded.seed, acc.avg, acc.last,
                                                                 mean_old_forgetting(outcome.state),
                                                                 outcome.state.results.back().ch_index,
                                                                 outcome.wall_seconds + s1.seconds,
                                                                 outcome.frozen_intact && s1.intact,
                                                                 outcome.frozen_bytes_checked + s1.bytes});
            }
        } catch (...) {
#pragma omp critical(hcp_ablate_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<AblationRow> rows;
    for (const auto& v : variants)
        for (const auto& seed_rows : per_seed)
            for (const auto& r : seed_rows)
                if (r.variant == v) rows.push_back(r);
    write_text_file(out_dir / "summary.json", summary_json(rows).dump(2) + "\n");
    write_text_file(out_dir / "summary.md", summary_markdown(rows));
    return rows;
}

nlohmann::json summary_json(const std::vector<AblationRow>& rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : rows)
        runs.push_back({{"variant", r.variant},
                        {"seed", r.seed},
                        {"avg_acc", r.avg_acc},
                        {"last_acc", r.last_acc},
                        {"mean_forgetting", r.mean_forgetting},
                        {"final_ch", std::isfinite(r.final_ch) ? nlohmann::json(r.final_ch) : nlohmann::json(nullptr)},
                        {"frozen_intact", r.frozen_intact},
                        {"wall_seconds", r.wall_seconds}});
    return {{"schema_version", kResultsSchemaVersion}, {"runs", runs}};
}

std::string summary_markdown(const std::vector<AblationRow>& rows) {
    std::ostringstream o;
    o << "| variant | seed | Avg. Acc | Last Acc | mean F_k | C-H |\n|---|---|---|---|---|---|\n";
    std::map<std::string, std::vector<const AblationRow*>> by_variant;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (!by_variant.count(r.variant)) order.push_back(r.variant);
        by_variant[r.variant].push_back(&r);
        o << "| " << r.variant << " | " << r.seed << " | " << fmt(100.0 * r.avg_acc, 2) << " | "
          << fmt(100.0 * r.last_acc, 2) << " | " << fmt(r.mean_forgetting) << " | " << fmt(r.final_ch, 2) << " |\n";
    }
    o << "\n| variant | runs | mean Avg. Acc | mean Last Acc | mean F_k | mean C-H |\n|---|---|---|---|---|---|\n";
    for (const auto& v : order) {
        std::vector<double> a, l, f, c;
        for (const auto* r : by_variant[v]) {
            a.push_back(r->avg_acc);
            l.push_back(r->last_acc);
            f.push_back(r->mean_forgetting);
            c.push_back(r->final_ch);
        }
        o << "| " << v << " | " << a.size() << " | " << fmt(100.0 * mean_of(a), 2) << " | "
          << fmt(100.0 * mean_of(l), 2) << " | " << fmt(mean_of(f)) << " | " << fmt(mean_of(c), 2) << " |\n";
    }
    return o.str();
}

}  // namespace hcp::runner
