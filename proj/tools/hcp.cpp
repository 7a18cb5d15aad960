// Command-line front end: run, ablate, eval, gradcheck, report.
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hcp/alloc.hpp"
#include "hcp/errors.hpp"
#include "hcp/model_check.hpp"
#include "hcp/runner.hpp"

namespace fs = std::filesystem;
using namespace hcp;

namespace {

constexpr int kUsageExit = 2;

std::uint64_t resolve_seed(const runner::ExperimentConfig& cfg, const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("HCP_SEED"); env && *env) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument(env);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(std::string("HCP_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    return cfg.seed;
}

std::string pct(double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << 100.0 * v;
    return o.str();
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::string> out,
            std::optional<std::string> resume) {
    auto cfg = runner::load_config(config);
    cfg.seed = resolve_seed(cfg, seed);
    if (out) cfg.out.dir = *out;
    std::optional<runner::ExperimentState> state;
    if (resume) {
        auto ck = runner::load_checkpoint(*resume);
        auto a = runner::config_to_json(ck.config), b = runner::config_to_json(cfg);
        a.erase("out");
        b.erase("out");
        if (a != b) throw ConfigError("checkpoint '" + *resume + "' was written for a different configuration");
        state = std::move(ck.state);
    }
    const auto outcome = runner::run_experiment(cfg, cfg.out.dir, std::move(state));
    for (const auto& r : outcome.state.results)
        std::cout << "session " << r.session << ": mAP " << pct(r.map) << " CF1 " << pct(r.cf1) << " OF1 "
                  << pct(r.of1) << "\n";
    std::vector<double> maps;
    for (const auto& r : outcome.state.results) maps.push_back(r.map);
    const auto acc = metrics::session_accuracies(maps);
    std::cout << cfg.variant() << " seed " << cfg.seed << ": Avg. Acc " << pct(acc.avg) << " Last Acc "
              << pct(acc.last) << " -> " << (fs::path(cfg.out.dir) / "results.json").string() << "\n";
    return 0;
}

int cmd_ablate(const std::string& config, int seeds, std::optional<std::uint64_t> seed,
               std::optional<std::string> out) {
    auto cfg = runner::load_config(config);
    cfg.seed = resolve_seed(cfg, seed);
    if (out) cfg.out.dir = *out;
    const auto rows = runner::ablate(cfg, seeds, cfg.out.dir);
    std::cout << runner::summary_markdown(rows);
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_path, double threshold) {
    const auto ck = runner::load_checkpoint(checkpoint);
    const auto ds = data::dataset_from_json(runner::read_json_file(dataset_path));
    for (int id : ck.state.model.class_ids())
        if (id < 0 || id >= static_cast<int>(ds.classes.size()))
            throw DatasetError("checkpoint class id " + std::to_string(id) + " is not in the dataset");
    const auto r = runner::evaluate(ck.state.model, ds.test, threshold, ck.config.train.eval_batch);
    std::cout << runner::session_result_to_json(r).dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    runner::GradCheckSetup setup;
    setup.seed = seed;
    const auto rep = runner::purifier_gradcheck(setup);
    const bool ok = rep.max_rel_error < 1e-4;
    std::cout << "max relative error " << std::scientific << std::setprecision(3) << rep.max_rel_error << " over "
              << rep.checked << " coordinates: " << (ok ? "PASS" : "FAIL") << " (tolerance 1e-4)\n";
    return ok ? 0 : 1;
}

struct ReportRow {
    std::string path, variant;
    std::uint64_t seed = 0;
    nlohmann::json summary;
    std::size_t sessions = 0;
};

int cmd_report(const std::string& in, const std::string& format) {
    if (!fs::is_directory(in)) throw IoError("'" + in + "' is not a directory");
    std::vector<ReportRow> rows;
    for (const auto& entry : fs::recursive_directory_iterator(in)) {
        if (!entry.is_regular_file() || entry.path().filename() != "results.json") continue;
        const auto j = runner::read_json_file(entry.path());
        const int version = j.value("schema_version", 0);
        if (version != runner::kResultsSchemaVersion)
            throw SchemaError("'" + entry.path().string() + "' has results schema version " + std::to_string(version));
        rows.push_back({fs::relative(entry.path().parent_path(), in).string(), j.at("variant").get<std::string>(),
                        j.at("seed").get<std::uint64_t>(), j.at("summary"), j.at("sessions").size()});
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    if (rows.empty()) throw IoError("no results.json under '" + in + "'");
    const char* keys[] = {"avg_acc", "last_acc", "last_cf1", "last_of1", "mean_forgetting"};
    if (format == "json") {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json o{{"run", r.path}, {"variant", r.variant}, {"seed", r.seed}, {"sessions", r.sessions}};
            for (const char* k : keys) o[k] = r.summary.at(k);
            out.push_back(o);
        }
        std::cout << out.dump(2) << "\n";
    } else if (format == "csv") {
        std::cout << "run,variant,seed,sessions,avg_acc,last_acc,last_cf1,last_of1,mean_forgetting\n";
        std::cout << std::setprecision(17);
        for (const auto& r : rows) {
            std::cout << r.path << ',' << r.variant << ',' << r.seed << ',' << r.sessions;
            for (const char* k : keys) std::cout << ',' << r.summary.at(k).get<double>();
            std::cout << '\n';
        }
    } else {
        std::cout << "| run | variant | seed | sessions | Avg. Acc | Last Acc | CF1 | OF1 | mean F_k |\n"
                     "|---|---|---|---|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            std::ostringstream f;
            f << std::fixed << std::setprecision(4) << r.summary.at("mean_forgetting").get<double>();
            std::cout << "| " << r.path << " | " << r.variant << " | " << r.seed << " | " << r.sessions << " | "
                      << pct(r.summary.at("avg_acc").get<double>()) << " | "
                      << pct(r.summary.at("last_acc").get<double>()) << " | "
                      << pct(r.summary.at("last_cf1").get<double>()) << " | "
                      << pct(r.summary.at("last_of1").get<double>()) << " | " << f.str() << " |\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Multi-label class-incremental learning experiments on synthetic data"};
    app.require_subcommand(1);

    std::string config, out_dir, resume, checkpoint, dataset, in_dir, format = "md";
    std::uint64_t seed = 0;
    int seeds = 1;
    double threshold = 0.5;

    auto* run = app.add_subcommand("run", "Train and evaluate every session of one configuration");
    run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* run_seed = run->add_option("--seed", seed, "Seed (overrides HCP_SEED and the config)");
    auto* run_out = run->add_option("--out", out_dir, "Output directory (overrides out.dir)");
    auto* run_resume = run->add_option("--resume", resume, "Continue from a session checkpoint")->check(CLI::ExistingFile);

    auto* abl = app.add_subcommand("ablate", "Run FT, FP, FP+RE, FP+PU and FP+RE+PU over several seeds");
    abl->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    abl->add_option("--seeds", seeds, "Number of consecutive seeds")->required()->check(CLI::PositiveNumber);
    auto* abl_seed = abl->add_option("--seed", seed, "First seed (overrides HCP_SEED and the config)");
    auto* abl_out = abl->add_option("--out", out_dir, "Output directory (overrides out.dir)");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
    ev->add_option("--checkpoint", checkpoint, "Session checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--dataset", dataset, "Dataset document (JSON)")->required()->check(CLI::ExistingFile);
    ev->add_option("--threshold", threshold, "F1 decision threshold")->check(CLI::Range(0.0, 1.0));

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full training graph");
    std::uint64_t gc_seed = 7;
    gc->add_option("--seed", gc_seed, "Seed of the random model and inputs");

    auto* rep = app.add_subcommand("report", "Summarize results.json files under a directory");
    rep->add_option("--in", in_dir, "Directory to scan")->required();
    rep->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json", "md"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return kUsageExit;
    }

    auto opt_seed = [&](CLI::Option* o) { return o->count() ? std::optional<std::uint64_t>(seed) : std::nullopt; };
    auto opt_str = [](CLI::Option* o, const std::string& v) {
        return o->count() ? std::optional<std::string>(v) : std::nullopt;
    };
    try {
        if (*run) return cmd_run(config, opt_seed(run_seed), opt_str(run_out, out_dir), opt_str(run_resume, resume));
        if (*abl) return cmd_ablate(config, seeds, opt_seed(abl_seed), opt_str(abl_out, out_dir));
        if (*ev) return cmd_eval(checkpoint, dataset, threshold);
        if (*gc) return cmd_gradcheck(gc_seed);
        if (*rep) return cmd_report(in_dir, format);
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
