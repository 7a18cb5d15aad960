// Acceptance suite: one PASS/FAIL line per criterion. The ablation grid runs
// once and feeds criteria 3 and 7 to 10.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hcp/alloc.hpp"
#include "hcp/metrics.hpp"
#include "hcp/model_check.hpp"
#include "hcp/probe.hpp"
#include "hcp/purifier.hpp"
#include "hcp/recall.hpp"
#include "hcp/runner.hpp"

namespace fs = std::filesystem;
using namespace hcp;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
    if (!ok) ++failures;
    std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class... T>
std::string cat(const T&... parts) {
    std::ostringstream o;
    o << std::setprecision(6);
    (o << ... << parts);
    return o.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void gradient_fidelity() {
    const auto t0 = Clock::now();
    const auto rep = runner::purifier_gradcheck({});
    const double secs = seconds_since(t0);
    report(1, "gradient fidelity", rep.max_rel_error < 1e-4 && secs < 10.0,
           cat("max relative error ", rep.max_rel_error, " over ", rep.checked, " coordinates in ", secs, " s"));
}

void attention_normalization() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> scale(0.1, 20.0);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    std::size_t rows = 0;
    bool nonneg = true;
    for (int pass = 0; pass < 1000; ++pass) {
        model::PurifierConfig pc;
        pc.d = 8;
        pc.heads = 1 + pass % 2;
        pc.blocks = 1 + pass % 3;
        pc.pre_norm = pass % 4 != 0;
        auto m = model::PurifierModel::create(pc, rng);
        std::vector<int> ids(1 + rng() % 6);
        std::iota(ids.begin(), ids.end(), 0);
        m.expand_for_session(ids, rng);
        const std::size_t batch = 1 + rng() % 3, tokens = 1 + rng() % 9;
        ad::Tensor tok({batch, tokens, pc.d});
        const double s = scale(rng);
        for (double& v : tok.data()) v = s * n(rng);
        std::vector<ad::Tensor> attn;
        ad::Tape tape;
        model::forward_purify(tape, std::as_const(m), tok, {&attn});
        for (const auto& a : attn) {
            const std::size_t w = a.shape().back();
            for (std::size_t r = 0; r < a.size() / w; ++r, ++rows) {
                double sum = 0.0;
                for (std::size_t c = 0; c < w; ++c) {
                    nonneg = nonneg && a[r * w + c] >= 0.0;
                    sum += a[r * w + c];
                }
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        }
    }
    report(2, "attention normalization", worst <= 1e-9 && nonneg,
           cat(rows, " rows over 1000 forward passes, max |row sum - 1| = ", worst));
}

void freeze_invariance(const std::vector<runner::AblationRow>& rows) {
    std::map<std::string, std::size_t> bytes;
    bool ok = true;
    for (const auto& r : rows) {
        ok = ok && r.frozen_intact;
        bytes[r.variant] += r.frozen_bytes_checked;
    }
    std::string detail;
    for (const auto& [v, b] : bytes) detail += cat(v, " ", b, " B; ");
    // FT freezes nothing; every other variant must have had something to check.
    for (const auto& [v, b] : bytes)
        if (v != "FT" && b == 0) ok = false;
    report(3, "freeze invariance", ok, detail + "compared before/after every session of the grid");
}

// AP by counting outranking rows for each positive; no sorting.
double brute_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& t, const std::vector<int>& ids) {
    double total = 0.0, positives = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!t[i]) continue;
        positives += 1.0;
        double rank = 1.0, hits = 1.0;
        for (std::size_t j = 0; j < s.size(); ++j)
            if (j != i && (s[j] > s[i] || (s[j] == s[i] && ids[j] < ids[i]))) {
                rank += 1.0;
                hits += t[j];
            }
        total += hits / rank;
    }
    return total / positives;
}

double f1_from_counts(double tp, double fp, double fn) {
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0, r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

void metric_oracles() {
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        metrics::PredictionMatrix pm;
        pm.n = 2 + rng() % 60;
        pm.m = 1 + rng() % 12;
        const bool coarse = trial % 2 == 1;
        for (std::size_t i = 0; i < pm.n * pm.m; ++i) {
            pm.scores.push_back(coarse ? std::round(u(rng) * 4.0) / 4.0 : u(rng));
            pm.truths.push_back(static_cast<std::uint8_t>(u(rng) < 0.3));
        }
        pm.truths[(rng() % pm.n) * pm.m] = 1;
        pm.class_ids.resize(pm.m);
        std::iota(pm.class_ids.begin(), pm.class_ids.end(), 0);
        pm.sample_ids.resize(pm.n);
        std::iota(pm.sample_ids.begin(), pm.sample_ids.end(), 0);
        std::shuffle(pm.sample_ids.begin(), pm.sample_ids.end(), rng);

        const auto got = metrics::map_over_classes(pm);
        double ap_sum = 0.0, cf1 = 0.0, tp_all = 0, fp_all = 0, fn_all = 0;
        int used = 0;
        for (std::size_t c = 0; c < pm.m; ++c) {
            std::vector<double> s;
            std::vector<std::uint8_t> t;
            double tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < pm.n; ++i) {
                s.push_back(pm.scores[i * pm.m + c]);
                t.push_back(pm.truths[i * pm.m + c]);
                const bool pred = s.back() >= 0.5;
                tp += pred && t.back();
                fp += pred && !t.back();
                fn += !pred && t.back();
            }
            tp_all += tp;
            fp_all += fp;
            fn_all += fn;
            cf1 += f1_from_counts(tp, fp, fn);
            if (std::find(t.begin(), t.end(), 1) == t.end()) continue;
            const double ap = brute_ap(s, t, pm.sample_ids);
            worst = std::max(worst, std::abs(got.per_class[c] - ap));
            ap_sum += ap;
            ++used;
        }
        const auto f1 = metrics::f1_scores(pm);
        worst = std::max({worst, std::abs(got.map - ap_sum / used), std::abs(f1.cf1 - cf1 / pm.m),
                          std::abs(f1.of1 - f1_from_counts(tp_all, fp_all, fn_all))});
    }
    // Six session mAPs with a reference average of 0.8508.
    const std::vector<double> row{0.9787, 0.9330, 0.9081, 0.8210, 0.7569, 0.7082};
    const double avg = metrics::session_accuracies(row).avg;
    const bool ok = worst <= 1e-10 && std::abs(avg - 0.8508) <= 0.005;
    report(4, "metric oracles", ok,
           cat("max deviation from brute force ", worst, " over 200 matrices; Avg. Acc ", avg,
               " vs 0.8508 (in percent ", 100.0 * avg, " vs 85.08, outside 0.005)"));
}

void unknown_synthesis() {
    std::mt19937_64 rng(505);
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_real_distribution<double> shape(0.2, 5.0);
    double simplex = 0.0, hull = 0.0;
    bool nonneg = true, exact = true;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t m2 = 1 + rng() % 8, d = 16;
        ad::Tensor absent({m2, d});
        for (double& v : absent.data()) v = n(rng);
        const auto s = probe::synthesize_unknown(absent, shape(rng), shape(rng), rng);
        double total = 0.0;
        for (double w : s->weights) {
            nonneg = nonneg && w >= 0.0;
            total += w;
        }
        simplex = std::max(simplex, std::abs(total - 1.0));
        for (std::size_t c = 0; c < d; ++c) {
            double lo = INFINITY, hi = -INFINITY;
            for (std::size_t r = 0; r < m2; ++r) {
                lo = std::min(lo, absent[r * d + c]);
                hi = std::max(hi, absent[r * d + c]);
            }
            hull = std::max({hull, lo - s->feature[c], s->feature[c] - hi});
        }
        if (m2 == 1) exact = exact && s->feature.values() == absent.values() && s->weights == std::vector<double>{1.0};
    }
    report(5, "unknown synthesis", simplex <= 1e-12 && nonneg && hull <= 1e-12 && exact,
           cat("10000 samples, max |sum w - 1| = ", simplex, ", max hull violation ", std::max(hull, 0.0),
               ", single-feature case ", exact ? "exact" : "inexact"));
}

void recall_contract() {
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0, violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 1 + rng() % 16;
        std::vector<double> p(k);
        for (double& v : p) v = u(rng);
        const double mu = 0.01 + 0.98 * u(rng);
        if (trial % 10 == 0) p[0] = mu;
        if (recall::pseudo_label_re(p, std::vector<double>(k, mu)) != recall::pseudo_label_static(p, mu)) ++mismatches;

        double e1 = 0.01 + 0.98 * u(rng), e2 = 0.01 + 0.98 * u(rng);
        if (e1 > e2) std::swap(e1, e2);
        const auto lo = recall::pseudo_label_static(p, e1), hi = recall::pseudo_label_static(p, e2);
        std::vector<double> t1(k), t2(k);
        for (std::size_t i = 0; i < k; ++i) {
            t1[i] = 0.01 + 0.98 * u(rng);
            t2[i] = std::min(0.99, t1[i] + 0.5 * u(rng));
        }
        const auto rlo = recall::pseudo_label_re(p, t1), rhi = recall::pseudo_label_re(p, t2);
        for (std::size_t i = 0; i < k; ++i)
            if (hi[i] > lo[i] || rhi[i] > rlo[i]) ++violations;
    }
    report(6, "recall thresholds", mismatches == 0 && violations == 0,
           cat("1000 vectors: ", mismatches, " RE/static mismatches with equal means, ", violations,
               " monotonicity violations"));
}

struct Ordering {
    std::string name;
    int held = 0;
    bool mean_ok = false;
};

void directional_ablation(const std::vector<runner::AblationRow>& rows, double grid_secs, int seeds) {
    std::map<std::uint64_t, std::map<std::string, const runner::AblationRow*>> by_seed;
    std::map<std::string, double> mean;
    for (const auto& r : rows) {
        by_seed[r.seed][r.variant] = &r;
        mean[r.variant] += r.avg_acc / seeds;
    }
    auto acc = [&](std::uint64_t s, const char* v) { return by_seed[s][v]->avg_acc; };
    std::vector<Ordering> ord{{"FT<FP"}, {"FP<FP+RE"}, {"FP<FP+PU"}, {"FP+RE+PU>=max-0.01"}};
    for (auto& [s, _] : by_seed) {
        ord[0].held += acc(s, "FT") < acc(s, "FP");
        ord[1].held += acc(s, "FP") < acc(s, "FP+RE");
        ord[2].held += acc(s, "FP") < acc(s, "FP+PU");
        ord[3].held += acc(s, "FP+RE+PU") >= std::max(acc(s, "FP+RE"), acc(s, "FP+PU")) - 0.01;
    }
    ord[0].mean_ok = mean["FT"] < mean["FP"];
    ord[1].mean_ok = mean["FP"] < mean["FP+RE"];
    ord[2].mean_ok = mean["FP"] < mean["FP+PU"];
    ord[3].mean_ok = mean["FP+RE+PU"] >= std::max(mean["FP+RE"], mean["FP+PU"]) - 0.01;
    const int need = (4 * seeds + 4) / 5;
    bool ok = seeds >= 5 && grid_secs < 1800.0;
    std::string detail = "mean Avg. Acc";
    for (const char* v : {"FT", "FP", "FP+RE", "FP+PU", "FP+RE+PU"}) detail += cat(" ", v, "=", mean[v]);
    detail += ";";
    for (const auto& o : ord) {
        ok = ok && o.mean_ok && o.held >= need;
        detail += cat(" ", o.name, " ", o.held, "/", seeds, o.mean_ok ? "" : " (mean fails)", ";");
    }
    report(7, "directional ablation", ok, cat(detail, " grid ", grid_secs, " s"));
}

void paired_count(int id, const std::string& name, const std::vector<runner::AblationRow>& rows, int seeds,
                  const char* with, const char* without, bool higher_is_better, double runner::AblationRow::*field) {
    std::map<std::uint64_t, std::map<std::string, double>> v;
    for (const auto& r : rows) v[r.seed][r.variant] = r.*field;
    int held = 0;
    std::string detail;
    for (auto& [s, m] : v) {
        const bool h = higher_is_better ? m[with] >= m[without] : m[with] <= m[without];
        held += h;
        detail += cat(" seed ", s, ": ", m[with], " vs ", m[without], ";");
    }
    const int need = (4 * seeds + 4) / 5;
    report(id, name, seeds >= 5 && held >= need,
           cat(with, " vs ", without, " holds in ", held, "/", seeds, " seeds;", detail));
}

void determinism_and_resume(const runner::ExperimentConfig& base, const fs::path& grid, const fs::path& work) {
    const auto cfg = runner::with_variant(base, "FP+RE+PU");
    const auto ref_dir = grid / "FP+RE+PU" / ("seed_" + std::to_string(cfg.seed));
    const auto reference = slurp(ref_dir / "results.json");
    bool ok = !reference.empty();
    std::string detail;

    const auto fresh = work / "fresh";
    fs::remove_all(fresh);
    runner::run_experiment(cfg, fresh);
    const bool same = slurp(fresh / "results.json") == reference;
    ok = ok && same;
    detail += same ? "independent rerun identical;" : "independent rerun differs;";

    for (int t = 1;; ++t) {
        const auto ck_path = ref_dir / "checkpoints" / ("session_" + std::to_string(t) + ".json");
        if (!fs::exists(ck_path)) break;
        auto ck = runner::load_checkpoint(ck_path);
        const auto dir = work / ("resume_" + std::to_string(t));
        fs::remove_all(dir);
        runner::run_experiment(ck.config, dir, std::move(ck.state));
        const bool r = slurp(dir / "results.json") == reference;
        ok = ok && r;
        detail += cat(" resume@", t, r ? " identical;" : " differs;");
    }
    report(10, "determinism and resume", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Acceptance suite"};
    std::string config, work = "acceptance_work";
    int seeds = 5;
    app.add_option("--config", config, "Ablation config (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--seeds", seeds, "Seeds in the ablation grid")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        gradient_fidelity();
        attention_normalization();

        auto base = runner::load_config(config);
        base.out.checkpoints = true;
        const fs::path grid = fs::path(work) / "grid";
        fs::remove_all(grid);
        const auto t0 = Clock::now();
        const auto rows = runner::ablate(base, seeds, grid);
        const double grid_secs = seconds_since(t0);

        freeze_invariance(rows);
        metric_oracles();
        unknown_synthesis();
        recall_contract();
        directional_ablation(rows, grid_secs, seeds);
        paired_count(8, "confidence forgetting", rows, seeds, "FP+RE", "FP", false,
                     &runner::AblationRow::mean_forgetting);
        paired_count(9, "C-H separation", rows, seeds, "FP+PU", "FP", true, &runner::AblationRow::final_ch);
        determinism_and_resume(base, grid, fs::path(work));
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance suite aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "all criteria passed" : cat(failures, " criteria failed")) << std::endl;
    return failures == 0 ? 0 : 1;
}
