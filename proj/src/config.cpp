#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "hcp/errors.hpp"
#include "hcp/runner.hpp"

namespace hcp::runner {

namespace {

void reject_unknown(const nlohmann::json& section, const std::string& name, const std::set<std::string>& known) {
    if (!section.is_object()) throw ConfigError("config section '" + name + "' must be an object");
    for (const auto& [key, _] : section.items())
        if (!known.count(key)) throw ConfigError("unknown config key '" + name + "." + key + "'");
}

template <class T>
void read(const nlohmann::json& section, const char* key, T& out) {
    if (section.contains(key)) out = section.at(key).get<T>();
}

std::string queue_name(recall::QueueMode m) { return m == recall::QueueMode::Ema ? "ema" : "replace"; }

recall::QueueMode queue_from_name(const std::string& s) {
    if (s == "replace") return recall::QueueMode::Replace;
    if (s == "ema") return recall::QueueMode::Ema;
    throw ConfigError("re.queue must be 'replace' or 'ema', got '" + s + "'");
}

}  // namespace

std::string ExperimentConfig::variant() const {
    if (!train.fp) return "FT";
    std::string v = "FP";
    if (re_enabled) v += "+RE";
    if (pu.enabled) v += "+PU";
    return v;
}

void validate(const ExperimentConfig& cfg) {
    data::validate(effective_dataset_config(cfg));
    if (cfg.protocol.base < 0 || cfg.protocol.increment < 1)
        throw ConfigError("protocol.base must be >= 0 and protocol.increment >= 1");
    const auto& t = cfg.train;
    if (t.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (t.batch < 1 || t.eval_batch < 1) throw ConfigError("train.batch/eval_batch must be >= 1");
    if (!(t.lr_base > 0.0) || !(t.lr_incremental > 0.0)) throw ConfigError("train learning rates must be > 0");
    if (!(t.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (t.blocks < 0) throw ConfigError("train.blocks must be >= 0");
    if (t.heads < 1 || cfg.dataset.d % t.heads != 0)
        throw ConfigError("train.heads must divide dataset.d (" + std::to_string(cfg.dataset.d) + ")");
    if (!(t.f1_threshold > 0.0 && t.f1_threshold < 1.0)) throw ConfigError("train.f1_threshold must lie in (0, 1)");
    if ((cfg.re_enabled || cfg.pu.enabled) && !t.fp)
        throw ConfigError("re and probe_unknown require train.fp (feature purification)");
    recall::validate(cfg.re);
    probe::validate(cfg.pu);
    loss::validate(cfg.loss);
    if (cfg.out.dir.empty()) throw ConfigError("out.dir must not be empty");
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json ds = data::config_to_json(c.dataset);
    ds.erase("sessions");
    if (!c.dataset_seed_fixed) ds.erase("seed");
    return {{"seed", c.seed},
            {"dataset", ds},
            {"protocol", {{"base", c.protocol.base}, {"increment", c.protocol.increment}}},
            {"train",
             {{"fp", c.train.fp},
              {"epochs", c.train.epochs},
              {"batch", c.train.batch},
              {"lr_base", c.train.lr_base},
              {"lr_incremental", c.train.lr_incremental},
              {"weight_decay", c.train.weight_decay},
              {"blocks", c.train.blocks},
              {"heads", c.train.heads},
              {"pre_norm", c.train.pre_norm},
              {"eval_batch", c.train.eval_batch},
              {"f1_threshold", c.train.f1_threshold}}},
            {"re",
             {{"enabled", c.re_enabled},
              {"strategy", recall::strategy_name(c.re.strategy)},
              {"epsilon", c.re.epsilon},
              {"top_k", c.re.top_k},
              {"sigma_c", c.re.sigma_c},
              {"fallback", c.re.fallback},
              {"queue", queue_name(c.re.queue_mode)},
              {"ema_rho", c.re.ema_rho}}},
            {"probe_unknown",
             {{"enabled", c.pu.enabled},
              {"alpha", c.pu.alpha},
              {"beta", c.pu.beta},
              {"real_negative_targets", c.pu.real_negative_targets}}},
            {"loss", {{"gamma_pos", c.loss.gamma_pos}, {"gamma_neg", c.loss.gamma_neg}, {"clip", c.loss.clip}}},
            {"out", {{"dir", c.out.dir}, {"checkpoints", c.out.checkpoints}, {"save_dataset", c.out.save_dataset}}}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        reject_unknown(j, "<root>", {"seed", "dataset", "protocol", "train", "re", "probe_unknown", "loss", "out"});
        read(j, "seed", c.seed);
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            reject_unknown(d, "dataset",
                           {"num_classes", "d", "h", "w", "samples_per_session", "test_samples", "cooccurrence",
                            "base_cooccurrence", "partner_cooccurrence", "partners", "noise_std", "occupancy", "seed",
                            "names"});
            c.dataset = data::config_from_json(d);
            c.dataset_seed_fixed = d.contains("seed");
        }
        if (j.contains("protocol")) {
            const auto& p = j.at("protocol");
            reject_unknown(p, "protocol", {"base", "increment"});
            read(p, "base", c.protocol.base);
            read(p, "increment", c.protocol.increment);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            reject_unknown(t, "train",
                           {"fp", "epochs", "batch", "lr_base", "lr_incremental", "weight_decay", "blocks", "heads",
                            "pre_norm", "eval_batch", "f1_threshold"});
            read(t, "fp", c.train.fp);
            read(t, "epochs", c.train.epochs);
            read(t, "batch", c.train.batch);
            read(t, "lr_base", c.train.lr_base);
            read(t, "lr_incremental", c.train.lr_incremental);
            read(t, "weight_decay", c.train.weight_decay);
            read(t, "blocks", c.train.blocks);
            read(t, "heads", c.train.heads);
            read(t, "pre_norm", c.train.pre_norm);
            read(t, "eval_batch", c.train.eval_batch);
            read(t, "f1_threshold", c.train.f1_threshold);
        }
        if (j.contains("re")) {
            const auto& r = j.at("re");
            reject_unknown(r, "re", {"enabled", "strategy", "epsilon", "top_k", "sigma_c", "fallback", "queue", "ema_rho"});
            read(r, "enabled", c.re_enabled);
            if (r.contains("strategy")) c.re.strategy = recall::strategy_from_name(r.at("strategy").get<std::string>());
            read(r, "epsilon", c.re.epsilon);
            read(r, "top_k", c.re.top_k);
            read(r, "sigma_c", c.re.sigma_c);
            read(r, "fallback", c.re.fallback);
            if (r.contains("queue")) c.re.queue_mode = queue_from_name(r.at("queue").get<std::string>());
            read(r, "ema_rho", c.re.ema_rho);
        }
        if (j.contains("probe_unknown")) {
            const auto& p = j.at("probe_unknown");
            reject_unknown(p, "probe_unknown", {"enabled", "alpha", "beta", "real_negative_targets"});
            read(p, "enabled", c.pu.enabled);
            read(p, "alpha", c.pu.alpha);
            read(p, "beta", c.pu.beta);
            read(p, "real_negative_targets", c.pu.real_negative_targets);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            reject_unknown(l, "loss", {"gamma_pos", "gamma_neg", "clip"});
            read(l, "gamma_pos", c.loss.gamma_pos);
            read(l, "gamma_neg", c.loss.gamma_neg);
            read(l, "clip", c.loss.clip);
        }
        if (j.contains("out")) {
            const auto& o = j.at("out");
            reject_unknown(o, "out", {"dir", "checkpoints", "save_dataset"});
            read(o, "dir", c.out.dir);
            read(o, "checkpoints", c.out.checkpoints);
            read(o, "save_dataset", c.out.save_dataset);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

std::vector<std::string> ablation_variants() { return {"FT", "FP", "FP+RE", "FP+PU", "FP+RE+PU"}; }

ExperimentConfig with_variant(ExperimentConfig c, const std::string& v) {
    if (v == "FT") {
        c.train.fp = false;
        c.re_enabled = false;
        c.pu.enabled = false;
    } else if (v == "FP" || v == "FP+RE" || v == "FP+PU" || v == "FP+RE+PU") {
        c.train.fp = true;
        c.re_enabled = v.find("RE") != std::string::npos;
        c.pu.enabled = v.find("PU") != std::string::npos;
    } else {
        throw ConfigError("unknown variant '" + v + "'");
    }
    return c;
}

std::mt19937_64 rng_stream(std::uint64_t seed, int session, Stream purpose, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(session), static_cast<std::uint32_t>(purpose),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

data::DatasetConfig effective_dataset_config(const ExperimentConfig& cfg) {
    data::DatasetConfig d = cfg.dataset;
    if (!cfg.dataset_seed_fixed) d.seed = cfg.seed;
    const int n = d.num_classes, base = cfg.protocol.base, inc = cfg.protocol.increment;
    d.sessions = (base >= 0 && inc >= 1 && n >= base) ? (base > 0 ? 1 : 0) + (n - base) / inc : 1;
    d.sessions = std::max(d.sessions, 1);
    return d;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("'" + path.string() + "' is not valid JSON at byte " + std::to_string(e.byte) + ": " +
                         e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void ensure_writable_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    const auto probe = dir / ".hcp_write_probe";
    {
        std::ofstream out(probe);
        if (!out) throw IoError("output directory '" + dir.string() + "' is not writable");
    }
    std::filesystem::remove(probe, ec);
}

}  // namespace hcp::runner
