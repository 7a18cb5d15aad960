#include "hcp/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "hcp/errors.hpp"

namespace hcp::data {

namespace {

const std::vector<std::string> kVocNames = {
    "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",         "car",   "cat",   "chair", "cow",
    "diningtable", "dog",   "horse", "motorbike", "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor"};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

std::vector<std::string> default_class_names(int num_classes) {
    if (num_classes == static_cast<int>(kVocNames.size())) return kVocNames;
    std::vector<std::string> names;
    for (int i = 0; i < num_classes; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "class_%03d", i);
        names.emplace_back(buf);
    }
    return names;
}

void validate(const DatasetConfig& cfg) {
    if (cfg.num_classes < 1) throw ConfigError("dataset.num_classes must be >= 1");
    if (cfg.d < 1 || cfg.h < 1 || cfg.w < 1) throw ConfigError("dataset.d, dataset.h, dataset.w must be >= 1");
    if (cfg.samples_per_session < 1 || cfg.sessions < 1) throw ConfigError("dataset.samples_per_session must be >= 1");
    if (cfg.test_samples < 0) throw ConfigError("dataset.test_samples must be >= 0");
    if (!(cfg.noise_std >= 0.0)) throw ConfigError("dataset.noise_std must be >= 0");
    if (cfg.occupancy < 1) throw ConfigError("dataset.occupancy must be >= 1");
    if (cfg.occupancy > cfg.tokens())
        throw ConfigError("dataset.occupancy " + std::to_string(cfg.occupancy) + " exceeds the " +
                          std::to_string(cfg.tokens()) + " available patches");
    if (!cfg.names.empty() && static_cast<int>(cfg.names.size()) != cfg.num_classes)
        throw ConfigError("dataset.names must list one name per class");
    const auto& c = cfg.cooccurrence;
    if (!c.empty()) {
        const auto n = static_cast<std::size_t>(cfg.num_classes);
        if (c.size() != n) throw ConfigError("dataset.cooccurrence must be num_classes x num_classes");
        for (std::size_t i = 0; i < n; ++i) {
            if (c[i].size() != n) throw ConfigError("dataset.cooccurrence must be num_classes x num_classes");
            for (std::size_t j = 0; j < n; ++j) {
                if (!(c[i][j] >= 0.0 && c[i][j] <= 1.0))
                    throw ConfigError("dataset.cooccurrence entries must lie in [0,1]");
                if (c[i][j] != c[j][i]) throw ConfigError("dataset.cooccurrence must be symmetric");
            }
        }
    }
}

Matrix default_cooccurrence(int num_classes, double base, double partner, int partners, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(num_classes);
    Matrix c(n, std::vector<double>(n, base));
    for (std::size_t i = 0; i < n; ++i) c[i][i] = 0.0;
    std::mt19937_64 rng(seed ^ 0xC0CC0CCULL);
    for (std::size_t i = 0; i < n && n > 1; ++i) {
        for (int p = 0; p < partners; ++p) {
            std::size_t j = i;
            while (j == i) j = static_cast<std::size_t>(rng() % n);
            c[i][j] = c[j][i] = partner;
        }
    }
    return c;
}

LabelVector sample_labels(const Matrix& cooc, std::mt19937_64& rng) {
    const std::size_t n = cooc.size();
    LabelVector y(n, 0);
    const std::size_t anchor = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    y[anchor] = 1;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == anchor) continue;
        if (uniform(rng, 0.0, 1.0) < cooc[anchor][j]) y[j] = 1;
    }
    return y;
}

double expected_cardinality(const Matrix& cooc) {
    const std::size_t n = cooc.size();
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t j = 0; j < n; ++j)
            if (j != a) s += cooc[a][j];
    return 1.0 + s / static_cast<double>(n);
}

Dataset generate_dataset(const DatasetConfig& cfg_in) {
    DatasetConfig cfg = cfg_in;
    validate(cfg);
    if (cfg.cooccurrence.empty())
        cfg.cooccurrence = default_cooccurrence(cfg.num_classes, cfg.base_cooccurrence, cfg.partner_cooccurrence,
                                                cfg.partners, cfg.seed);
    if (cfg.names.empty()) cfg.names = default_class_names(cfg.num_classes);

    std::mt19937_64 rng(cfg.seed);
    const auto n = static_cast<std::size_t>(cfg.num_classes);
    const auto d = static_cast<std::size_t>(cfg.d);
    const auto L = static_cast<std::size_t>(cfg.tokens());

    Dataset ds;
    ds.config = cfg;
    // Prototypes: random unit directions, kept clearly apart from each other
    // when the dimension allows it.
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> p(d);
        for (int attempt = 0;; ++attempt) {
            double norm = 0.0;
            for (auto& v : p) {
                v = std::normal_distribution<double>(0.0, 1.0)(rng);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (auto& v : p) v /= norm;
            bool ok = norm > 1e-12;
            for (std::size_t q = 0; ok && q < k; ++q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += p[i] * ds.classes[q].prototype[i];
                ok = attempt >= 200 ? std::abs(dot) < 1.0 - 1e-9 : std::abs(dot) < 0.8;
            }
            if (ok) break;
        }
        ds.classes.push_back({static_cast<int>(k), cfg.names[k], std::move(p), cfg.occupancy});
    }

    const int n_train = cfg.samples_per_session * cfg.sessions;
    const int n_total = n_train + cfg.test_samples;
    std::vector<std::size_t> slots(L);
    for (int id = 0; id < n_total; ++id) {
        LabelVector y;
        std::size_t count = 0;
        do {
            y = sample_labels(cfg.cooccurrence, rng);
            count = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
        } while (count * static_cast<std::size_t>(cfg.occupancy) > L);

        MultiLabelSample s;
        s.sample_id = id;
        s.tokens = ad::Tensor({L, d});
        std::iota(slots.begin(), slots.end(), std::size_t{0});
        std::shuffle(slots.begin(), slots.end(), rng);
        std::vector<bool> used(L, false);
        std::size_t next = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (!y[k]) continue;
            const double amp = uniform(rng, 0.8, 1.2);
            for (int o = 0; o < cfg.occupancy; ++o) {
                const std::size_t slot = slots[next++];
                used[slot] = true;
                for (std::size_t i = 0; i < d; ++i) s.tokens.at(slot, i) = amp * ds.classes[k].prototype[i];
            }
        }
        if (cfg.noise_std > 0.0) {
            std::normal_distribution<double> noise(0.0, cfg.noise_std);
            for (std::size_t slot = 0; slot < L; ++slot)
                if (!used[slot])
                    for (std::size_t i = 0; i < d; ++i) s.tokens.at(slot, i) = noise(rng);
        }
        s.labels_full = std::move(y);
        (id < n_train ? ds.train : ds.test).push_back(std::move(s));
    }
    return ds;
}

// --- protocol ---------------------------------------------------------------

const std::vector<int>& SessionProtocol::classes(int t) const {
    if (t < 1 || t > sessions())
        throw StateError("session index " + std::to_string(t) + " outside 1.." + std::to_string(sessions()));
    return partitions[static_cast<std::size_t>(t - 1)];
}

std::vector<int> SessionProtocol::seen_through(int t) const {
    std::vector<int> out;
    for (int s = 1; s <= t; ++s) {
        const auto& c = classes(s);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

int SessionProtocol::session_of(int class_id) const {
    for (std::size_t t = 0; t < partitions.size(); ++t)
        if (std::find(partitions[t].begin(), partitions[t].end(), class_id) != partitions[t].end())
            return static_cast<int>(t + 1);
    return 0;
}

int SessionProtocol::num_classes() const {
    int n = 0;
    for (const auto& p : partitions) n += static_cast<int>(p.size());
    return n;
}

SessionProtocol build_protocol(int num_classes, int base, int increment, std::span<const std::string> names) {
    if (num_classes < 1) throw ProtocolError("protocol needs at least one class");
    if (base < 0 || increment < 1) throw ProtocolError("protocol requires base >= 0 and increment >= 1");
    if (base > num_classes)
        throw ProtocolError("base session size " + std::to_string(base) + " exceeds " + std::to_string(num_classes) +
                            " classes");
    if ((num_classes - base) % increment != 0)
        throw ProtocolError("B" + std::to_string(base) + "-C" + std::to_string(increment) + " does not divide " +
                            std::to_string(num_classes) + " classes");
    if (static_cast<int>(names.size()) != num_classes) throw ProtocolError("one class name per class is required");
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
        throw ProtocolError("class names must be unique");

    std::vector<int> order(static_cast<std::size_t>(num_classes));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return names[static_cast<std::size_t>(a)] < names[static_cast<std::size_t>(b)];
    });

    SessionProtocol p;
    p.base = base;
    p.increment = increment;
    std::size_t pos = 0;
    auto take = [&](int count) {
        p.partitions.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                  order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(count)));
        pos += static_cast<std::size_t>(count);
    };
    if (base > 0) take(base);
    while (pos < order.size()) take(increment);
    return p;
}

std::vector<std::vector<std::size_t>> assign_sessions(std::span<const MultiLabelSample> train,
                                                      const SessionProtocol& protocol) {
    std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(protocol.sessions()));
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& y = train[i].labels_full;
        if (static_cast<int>(y.size()) != protocol.num_classes())
            throw DatasetError("sample " + std::to_string(train[i].sample_id) + " labels do not cover the protocol");
        for (int t = 1; t <= protocol.sessions(); ++t) {
            const auto& c = protocol.classes(t);
            if (std::any_of(c.begin(), c.end(), [&](int k) { return y[static_cast<std::size_t>(k)] != 0; }))
                pools[static_cast<std::size_t>(t - 1)].push_back(i);
        }
    }
    for (std::size_t t = 0; t < pools.size(); ++t)
        if (pools[t].empty())
            throw DatasetError("session " + std::to_string(t + 1) +
                               " has an empty training pool; increase dataset.samples_per_session");
    return pools;
}

LabelVector mask_labels(const MultiLabelSample& sample, int t, const SessionProtocol& protocol) {
    const auto& c = protocol.classes(t);
    LabelVector out(c.size(), 0);
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = sample.labels_full[static_cast<std::size_t>(c[i])];
    return out;
}

// --- JSON --------------------------------------------------------------------

nlohmann::json config_to_json(const DatasetConfig& c) {
    return {{"num_classes", c.num_classes},
            {"d", c.d},
            {"h", c.h},
            {"w", c.w},
            {"samples_per_session", c.samples_per_session},
            {"sessions", c.sessions},
            {"test_samples", c.test_samples},
            {"cooccurrence", c.cooccurrence},
            {"base_cooccurrence", c.base_cooccurrence},
            {"partner_cooccurrence", c.partner_cooccurrence},
            {"partners", c.partners},
            {"noise_std", c.noise_std},
            {"occupancy", c.occupancy},
            {"seed", c.seed},
            {"names", c.names}};
}

DatasetConfig config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.d = j.value("d", c.d);
    c.h = j.value("h", c.h);
    c.w = j.value("w", c.w);
    c.samples_per_session = j.value("samples_per_session", c.samples_per_session);
    c.sessions = j.value("sessions", c.sessions);
    c.test_samples = j.value("test_samples", c.test_samples);
    c.cooccurrence = j.value("cooccurrence", c.cooccurrence);
    c.base_cooccurrence = j.value("base_cooccurrence", c.base_cooccurrence);
    c.partner_cooccurrence = j.value("partner_cooccurrence", c.partner_cooccurrence);
    c.partners = j.value("partners", c.partners);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.occupancy = j.value("occupancy", c.occupancy);
    c.seed = j.value("seed", c.seed);
    c.names = j.value("names", c.names);
    return c;
}

namespace {

nlohmann::json sample_to_json(const MultiLabelSample& s, const char* split) {
    std::vector<int> ids;
    for (std::size_t k = 0; k < s.labels_full.size(); ++k)
        if (s.labels_full[k]) ids.push_back(static_cast<int>(k));
    return {{"id", s.sample_id}, {"split", split}, {"tokens", s.tokens.values()}, {"labels", ids}};
}

}  // namespace

nlohmann::json dataset_to_json(const Dataset& ds) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : ds.classes)
        classes.push_back({{"id", c.class_id}, {"name", c.name}, {"prototype", c.prototype}, {"occupancy", c.occupancy}});
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : ds.train) samples.push_back(sample_to_json(s, "train"));
    for (const auto& s : ds.test) samples.push_back(sample_to_json(s, "test"));
    return {{"config", config_to_json(ds.config)}, {"classes", classes}, {"samples", samples}};
}

Dataset dataset_from_json(const nlohmann::json& j) {
    try {
        Dataset ds;
        ds.config = config_from_json(j.at("config"));
        validate(ds.config);
        for (const auto& c : j.at("classes"))
            ds.classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                                  c.value("prototype", std::vector<double>{}), c.value("occupancy", ds.config.occupancy)});
        const auto L = static_cast<std::size_t>(ds.config.tokens());
        const auto d = static_cast<std::size_t>(ds.config.d);
        const auto n = static_cast<std::size_t>(ds.config.num_classes);
        for (const auto& sj : j.at("samples")) {
            MultiLabelSample s;
            s.sample_id = sj.at("id").get<int>();
            s.tokens = ad::Tensor({L, d}, sj.at("tokens").get<std::vector<double>>());
            s.labels_full.assign(n, 0);
            for (int k : sj.at("labels").get<std::vector<int>>()) {
                if (k < 0 || static_cast<std::size_t>(k) >= n)
                    throw DatasetError("sample " + std::to_string(s.sample_id) + " has label id out of range");
                s.labels_full[static_cast<std::size_t>(k)] = 1;
            }
            (sj.value("split", std::string("train")) == "test" ? ds.test : ds.train).push_back(std::move(s));
        }
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dataset document: ") + e.what());
    }
}

}  // namespace hcp::data
