#include "hcp/purifier.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "hcp/errors.hpp"

namespace hcp::model {

using ad::Tensor;
using ad::Var;

namespace {

constexpr int kModelSchemaVersion = 1;

Tensor gaussian(ad::Shape shape, double std, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

Tensor trainable(Tensor t) {
    t.set_requires_grad(true);
    return t;
}

Tensor frozen(Tensor t) {
    t.set_requires_grad(false);
    return t;
}

Tensor concat_rows_value(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.shape().back();
    std::vector<double> data(a.values());
    data.insert(data.end(), b.values().begin(), b.values().end());
    if (a.rank() == 1) return Tensor({a.size() + b.size()}, std::move(data));
    return Tensor({a.shape()[0] + b.shape()[0], d}, std::move(data));
}

Tensor leading_rows(const Tensor& t, std::size_t rows) {
    const std::size_t width = t.rank() == 1 ? 1 : t.shape().back();
    std::vector<double> data(t.values().begin(), t.values().begin() + static_cast<std::ptrdiff_t>(rows * width));
    if (t.rank() == 1) return Tensor({rows}, std::move(data));
    return Tensor({rows, width}, std::move(data));
}

struct LeafBinder {
    ad::Tape& tape;
    // Only used from the overloads taking a non-const model.
    Var operator()(const Tensor& t) const { return tape.leaf(const_cast<Tensor&>(t)); }
};

struct ViewBinder {
    ad::Tape& tape;
    Var operator()(const Tensor& t) const { return tape.view(t); }
};

template <class Bind>
PurifyResult purify_impl(ad::Tape& tape, const PurifierModel& m, const Tensor& tokens, const ForwardOptions& opts,
                         Bind bind) {
    const std::size_t d = m.d();
    if (tokens.rank() != 3 || tokens.shape()[2] != d)
        throw ShapeError("forward_purify: tokens must be [B, L, " + std::to_string(d) + "], got " +
                         ad::shape_str(tokens.shape()));
    const auto& bank = m.bank();
    if (bank.rows() == 0) throw StateError("forward_purify: model has no class embeddings yet");
    const std::size_t B = tokens.shape()[0], L = tokens.shape()[1], M = bank.rows(), N = L + M;

    Var s;
    if (bank.frozen) s = bind(*bank.frozen);
    if (bank.trainable) s = s.valid() ? ad::concat_rows(s, bind(*bank.trainable)) : bind(*bank.trainable);
    Var x = ad::concat_rows(tape.view(tokens), ad::tile_batch(s, B));

    for (const auto& blk : m.blocks()) {
        const auto heads = static_cast<std::size_t>(blk.heads);
        const std::size_t dh = d / heads;
        const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Var h = blk.pre_norm ? ad::layer_norm_lastdim(x, bind(blk.ln_gamma), bind(blk.ln_beta)) : x;
        Var flat = ad::reshape(h, {B * N, d});
        Var q = ad::matmul(flat, bind(blk.wq));
        Var k = ad::matmul(flat, bind(blk.wk));
        Var v = ad::matmul(flat, bind(blk.wv));
        Var merged;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            auto split = [&](Var z) {
                Var part = heads == 1 ? z : ad::slice_cols(z, hd * dh, (hd + 1) * dh);
                return ad::reshape(part, {B, N, dh});
            };
            Var attn = ad::softmax_lastdim(ad::scale(ad::bmm_nt(split(q), split(k)), inv_scale));
            if (opts.attention) opts.attention->push_back(attn.value());
            Var o = ad::reshape(ad::bmm(attn, split(v)), {B * N, dh});
            merged = hd == 0 ? o : ad::concat_cols(merged, o);
        }
        Var out = ad::add_rowvec(ad::matmul(merged, bind(blk.wo)), bind(blk.bo));
        x = ad::add(x, ad::reshape(out, {B, N, d}));
    }
    return {ad::slice_rows(x, 0, L), ad::slice_rows(x, L, N)};
}

template <class Bind>
Var classify_impl(const PurifierModel& m, Var o_s, Bind bind) {
    const auto& heads = m.classifiers();
    const std::size_t old_rows = heads.stability_rows(), new_rows = heads.plasticity_real_rows();
    const std::size_t M = old_rows + new_rows;
    if (o_s.shape().size() != 3 || o_s.shape()[1] != M || o_s.shape()[2] != m.d())
        throw ShapeError("classify: class features " + ad::shape_str(o_s.shape()) + " do not match " +
                         std::to_string(M) + " classifier rows");
    if (M == 0) throw StateError("classify: no classifier rows");
    Var w, b;
    if (heads.stability) {
        w = bind(heads.stability->weight);
        b = bind(heads.stability->bias);
    }
    if (new_rows > 0) {
        Var pw = ad::slice_rows(bind(heads.plasticity->weight), 0, new_rows);
        Var pb = ad::slice_rows(bind(heads.plasticity->bias), 0, new_rows);
        w = w.valid() ? ad::concat_rows(w, pw) : pw;
        b = b.valid() ? ad::concat_rows(b, pb) : pb;
    }
    const std::size_t B = o_s.shape()[0];
    return ad::add_rowvec(ad::sum_lastdim(ad::mul(o_s, ad::tile_batch(w, B))), b);
}

template <class Bind>
Var unknown_impl(const PurifierModel& m, Var features, Bind bind) {
    const auto& heads = m.classifiers();
    if (!heads.plasticity) throw StateError("unknown_logit: no plasticity head is open");
    const std::size_t d = m.d();
    if (features.size() % d != 0 || features.shape().back() != d)
        throw ShapeError("unknown_logit: features must end in " + std::to_string(d) + ", got " +
                         ad::shape_str(features.shape()));
    const std::size_t B = features.size() / d;
    const std::size_t r = heads.plasticity_real_rows();
    Var f = ad::reshape(features, {B, d});
    Var w = ad::reshape(ad::slice_rows(bind(heads.plasticity->weight), r, r + 1), {d});
    Var b = ad::slice_rows(bind(heads.plasticity->bias), r, r + 1);
    return ad::add(ad::sum_lastdim(ad::mul(f, ad::tile_batch(w, B))), b);
}

}  // namespace

AttentionBlock AttentionBlock::create(std::size_t d, int heads, bool pre_norm, std::mt19937_64& rng) {
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
        throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    const double std = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionBlock b;
    b.heads = heads;
    b.pre_norm = pre_norm;
    b.ln_gamma = trainable(Tensor({d}, 1.0));
    b.ln_beta = trainable(Tensor({d}, 0.0));
    b.wq = trainable(gaussian({d, d}, std, rng));
    b.wk = trainable(gaussian({d, d}, std, rng));
    b.wv = trainable(gaussian({d, d}, std, rng));
    b.wo = trainable(gaussian({d, d}, std, rng));
    b.bo = trainable(Tensor({d}, 0.0));
    return b;
}

std::vector<Tensor*> AttentionBlock::params() {
    std::vector<Tensor*> p{&wq, &wk, &wv, &wo, &bo};
    if (pre_norm) {
        p.push_back(&ln_gamma);
        p.push_back(&ln_beta);
    }
    return p;
}

PurifierModel PurifierModel::create(const PurifierConfig& cfg, std::mt19937_64& rng) {
    if (cfg.blocks < 0) throw ConfigError("purifier needs a non-negative block count");
    PurifierModel m;
    m.cfg_ = cfg;
    for (int i = 0; i < cfg.blocks; ++i) m.blocks_.push_back(AttentionBlock::create(cfg.d, cfg.heads, cfg.pre_norm, rng));
    return m;
}

void PurifierModel::expand_for_session(std::span<const int> new_ids, std::mt19937_64& rng, bool freeze_old) {
    if (new_ids.empty()) throw ContractError("expand_for_session: no new classes");
    if (heads_.plasticity) throw StateError("expand_for_session: merge the previous plasticity head first");
    std::set<int> seen(bank_.class_ids.begin(), bank_.class_ids.end());
    for (int id : new_ids)
        if (!seen.insert(id).second) throw RegistryError("class id " + std::to_string(id) + " is already registered");

    const std::size_t d = cfg_.d, n = new_ids.size();
    Tensor fresh = gaussian({n, d}, cfg_.embedding_init_std, rng);
    if (freeze_old) {
        if (bank_.trainable)
            bank_.frozen = frozen(bank_.frozen ? concat_rows_value(*bank_.frozen, *bank_.trainable) : *bank_.trainable);
        bank_.trainable = trainable(std::move(fresh));
    } else {
        std::optional<Tensor> all = bank_.frozen;
        if (bank_.trainable) all = all ? concat_rows_value(*all, *bank_.trainable) : *bank_.trainable;
        bank_.trainable = trainable(all ? concat_rows_value(*all, fresh) : std::move(fresh));
        bank_.frozen.reset();
    }
    bank_.class_ids.insert(bank_.class_ids.end(), new_ids.begin(), new_ids.end());

    LinearHead head;
    head.weight = gaussian({n + 1, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    head.bias = Tensor({n + 1}, 0.0);
    if (!freeze_old && heads_.stability) {
        head.weight = concat_rows_value(heads_.stability->weight, head.weight);
        head.bias = concat_rows_value(heads_.stability->bias, head.bias);
        heads_.stability.reset();
    }
    head.weight = trainable(std::move(head.weight));
    head.bias = trainable(std::move(head.bias));
    heads_.plasticity = std::move(head);
    ++session_;
}

void PurifierModel::merge_classifiers() {
    if (!heads_.plasticity) throw StateError("merge_classifiers: no plasticity head to merge");
    const std::size_t r = heads_.plasticity_real_rows();
    Tensor w = leading_rows(heads_.plasticity->weight, r);
    Tensor b = leading_rows(heads_.plasticity->bias, r);
    if (heads_.stability) {
        w = concat_rows_value(heads_.stability->weight, w);
        b = concat_rows_value(heads_.stability->bias, b);
    }
    heads_.stability = LinearHead{frozen(std::move(w)), frozen(std::move(b))};
    heads_.plasticity.reset();
}

std::vector<Tensor*> PurifierModel::trainable_params() {
    std::vector<Tensor*> p;
    for (auto& b : blocks_)
        for (Tensor* t : b.params()) p.push_back(t);
    if (bank_.trainable) p.push_back(&*bank_.trainable);
    if (heads_.plasticity) {
        p.push_back(&heads_.plasticity->weight);
        p.push_back(&heads_.plasticity->bias);
    }
    return p;
}

std::vector<std::uint8_t> PurifierModel::frozen_state_bytes() const {
    std::vector<std::uint8_t> out;
    auto append = [&](const Tensor& t) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
        out.insert(out.end(), p, p + t.size() * sizeof(double));
    };
    if (bank_.frozen) append(*bank_.frozen);
    if (heads_.stability) {
        append(heads_.stability->weight);
        append(heads_.stability->bias);
    }
    return out;
}

nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<ad::Shape>(), j.at("data").get<std::vector<double>>());
}

nlohmann::json PurifierModel::to_json() const {
    auto opt = [](const std::optional<Tensor>& t) { return t ? tensor_to_json(*t) : nlohmann::json(nullptr); };
    auto head = [](const std::optional<LinearHead>& h) {
        return h ? nlohmann::json{{"weight", tensor_to_json(h->weight)}, {"bias", tensor_to_json(h->bias)}}
                 : nlohmann::json(nullptr);
    };
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : blocks_)
        blocks.push_back({{"heads", b.heads},
                          {"pre_norm", b.pre_norm},
                          {"ln_gamma", tensor_to_json(b.ln_gamma)},
                          {"ln_beta", tensor_to_json(b.ln_beta)},
                          {"wq", tensor_to_json(b.wq)},
                          {"wk", tensor_to_json(b.wk)},
                          {"wv", tensor_to_json(b.wv)},
                          {"wo", tensor_to_json(b.wo)},
                          {"bo", tensor_to_json(b.bo)}});
    return {{"schema_version", kModelSchemaVersion},
            {"session", session_},
            {"config",
             {{"d", cfg_.d},
              {"heads", cfg_.heads},
              {"blocks", cfg_.blocks},
              {"pre_norm", cfg_.pre_norm},
              {"embedding_init_std", cfg_.embedding_init_std}}},
            {"bank", {{"frozen", opt(bank_.frozen)}, {"trainable", opt(bank_.trainable)}, {"class_ids", bank_.class_ids}}},
            {"blocks", blocks},
            {"classifiers", {{"stability", head(heads_.stability)}, {"plasticity", head(heads_.plasticity)}}}};
}

PurifierModel PurifierModel::from_json(const nlohmann::json& j) {
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion)
        throw SchemaError("model schema version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelSchemaVersion) + ")");
    PurifierModel m;
    const auto& c = j.at("config");
    m.cfg_.d = c.at("d").get<std::size_t>();
    m.cfg_.heads = c.at("heads").get<int>();
    m.cfg_.blocks = c.at("blocks").get<int>();
    m.cfg_.pre_norm = c.at("pre_norm").get<bool>();
    m.cfg_.embedding_init_std = c.at("embedding_init_std").get<double>();
    m.session_ = j.at("session").get<int>();
    for (const auto& bj : j.at("blocks")) {
        AttentionBlock b;
        b.heads = bj.at("heads").get<int>();
        b.pre_norm = bj.at("pre_norm").get<bool>();
        b.ln_gamma = trainable(tensor_from_json(bj.at("ln_gamma")));
        b.ln_beta = trainable(tensor_from_json(bj.at("ln_beta")));
        b.wq = trainable(tensor_from_json(bj.at("wq")));
        b.wk = trainable(tensor_from_json(bj.at("wk")));
        b.wv = trainable(tensor_from_json(bj.at("wv")));
        b.wo = trainable(tensor_from_json(bj.at("wo")));
        b.bo = trainable(tensor_from_json(bj.at("bo")));
        m.blocks_.push_back(std::move(b));
    }
    const auto& bank = j.at("bank");
    if (!bank.at("frozen").is_null()) m.bank_.frozen = frozen(tensor_from_json(bank.at("frozen")));
    if (!bank.at("trainable").is_null()) m.bank_.trainable = trainable(tensor_from_json(bank.at("trainable")));
    m.bank_.class_ids = bank.at("class_ids").get<std::vector<int>>();
    const auto& heads = j.at("classifiers");
    auto head = [](const nlohmann::json& h, bool train) {
        LinearHead lh{tensor_from_json(h.at("weight")), tensor_from_json(h.at("bias"))};
        lh.weight.set_requires_grad(train);
        lh.bias.set_requires_grad(train);
        return lh;
    };
    if (!heads.at("stability").is_null()) m.heads_.stability = head(heads.at("stability"), false);
    if (!heads.at("plasticity").is_null()) m.heads_.plasticity = head(heads.at("plasticity"), true);
    if (m.bank_.class_ids.size() != m.bank_.rows())
        throw SchemaError("model checkpoint: class id map does not match embedding rows");
    return m;
}

PurifyResult forward_purify(ad::Tape& tape, PurifierModel& model, const Tensor& tokens, const ForwardOptions& opts) {
    return purify_impl(tape, model, tokens, opts, LeafBinder{tape});
}

PurifyResult forward_purify(ad::Tape& tape, const PurifierModel& model, const Tensor& tokens,
                            const ForwardOptions& opts) {
    return purify_impl(tape, model, tokens, opts, ViewBinder{tape});
}

Var classify(ad::Tape& tape, PurifierModel& model, Var o_s) { return classify_impl(model, o_s, LeafBinder{tape}); }

Var classify(ad::Tape& tape, const PurifierModel& model, Var o_s) {
    return classify_impl(model, o_s, ViewBinder{tape});
}

Var unknown_logit(ad::Tape& tape, PurifierModel& model, Var features) {
    return unknown_impl(model, features, LeafBinder{tape});
}

Var unknown_logit(ad::Tape& tape, const PurifierModel& model, Var features) {
    return unknown_impl(model, features, ViewBinder{tape});
}

}  // namespace hcp::model
