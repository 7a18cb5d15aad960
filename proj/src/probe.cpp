#include "hcp/probe.hpp"

#include <string>

#include "hcp/errors.hpp"

namespace hcp::probe {

using ad::Tensor;

void validate(const ProbeConfig& cfg) {
    if (!(cfg.alpha > 0.0) || !(cfg.beta > 0.0)) throw ConfigError("probe_unknown.alpha/beta must be > 0");
}

FeaturePartition partition_features(const Tensor& o_s, std::span<const std::uint8_t> y) {
    if (o_s.shape().size() != 2) throw ShapeError("partition_features: features must be [M, d]");
    const std::size_t M = o_s.shape()[0], d = o_s.shape()[1];
    if (y.size() != M)
        throw ShapeError("partition_features: " + std::to_string(y.size()) + " labels for " + std::to_string(M) +
                         " features");
    FeaturePartition part;
    for (std::size_t i = 0; i < M; ++i) (y[i] ? part.present_rows : part.absent_rows).push_back(i);
    auto gather = [&](const std::vector<std::size_t>& rows) {
        if (rows.empty()) return Tensor{};
        Tensor out({rows.size(), d});
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) out[r * d + c] = o_s[rows[r] * d + c];
        return out;
    };
    part.present = gather(part.present_rows);
    part.absent = gather(part.absent_rows);
    return part;
}

std::vector<double> sample_weights(std::size_t m2, double alpha, double beta, std::mt19937_64& rng) {
    if (m2 == 0) return {};
    std::vector<double> w(m2);
    for (int attempt = 0; attempt <= 8; ++attempt) {
        double total = 0.0;
        for (std::size_t i = 0; i < m2; ++i) {
            std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
            const double x = ga(rng), yv = gb(rng);
            w[i] = (x + yv) > 0.0 ? x / (x + yv) : 0.0;
            total += w[i];
        }
        if (total > 1e-12) {
            for (double& v : w) v /= total;
            return w;
        }
    }
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(m2));
    return w;
}

UnknownSample mix_features(const Tensor& absent, std::vector<double> lambda) {
    if (absent.shape().size() != 2) throw ShapeError("mix_features: absent features must be [M2, d]");
    const std::size_t m2 = absent.shape()[0], d = absent.shape()[1];
    if (lambda.size() != m2)
        throw ShapeError("mix_features: " + std::to_string(lambda.size()) + " weights for " + std::to_string(m2) +
                         " features");
    double total = 0.0;
    for (double v : lambda) {
        if (!(v >= 0.0)) throw DomainError("mix_features: weights must be non-negative");
        total += v;
    }
    if (!(total > 1e-12)) throw DomainError("mix_features: weights sum to zero");
    for (double& v : lambda) v /= total;
    UnknownSample s;
    s.weights = std::move(lambda);
    s.feature = Tensor({1, d});
    for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t c = 0; c < d; ++c) s.feature[c] += s.weights[i] * absent[i * d + c];
    return s;
}

std::optional<UnknownSample> synthesize_unknown(const Tensor& absent, double alpha, double beta,
                                                std::mt19937_64& rng) {
    if (absent.size() == 0) return std::nullopt;
    if (absent.shape().size() != 2) throw ShapeError("synthesize_unknown: absent features must be [M2, d]");
    return mix_features(absent, sample_weights(absent.shape()[0], alpha, beta, rng));
}

BatchMix batch_mixing(std::span<const std::vector<std::uint8_t>> labels, double alpha, double beta,
                      std::mt19937_64& rng) {
    if (labels.empty()) throw ShapeError("batch_mixing: empty batch");
    const std::size_t B = labels.size(), M = labels[0].size();
    BatchMix out{Tensor({B, 1, M}), std::vector<std::uint8_t>(B, 0)};
    for (std::size_t b = 0; b < B; ++b) {
        if (labels[b].size() != M) throw ShapeError("batch_mixing: ragged label rows");
        std::vector<std::size_t> absent;
        for (std::size_t k = 0; k < M; ++k)
            if (!labels[b][k]) absent.push_back(k);
        if (absent.empty()) continue;
        const auto w = sample_weights(absent.size(), alpha, beta, rng);
        for (std::size_t i = 0; i < absent.size(); ++i) out.mix[b * M + absent[i]] = w[i];
        out.has_unknown[b] = 1;
    }
    return out;
}

}  // namespace hcp::probe
