#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "catcache/adaptive_controller.hpp"
#include "catcache/cache_core.hpp"
#include "catcache/category_policy.hpp"
#include "catcache/doc_store.hpp"
#include "catcache/embedding.hpp"
#include "catcache/errors.hpp"
#include "catcache/hnsw_index.hpp"

namespace catcache::sim {

/// SplitMix64; small-state generator used for per-item random streams.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in (0, 1].
    double unit() { return (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    SplitMix64 g(a ^ (b * 0xd1342543de82ef95ull) ^ (c * 0x2545f4914f6cdd1dull));
    g();
    return g();
}

enum class Repetition { zipf, uniform };

struct CategorySpec {
    std::string category_id;
    double traffic_share = 1.0;
    Repetition repetition = Repetition::zipf;
    double zipf_alpha = 1.2;
    std::size_t pool_size = 10'000;     ///< distinct canonical queries
    double cluster_density = 0.12;      ///< target cosine distance to the 10th nearest canonical query
    double staleness_rate = 0.0;        ///< content changes per item per second
    std::string model_id = "default";
    double paraphrase_noise = 0.0;      ///< scale of the per-occurrence perturbation
    double paraphrase_spread = 0.0;     ///< > 0: log-normal perturbation norm with this shape
    std::size_t intrinsic_dimension = 0;  ///< 0 uses the generator default
};

struct GeneratorOptions {
    std::size_t dimension = 64;
    std::size_t intrinsic_dimension = 8;  ///< rank of the subspace canonical queries spread over
    double arrival_rate_qps = 100'000.0 / 3600.0;
    std::size_t density_sample = 200;     ///< points used to measure 10th-NN distance
};

struct Query {
    std::uint32_t category = 0;
    std::uint32_t canonical = 0;
    TimestampMs arrival_ms = 0;

    friend bool operator==(const Query&, const Query&) = default;
};

/// Ordered query stream plus the geometry that produced it.
struct Workload {
    std::size_t dimension = 0;
    std::uint64_t seed = 0;
    std::vector<CategorySpec> categories;
    std::vector<Query> queries;
    std::vector<float> embeddings;           ///< row-major, queries.size() x dimension, unit rows
    std::vector<double> cluster_scale;       ///< calibrated spread per category
    std::vector<double> measured_density;    ///< achieved mean 10th-NN cosine distance per category

    std::span<const float> row(std::size_t i) const {
        return {embeddings.data() + i * dimension, dimension};
    }
    Embedding embedding(std::size_t i) const {
        auto r = row(i);
        return Embedding(std::vector<float>(r.begin(), r.end()));
    }
};

inline void validate_specs(const std::vector<CategorySpec>& specs) {
    if (specs.empty()) throw ValidationError("no_categories", "workload needs at least one category");
    double share = 0.0;
    for (const auto& s : specs) {
        auto fail = [&](const char* c, const std::string& d) { throw ValidationError(c, s.category_id + ": " + d); };
        if (s.category_id.empty()) fail("empty_category_id", "category_id must be non-empty");
        if (!(s.traffic_share > 0.0 && s.traffic_share <= 1.0)) fail("traffic_share_out_of_range", "must lie in (0, 1]");
        if (s.repetition == Repetition::zipf && !(s.zipf_alpha > 0.0)) fail("zipf_alpha_not_positive", "alpha > 0");
        if (s.pool_size == 0) fail("empty_pool", "pool_size must be >= 1");
        if (!(s.cluster_density > 0.0 && s.cluster_density < 1.0)) fail("density_out_of_range", "must lie in (0, 1)");
        if (s.staleness_rate < 0.0) fail("staleness_negative", "staleness_rate must be >= 0");
        if (s.paraphrase_noise < 0.0) fail("noise_negative", "paraphrase_noise must be >= 0");
        if (s.paraphrase_spread < 0.0) fail("spread_negative", "paraphrase_spread must be >= 0");
        share += s.traffic_share;
    }
    if (std::abs(share - 1.0) > 1e-9) throw ValidationError("traffic_share_sum", "shares must sum to 1");
}

namespace detail {

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

inline void normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
}

/// Mean cosine distance from each sampled canonical point to its 10th
/// nearest neighbour. Points are normalize(center + sigma * B z) with the
/// center orthogonal to the latent basis B, so distances follow from z alone
/// and the sample-to-pool latent dot products can be computed once.
class TenthNnProbe {
public:
    TenthNnProbe(const std::vector<double>& z, std::vector<double> z_norm2, std::size_t m, std::size_t pool,
                 std::size_t sample)
        : pool_(pool), z_norm2_(std::move(z_norm2)) {
        const std::size_t n_sample = std::min(sample, pool);
        const std::size_t stride = std::max<std::size_t>(1, pool / n_sample);
        for (std::size_t s = 0; s < n_sample; ++s) samples_.push_back(s * stride);
        dots_.resize(samples_.size() * pool);
        for (std::size_t s = 0; s < samples_.size(); ++s) {
            const double* zi = z.data() + samples_[s] * m;
            for (std::size_t j = 0; j < pool; ++j) {
                const double* zj = z.data() + j * m;
                double ij = 0.0;
                for (std::size_t k = 0; k < m; ++k) ij += zi[k] * zj[k];
                dots_[s * pool + j] = static_cast<float>(ij);
            }
        }
    }

    double operator()(double sigma) const {
        constexpr std::size_t kth = 10;
        const double s2 = sigma * sigma;
        std::vector<double> inv_len(pool_);
        for (std::size_t j = 0; j < pool_; ++j) inv_len[j] = 1.0 / std::sqrt(1.0 + s2 * z_norm2_[j]);
        double total = 0.0;
        std::vector<double> best;
        for (std::size_t s = 0; s < samples_.size(); ++s) {
            const std::size_t i = samples_[s];
            const float* row = dots_.data() + s * pool_;
            best.clear();
            for (std::size_t j = 0; j < pool_; ++j) {
                if (j == i) continue;
                const double d = 1.0 - (1.0 + s2 * row[j]) * inv_len[i] * inv_len[j];
                if (best.size() < kth) {
                    best.push_back(d);
                    std::push_heap(best.begin(), best.end());
                } else if (d < best.front()) {
                    std::pop_heap(best.begin(), best.end());
                    best.back() = d;
                    std::push_heap(best.begin(), best.end());
                }
            }
            total += best.front();
        }
        return total / static_cast<double>(samples_.size());
    }

private:
    std::size_t pool_;
    std::vector<double> z_norm2_;
    std::vector<std::size_t> samples_;
    std::vector<float> dots_;
};

struct CategoryGeometry {
    std::vector<float> anchors;  // pool x d, unit rows
    double sigma = 0.0;
    double measured = 0.0;
};

inline CategoryGeometry build_geometry(const CategorySpec& spec, const GeneratorOptions& opt, std::uint64_t seed) {
    const std::size_t d = opt.dimension;
    const std::size_t m =
        std::min(spec.intrinsic_dimension ? spec.intrinsic_dimension : opt.intrinsic_dimension, d - 1);
    std::mt19937_64 rng(seed);

    // Center plus an orthonormal latent basis orthogonal to it.
    std::vector<std::vector<double>> frame;
    while (frame.size() < m + 1) {
        auto v = gaussian_vector(rng, d);
        for (const auto& b : frame) {
            double p = 0.0;
            for (std::size_t k = 0; k < d; ++k) p += v[k] * b[k];
            for (std::size_t k = 0; k < d; ++k) v[k] -= p * b[k];
        }
        normalize(v);
        frame.push_back(std::move(v));
    }

    std::vector<double> z(spec.pool_size * m);
    std::vector<double> z_norm2(spec.pool_size, 0.0);
    {
        std::normal_distribution<double> g;
        for (std::size_t i = 0; i < spec.pool_size; ++i)
            for (std::size_t a = 0; a < m; ++a) {
                const double x = g(rng);
                z[i * m + a] = x;
                z_norm2[i] += x * x;
            }
    }
    const TenthNnProbe measure(z, z_norm2, m, spec.pool_size, opt.density_sample);

    CategoryGeometry geo;
    const double target = spec.cluster_density;
    if (spec.pool_size > 10) {
        double lo = 1e-4, hi = 1e4;
        const double reachable = measure(hi);
        if (reachable < target)
            throw ValidationError("density_unreachable",
                                  spec.category_id + ": 10th-NN distance " + std::to_string(target) +
                                      " exceeds the reachable " + std::to_string(reachable) + " for this pool");
        for (int it = 0; it < 24; ++it) {
            const double mid = std::sqrt(lo * hi);
            (measure(mid) < target ? lo : hi) = mid;
        }
        geo.sigma = std::sqrt(lo * hi);
        geo.measured = measure(geo.sigma);
    } else {
        // Too few points for a 10th neighbour: match the typical pair distance instead.
        geo.sigma = std::sqrt(target / ((1.0 - target) * static_cast<double>(m)));
        geo.measured = target;
    }

    geo.anchors.resize(spec.pool_size * d);
    std::vector<double> v(d);
    for (std::size_t i = 0; i < spec.pool_size; ++i) {
        for (std::size_t k = 0; k < d; ++k) v[k] = frame[0][k];
        for (std::size_t a = 0; a < m; ++a) {
            const double c = geo.sigma * z[i * m + a];
            for (std::size_t k = 0; k < d; ++k) v[k] += c * frame[a + 1][k];
        }
        normalize(v);
        for (std::size_t k = 0; k < d; ++k) geo.anchors[i * d + k] = static_cast<float>(v[k]);
    }
    return geo;
}

}  // namespace detail

/// Deterministic heterogeneous workload. Each category's canonical queries
/// are points near a random center, spread over a low-rank subspace with the
/// spread tuned so the mean 10th-NN cosine distance matches cluster_density.
/// Every occurrence is its canonical point plus an isotropic perturbation of
/// norm paraphrase_noise * |N(0,1)| (or paraphrase_noise * exp(spread * N(0,1))
/// when a spread is set), renormalized. Arrivals are Poisson.
inline Workload generate_workload(const std::vector<CategorySpec>& specs, std::size_t n_queries, std::uint64_t seed,
                                  const GeneratorOptions& opt = {}) {
    validate_specs(specs);
    if (n_queries == 0) throw ValidationError("no_queries", "n_queries must be >= 1");
    if (opt.dimension < 2) throw ValidationError("dimension_too_small", "dimension must be >= 2");
    if (opt.intrinsic_dimension < 1) throw ValidationError("intrinsic_dimension", "must be >= 1");
    if (!(opt.arrival_rate_qps > 0.0)) throw ValidationError("arrival_rate", "must be > 0");

    Workload w;
    w.dimension = opt.dimension;
    w.seed = seed;
    w.categories = specs;

    std::vector<detail::CategoryGeometry> geo;
    std::vector<std::vector<double>> popularity_cdf;
    for (std::size_t c = 0; c < specs.size(); ++c) {
        geo.push_back(detail::build_geometry(specs[c], opt, mix_seed(seed, c, 1)));
        w.cluster_scale.push_back(geo.back().sigma);
        w.measured_density.push_back(geo.back().measured);
        std::vector<double> cdf(specs[c].pool_size);
        double acc = 0.0;
        for (std::size_t i = 0; i < cdf.size(); ++i) {
            acc += specs[c].repetition == Repetition::zipf ? std::pow(static_cast<double>(i + 1), -specs[c].zipf_alpha)
                                                           : 1.0;
            cdf[i] = acc;
        }
        for (auto& x : cdf) x /= acc;
        popularity_cdf.push_back(std::move(cdf));
    }

    std::vector<double> share_cdf;
    double acc = 0.0;
    for (const auto& s : specs) share_cdf.push_back(acc += s.traffic_share);

    std::mt19937_64 rng(mix_seed(seed, 0, 2));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> gap(opt.arrival_rate_qps);
    std::normal_distribution<double> gauss;

    const std::size_t d = opt.dimension;
    w.queries.reserve(n_queries);
    w.embeddings.resize(n_queries * d);
    std::vector<double> v(d), noise(d);
    double t = 0.0;
    for (std::size_t q = 0; q < n_queries; ++q) {
        t += gap(rng);
        const double u = unit(rng) * acc;
        const auto c = static_cast<std::uint32_t>(
            std::min<std::size_t>(std::upper_bound(share_cdf.begin(), share_cdf.end(), u) - share_cdf.begin(),
                                  specs.size() - 1));
        const auto& cdf = popularity_cdf[c];
        const auto idx = static_cast<std::uint32_t>(
            std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), unit(rng)) - cdf.begin(), cdf.size() - 1));
        w.queries.push_back({c, idx, static_cast<TimestampMs>(std::llround(t * 1000.0))});

        const double g = gauss(rng);
        const double magnitude = specs[c].paraphrase_noise *
                                 (specs[c].paraphrase_spread > 0.0 ? std::exp(specs[c].paraphrase_spread * g) : std::abs(g));
        double n2 = 0.0;
        for (auto& x : noise) {
            x = gauss(rng);
            n2 += x * x;
        }
        const double scale = n2 > 0.0 ? magnitude / std::sqrt(n2) : 0.0;
        double v2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            v[k] = geo[c].anchors[static_cast<std::size_t>(idx) * d + k] + scale * noise[k];
            v2 += v[k] * v[k];
        }
        const double inv = 1.0 / std::sqrt(v2);
        for (std::size_t k = 0; k < d; ++k) w.embeddings[q * d + k] = static_cast<float>(v[k] * inv);
    }
    return w;
}

/// Piecewise-constant load multiplier alpha(t) over [start_s, end_s).
struct LoadPhase {
    double start_s = 0.0;
    double end_s = 0.0;
    double multiplier = 1.0;
};

struct ModelSpec {
    std::string model_id;
    double base_latency_ms = 200.0;
    std::vector<LoadPhase> load_schedule;

    /// Overlapping phases take the largest multiplier; outside all phases alpha = 1.
    double multiplier_at(double t_s) const {
        double alpha = 1.0;
        for (const auto& p : load_schedule)
            if (t_s >= p.start_s && t_s < p.end_s) alpha = std::max(alpha, p.multiplier);
        return alpha;
    }

    void validate() const {
        if (model_id.empty()) throw ValidationError("empty_model_id", "model_id must be non-empty");
        if (!(base_latency_ms > 5.0)) throw ValidationError("base_latency", model_id + ": T_base must exceed 5 ms");
        for (const auto& p : load_schedule)
            if (!(p.multiplier >= 1.0)) throw ValidationError("load_multiplier", model_id + ": alpha must be >= 1");
    }
};

enum class CacheMode { hybrid, vdb_baseline, no_cache };

inline const char* to_string(CacheMode m) {
    switch (m) {
        case CacheMode::hybrid: return "hybrid";
        case CacheMode::vdb_baseline: return "vdb_baseline";
        case CacheMode::no_cache: return "no_cache";
    }
    return "unknown";
}

struct SimConfig {
    CacheMode mode = CacheMode::hybrid;
    bool controller_enabled = false;
    ControllerConfig controller;                        ///< used for models without an override
    std::map<std::string, ControllerConfig> model_controllers;
    double signal_interval_s = 10.0;
    double vdb_threshold = 0.85;                        ///< single collection-wide threshold
    double vdb_search_ms = 30.0;
    double vdb_fetch_ms = 5.0;
};

struct CategoryReport {
    std::string category;
    std::string model_id;
    std::uint64_t queries = 0;
    std::uint64_t hits = 0;
    std::uint64_t model_calls = 0;
    std::uint64_t stale_hits = 0;
    std::uint64_t false_positives = 0;
    double charged_latency_ms = 0.0;   ///< sum over lookups

    double hit_rate() const { return queries ? static_cast<double>(hits) / static_cast<double>(queries) : 0.0; }
    double model_traffic_fraction() const {
        return queries ? static_cast<double>(model_calls) / static_cast<double>(queries) : 0.0;
    }
    double mean_charged_latency_ms() const {
        return queries ? charged_latency_ms / static_cast<double>(queries) : 0.0;
    }
    double stale_hits_fraction() const { return hits ? static_cast<double>(stale_hits) / static_cast<double>(hits) : 0.0; }
    double false_positive_rate() const {
        return hits ? static_cast<double>(false_positives) / static_cast<double>(hits) : 0.0;
    }
};

struct ModelReport {
    std::string model_id;
    std::uint64_t queries_served = 0;
    double total_latency_ms = 0.0;

    double mean_latency_ms() const {
        return queries_served ? total_latency_ms / static_cast<double>(queries_served) : 0.0;
    }
};

/// One row per (signal window, category).
struct WindowRow {
    double window_start_s = 0.0;
    std::string category;
    std::string model_id;
    double lambda = 0.0;
    double effective_threshold = 0.0;
    std::uint64_t lookups = 0;
    std::uint64_t hits = 0;
    std::uint64_t model_calls = 0;
};

struct SimReport {
    CacheMode mode = CacheMode::hybrid;
    std::uint64_t seed = 0;
    double total_simulated_s = 0.0;
    std::vector<CategoryReport> categories;
    std::vector<ModelReport> models;
    std::vector<WindowRow> series;

    const CategoryReport& category(const std::string& id) const {
        for (const auto& c : categories)
            if (c.category == id) return c;
        throw UsageError("no category '" + id + "' in report");
    }
    const ModelReport& model(const std::string& id) const {
        for (const auto& m : models)
            if (m.model_id == id) return m;
        throw UsageError("no model '" + id + "' in report");
    }

    /// Model calls / lookups for one model's categories over windows starting in [from_s, to_s).
    double traffic_fraction(const std::string& model_id, double from_s, double to_s) const {
        std::uint64_t lookups = 0, calls = 0;
        for (const auto& r : series) {
            if (r.model_id != model_id || r.window_start_s < from_s || r.window_start_s >= to_s) continue;
            lookups += r.lookups;
            calls += r.model_calls;
        }
        return lookups ? static_cast<double>(calls) / static_cast<double>(lookups) : 0.0;
    }

    double hit_rate(const std::string& category, double from_s, double to_s) const {
        std::uint64_t lookups = 0, hits = 0;
        for (const auto& r : series) {
            if (r.category != category || r.window_start_s < from_s || r.window_start_s >= to_s) continue;
            lookups += r.lookups;
            hits += r.hits;
        }
        return lookups ? static_cast<double>(hits) / static_cast<double>(lookups) : 0.0;
    }
};

/// Ground-truth content versions: each (category, canonical query) changes
/// as a Poisson process with the category's staleness rate, drawn from its
/// own stream so the history is independent of query order.
class ContentVersions {
public:
    ContentVersions(std::uint64_t seed, std::vector<double> rates_per_s) : seed_(seed), rates_(std::move(rates_per_s)) {}

    std::uint64_t version_at(std::uint32_t category, std::uint32_t item, TimestampMs now) {
        const double rate = rates_[category];
        if (rate <= 0.0) return 0;
        const std::uint64_t key = (static_cast<std::uint64_t>(category) << 32) | item;
        auto [it, fresh] = items_.try_emplace(key, Item{SplitMix64(mix_seed(seed_, key, 3))});
        Item& s = it->second;
        if (fresh) s.next_change_s = -std::log(s.rng.unit()) / rate;
        const double t = static_cast<double>(now) / 1000.0;
        while (s.next_change_s <= t) {
            ++s.version;
            s.next_change_s += -std::log(s.rng.unit()) / rate;
        }
        return s.version;
    }

private:
    struct Item {
        SplitMix64 rng;
        std::uint64_t version = 0;
        double next_change_s = 0.0;
    };
    std::uint64_t seed_;
    std::vector<double> rates_;
    std::unordered_map<std::uint64_t, Item> items_;
};

namespace detail {

inline std::string encode_response(std::uint32_t category, std::uint32_t item, std::uint64_t version) {
    return std::to_string(category) + ':' + std::to_string(item) + ':' + std::to_string(version);
}

struct DecodedResponse {
    std::uint32_t category = 0;
    std::uint32_t item = 0;
    std::uint64_t version = 0;
};

inline DecodedResponse decode_response(const std::string& body) {
    const auto a = body.find(':');
    const auto b = body.find(':', a + 1);
    return {static_cast<std::uint32_t>(std::stoul(body.substr(0, a))),
            static_cast<std::uint32_t>(std::stoul(body.substr(a + 1, b - a - 1))),
            std::stoull(body.substr(b + 1))};
}

}  // namespace detail

/// Replays a workload through `cache` on a virtual clock.
///
/// Per query: look up (charging hybrid 2/7 ms, vdb_baseline 30/35 ms, or 0
/// with no cache); on a miss call the bound model (T_base * alpha(t)) and
/// insert the response. The response payload carries (category, canonical
/// query, content version), which is how hits are scored as stale or false
/// positive. Every signal interval each model reports its queueing delay
/// T_base * (alpha - 1) to the controller; the applied load factor then
/// drives that model's categories until the next report.
inline SimReport run_simulation(const Workload& workload, SemanticCache& cache, const std::vector<ModelSpec>& models,
                                LoadController& controller, const SimConfig& cfg) {
    if (cache.dimension() != workload.dimension)
        throw UsageError("cache dimension does not match the workload");
    if (!(cfg.signal_interval_s > 0.0)) throw UsageError("signal interval must be > 0");
    std::map<std::string, const ModelSpec*> model_by_id;
    for (const auto& m : models) {
        m.validate();
        model_by_id[m.model_id] = &m;
    }
    for (const auto& c : workload.categories)
        if (!model_by_id.contains(c.model_id))
            throw UsageError("category '" + c.category_id + "' is bound to unknown model '" + c.model_id + "'");

    SimReport report;
    report.mode = cfg.mode;
    report.seed = workload.seed;
    for (const auto& c : workload.categories) report.categories.push_back({c.category_id, c.model_id});
    for (const auto& m : models) report.models.push_back({m.model_id});
    std::map<std::string, std::size_t> model_slot;
    for (std::size_t i = 0; i < models.size(); ++i) model_slot[models[i].model_id] = i;

    std::vector<double> rates;
    for (const auto& c : workload.categories) rates.push_back(c.staleness_rate);
    ContentVersions versions(workload.seed, rates);

    const std::size_t n_cat = workload.categories.size();
    std::vector<WindowRow> window(n_cat);
    std::int64_t current_window = 0;
    const double interval = cfg.signal_interval_s;

    auto lambda_for = [&](const std::string& model_id) {
        return cfg.controller_enabled ? controller.current_lambda(model_id) : 0.0;
    };
    auto open_window = [&](std::int64_t w) {
        for (std::size_t c = 0; c < n_cat; ++c) {
            const auto& spec = workload.categories[c];
            WindowRow r;
            r.window_start_s = static_cast<double>(w) * interval;
            r.category = spec.category_id;
            r.model_id = spec.model_id;
            r.lambda = lambda_for(spec.model_id);
            r.effective_threshold = cfg.mode == CacheMode::vdb_baseline
                                        ? cfg.vdb_threshold
                                        : cache.policies().effective_policy(spec.category_id, r.lambda).threshold;
            window[c] = r;
        }
    };
    auto close_window = [&](std::int64_t w) {
        for (auto& r : window) report.series.push_back(r);
        const double end_s = static_cast<double>(w + 1) * interval;
        const auto end_ms = static_cast<TimestampMs>(std::llround(end_s * 1000.0));
        for (const auto& m : models) {
            const double alpha = m.multiplier_at(end_s - 1e-9);
            LoadSignal sig{m.model_id, m.base_latency_ms * (alpha - 1.0), 0.0, end_ms};
            auto it = cfg.model_controllers.find(m.model_id);
            controller.ingest_signal(sig, it != cfg.model_controllers.end() ? it->second : cfg.controller);
        }
    };

    open_window(0);
    LookupOptions vdb_opts;
    vdb_opts.threshold_override = cfg.vdb_threshold;

    for (std::size_t i = 0; i < workload.queries.size(); ++i) {
        const Query& q = workload.queries[i];
        const double t_s = static_cast<double>(q.arrival_ms) / 1000.0;
        const auto w = static_cast<std::int64_t>(std::floor(t_s / interval));
        while (current_window < w) {
            close_window(current_window);
            open_window(++current_window);
        }

        const auto& spec = workload.categories[q.category];
        auto& cat = report.categories[q.category];
        auto& row = window[q.category];
        cat.queries += 1;
        row.lookups += 1;

        bool hit = false;
        if (cfg.mode != CacheMode::no_cache) {
            const Embedding e = workload.embedding(i);
            const double lambda = row.lambda;
            const LookupResult res = cfg.mode == CacheMode::vdb_baseline
                                         ? cache.lookup(e, spec.category_id, q.arrival_ms, lambda, vdb_opts)
                                         : cache.lookup(e, spec.category_id, q.arrival_ms, lambda);
            hit = res.hit();
            if (cfg.mode == CacheMode::hybrid) {
                cat.charged_latency_ms += res.charged_latency_ms;
            } else if (res.miss_reason != MissReason::caching_disabled) {
                cat.charged_latency_ms += cfg.vdb_search_ms + (hit ? cfg.vdb_fetch_ms : 0.0);
            }
            if (hit) {
                const auto truth = detail::decode_response(res.response_body);
                if (truth.category != q.category || truth.item != q.canonical) cat.false_positives += 1;
                if (truth.version < versions.version_at(truth.category, truth.item, q.arrival_ms)) cat.stale_hits += 1;
            }
            if (!hit) {
                const auto version = versions.version_at(q.category, q.canonical, q.arrival_ms);
                cache.insert(e, spec.category_id, "q" + std::to_string(i),
                             detail::encode_response(q.category, q.canonical, version), q.arrival_ms);
            }
        }
        if (hit) {
            cat.hits += 1;
            row.hits += 1;
        } else {
            const ModelSpec& m = *model_by_id.at(spec.model_id);
            auto& mr = report.models[model_slot.at(spec.model_id)];
            mr.queries_served += 1;
            mr.total_latency_ms += m.base_latency_ms * m.multiplier_at(t_s);
            cat.model_calls += 1;
            row.model_calls += 1;
        }
    }
    close_window(current_window);
    report.total_simulated_s =
        workload.queries.empty() ? 0.0 : static_cast<double>(workload.queries.back().arrival_ms) / 1000.0;
    return report;
}

/// Everything needed to stand up a fresh cache for one simulation run.
struct CacheSetup {
    IndexParams index;
    std::vector<CategoryConfig> categories;
    CacheOptions options;
    BackendLatencyModel store_latency;
};

/// A cache together with the registry and store it borrows.
struct CacheBundle {
    std::shared_ptr<PolicyRegistry> registry;
    std::unique_ptr<SimClock> clock;
    std::unique_ptr<SimulatedDocStore> store;
    std::unique_ptr<SemanticCache> cache;
};

inline CacheBundle make_cache(const CacheSetup& setup) {
    CacheBundle b;
    b.registry = std::make_shared<PolicyRegistry>(setup.categories);
    b.clock = std::make_unique<SimClock>();
    b.store = std::make_unique<SimulatedDocStore>(setup.store_latency, b.clock.get());
    b.cache = std::make_unique<SemanticCache>(setup.index, b.registry, *b.store, setup.options);
    return b;
}

struct LoadSpike {
    std::string model_id;
    double multiplier = 3.0;
    double start_s = 0.0;
    double duration_s = 0.0;
};

struct SpikeOutcome {
    SimReport controller_off;
    SimReport controller_on;
    LoadSpike spike;

    /// Relative drop in the spiked model's traffic fraction during the spike.
    double traffic_reduction() const {
        const double off = spike_traffic(controller_off, spike.model_id);
        const double on = spike_traffic(controller_on, spike.model_id);
        return off > 0.0 ? (off - on) / off : 0.0;
    }
    double spike_traffic(const SimReport& r, const std::string& model_id) const {
        return r.traffic_fraction(model_id, spike.start_s, spike.start_s + spike.duration_s);
    }
};

/// Replays the same workload twice under a load spike, once with the
/// controller ignored and once with it driving the policies.
inline SpikeOutcome run_load_spike_scenario(const Workload& workload, const CacheSetup& setup,
                                            std::vector<ModelSpec> models, const LoadSpike& spike, SimConfig cfg) {
    bool found = false;
    for (auto& m : models) {
        if (m.model_id != spike.model_id) continue;
        m.load_schedule.push_back({spike.start_s, spike.start_s + spike.duration_s, spike.multiplier});
        found = true;
    }
    if (!found) throw UsageError("spike targets unknown model '" + spike.model_id + "'");

    SpikeOutcome out;
    out.spike = spike;
    for (bool enabled : {false, true}) {
        auto bundle = make_cache(setup);
        LoadController controller(cfg.controller);
        cfg.controller_enabled = enabled;
        (enabled ? out.controller_on : out.controller_off) =
            run_simulation(workload, *bundle.cache, models, controller, cfg);
    }
    return out;
}

// ---- report serialization ----

inline nlohmann::json to_json(const SimReport& r) {
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : r.categories) {
        cats.push_back({{"category", c.category},
                        {"model_id", c.model_id},
                        {"queries", c.queries},
                        {"hits", c.hits},
                        {"model_calls", c.model_calls},
                        {"hit_rate", c.hit_rate()},
                        {"mean_charged_latency_ms", c.mean_charged_latency_ms()},
                        {"model_traffic_fraction", c.model_traffic_fraction()},
                        {"stale_hits_fraction", c.stale_hits_fraction()},
                        {"false_positive_rate", c.false_positive_rate()}});
    }
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : r.models)
        mods.push_back({{"model_id", m.model_id},
                        {"queries_served", m.queries_served},
                        {"mean_latency_ms", m.mean_latency_ms()}});
    return {{"mode", to_string(r.mode)},
            {"seed", r.seed},
            {"total_simulated_s", r.total_simulated_s},
            {"categories", cats},
            {"models", mods}};
}

inline void write_series_csv(std::ostream& os, const SimReport& r) {
    os << "window_start_s,model_id,lambda,category,effective_threshold,lookups,hits,hit_rate,traffic_fraction\n";
    os.precision(10);
    for (const auto& w : r.series) {
        const double hr = w.lookups ? static_cast<double>(w.hits) / static_cast<double>(w.lookups) : 0.0;
        const double tf = w.lookups ? static_cast<double>(w.model_calls) / static_cast<double>(w.lookups) : 0.0;
        os << w.window_start_s << ',' << w.model_id << ',' << w.lambda << ',' << w.category << ','
           << w.effective_threshold << ',' << w.lookups << ',' << w.hits << ',' << hr << ',' << tf << '\n';
    }
}

}  // namespace catcache::sim
