#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catcache/errors.hpp"

namespace catcache {

/// Per-category cache policy. Durations are seconds.
struct CategoryConfig {
    std::string category_id;
    double base_threshold = 0.85;   ///< tau0
    double base_ttl = 3600.0;       ///< t0
    double quota_fraction = 0.05;   ///< share of global entry capacity
    double priority = 1.0;          ///< economic weight in the eviction score
    bool allow_caching = true;
    double delta_max = 0.0;         ///< largest threshold relaxation under load
    double beta_max = 1.0;          ///< largest TTL extension factor under load
    double tau_min = 0.85;          ///< threshold safety floor
    double ttl_max = 3600.0;        ///< TTL ceiling
    double sensitivity = 0.0;       ///< k: hit-rate points gained per unit of relaxation
    std::string model_id = "default";  ///< downstream model whose load drives this category

    friend bool operator==(const CategoryConfig&, const CategoryConfig&) = default;
};

struct EffectivePolicy {
    double threshold = 0.0;
    double ttl = 0.0;
    double load_factor = 0.0;
};

/// Fallback for categories nobody registered.
inline CategoryConfig default_category_config(std::string id = "") {
    CategoryConfig c;
    c.category_id = std::move(id);
    c.base_threshold = 0.85;
    c.base_ttl = 3600.0;
    c.quota_fraction = 0.05;
    c.priority = 1.0;
    c.allow_caching = true;
    c.delta_max = 0.0;
    c.beta_max = 1.0;
    c.tau_min = 0.85;
    c.ttl_max = 3600.0;
    c.sensitivity = 0.0;
    return c;
}

/// Checks every single-config invariant; throws ValidationError naming the first one broken.
inline void validate_config(const CategoryConfig& c) {
    auto fail = [&](const char* constraint, const std::string& detail) {
        throw ValidationError(constraint, "category '" + c.category_id + "': " + detail);
    };
    auto finite = [](double v) { return std::isfinite(v); };
    if (c.category_id.empty()) fail("empty_category_id", "category_id must be non-empty");
    if (!finite(c.base_threshold) || c.base_threshold <= 0.0 || c.base_threshold > 1.0)
        fail("threshold_out_of_range", "base_threshold must lie in (0, 1]");
    if (!finite(c.tau_min) || c.tau_min <= 0.0 || c.tau_min > 1.0)
        fail("tau_min_out_of_range", "tau_min must lie in (0, 1]");
    if (!finite(c.base_ttl) || c.base_ttl < 0.0) fail("ttl_negative", "base_ttl must be >= 0");
    if (!finite(c.ttl_max) || c.ttl_max < 0.0) fail("ttl_negative", "ttl_max must be >= 0");
    if (!finite(c.quota_fraction) || c.quota_fraction < 0.0 || c.quota_fraction > 1.0)
        fail("quota_out_of_range", "quota_fraction must lie in [0, 1]");
    if (!finite(c.priority) || c.priority <= 0.0) fail("priority_not_positive", "priority must be > 0");
    if (!finite(c.delta_max) || c.delta_max < 0.0) fail("delta_max_negative", "delta_max must be >= 0");
    if (!finite(c.beta_max) || c.beta_max < 1.0) fail("beta_max_below_one", "beta_max must be >= 1");
    if (!finite(c.sensitivity) || c.sensitivity < 0.0) fail("sensitivity_negative", "sensitivity must be >= 0");
    if (c.base_threshold - c.delta_max < c.tau_min - 1e-12)
        fail("relaxation_below_floor", "base_threshold - delta_max must be >= tau_min");
    if (c.base_ttl * c.beta_max > c.ttl_max * (1.0 + 1e-12))
        fail("ttl_extension_above_max", "base_ttl * beta_max must be <= ttl_max");
}

/// tau(lambda) = max(tau_min, tau0 - lambda*delta_max);
/// t(lambda) = min(ttl_max, t0*(1 + lambda*(beta_max - 1))).
inline EffectivePolicy effective_policy(const CategoryConfig& c, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("load factor must lie in [0, 1]");
    EffectivePolicy p;
    p.load_factor = lambda;
    p.threshold = std::max(c.tau_min, c.base_threshold - lambda * c.delta_max);
    p.ttl = std::min(c.ttl_max, c.base_ttl * (1.0 + lambda * (c.beta_max - 1.0)));
    return p;
}

inline void to_json(nlohmann::json& j, const CategoryConfig& c) {
    j = nlohmann::json{{"category_id", c.category_id},
                       {"base_threshold", c.base_threshold},
                       {"base_ttl", static_cast<std::int64_t>(std::llround(c.base_ttl))},
                       {"quota_fraction", c.quota_fraction},
                       {"priority", c.priority},
                       {"allow_caching", c.allow_caching},
                       {"delta_max", c.delta_max},
                       {"beta_max", c.beta_max},
                       {"tau_min", c.tau_min},
                       {"ttl_max", static_cast<std::int64_t>(std::llround(c.ttl_max))},
                       {"sensitivity", c.sensitivity},
                       {"model_id", c.model_id}};
}

/// Missing optional fields fall back to the conservative defaults. The two
/// durations must be integer seconds.
inline void from_json(const nlohmann::json& j, CategoryConfig& c) {
    if (!j.is_object()) throw ValidationError("malformed_config", "category config must be a JSON object");
    const CategoryConfig d = default_category_config();
    auto num = [&](const char* key, double fallback) {
        if (!j.contains(key)) return fallback;
        if (!j.at(key).is_number()) throw ValidationError("malformed_config", std::string(key) + " must be a number");
        return j.at(key).get<double>();
    };
    auto seconds = [&](const char* key, double fallback) {
        if (!j.contains(key)) return fallback;
        if (!j.at(key).is_number_integer())
            throw ValidationError("malformed_config", std::string(key) + " must be integer seconds");
        return static_cast<double>(j.at(key).get<std::int64_t>());
    };
    if (!j.contains("category_id") || !j.at("category_id").is_string())
        throw ValidationError("malformed_config", "category_id must be a string");
    c.category_id = j.at("category_id").get<std::string>();
    c.base_threshold = num("base_threshold", d.base_threshold);
    c.base_ttl = seconds("base_ttl", d.base_ttl);
    c.quota_fraction = num("quota_fraction", d.quota_fraction);
    c.priority = num("priority", d.priority);
    c.allow_caching = j.contains("allow_caching") ? j.at("allow_caching").get<bool>() : d.allow_caching;
    c.delta_max = num("delta_max", d.delta_max);
    c.beta_max = num("beta_max", d.beta_max);
    c.tau_min = num("tau_min", std::min(d.tau_min, c.base_threshold - c.delta_max));
    c.ttl_max = seconds("ttl_max", std::max(d.ttl_max, c.base_ttl * c.beta_max));
    c.sensitivity = num("sensitivity", d.sensitivity);
    c.model_id = j.contains("model_id") ? j.at("model_id").get<std::string>() : d.model_id;
}

/// Registry of category configs behind an immutable snapshot. Readers copy
/// the snapshot pointer; writers build a new map and swap it in whole.
class PolicyRegistry {
public:
    using Snapshot = std::map<std::string, CategoryConfig>;

    PolicyRegistry() : snapshot_(std::make_shared<const Snapshot>()) {}

    explicit PolicyRegistry(const std::vector<CategoryConfig>& configs) : PolicyRegistry() {
        replace_all(configs);
    }

    std::shared_ptr<const Snapshot> snapshot() const {
        std::lock_guard lock(snapshot_mu_);
        return snapshot_;
    }

    /// Adds or replaces one config; the quota sum is checked against the
    /// other registered categories.
    void register_category(const CategoryConfig& config) {
        validate_config(config);
        std::lock_guard writer(write_mu_);
        auto next = std::make_shared<Snapshot>(*snapshot());
        (*next)[config.category_id] = config;
        check_quota_sum(*next);
        publish(std::move(next));
    }

    /// Whole-registry reload; all configs are validated before anything changes.
    void replace_all(const std::vector<CategoryConfig>& configs) {
        auto next = std::make_shared<Snapshot>();
        for (const auto& c : configs) {
            validate_config(c);
            if (next->contains(c.category_id))
                throw ValidationError("duplicate_category", "category '" + c.category_id + "' listed twice");
            (*next)[c.category_id] = c;
        }
        check_quota_sum(*next);
        std::lock_guard writer(write_mu_);
        publish(std::move(next));
    }

    /// Applies `mutate` to a copy of a registered config and re-registers it.
    void update(const std::string& id, const std::function<void(CategoryConfig&)>& mutate) {
        std::lock_guard writer(write_mu_);
        auto next = std::make_shared<Snapshot>(*snapshot());
        auto it = next->find(id);
        if (it == next->end()) throw UsageError("unknown category '" + id + "'");
        mutate(it->second);
        validate_config(it->second);
        check_quota_sum(*next);
        publish(std::move(next));
    }

    bool contains(const std::string& id) const { return snapshot()->contains(id); }

    CategoryConfig get_config(const std::string& id) const {
        auto snap = snapshot();
        auto it = snap->find(id);
        return it != snap->end() ? it->second : default_category_config(id);
    }

    EffectivePolicy effective_policy(const std::string& id, double lambda) const {
        return catcache::effective_policy(get_config(id), lambda);
    }

    std::vector<CategoryConfig> all() const {
        std::vector<CategoryConfig> out;
        for (const auto& [_, c] : *snapshot()) out.push_back(c);
        return out;
    }

private:
    static void check_quota_sum(const Snapshot& s) {
        double sum = 0.0;
        for (const auto& [_, c] : s) sum += c.quota_fraction;
        if (sum > 1.0 + 1e-9)
            throw ValidationError("quota_sum_exceeded", "quota fractions sum to " + std::to_string(sum) + " > 1");
    }

    void publish(std::shared_ptr<const Snapshot> next) {
        std::lock_guard lock(snapshot_mu_);
        snapshot_ = std::move(next);
    }

    mutable std::mutex snapshot_mu_;
    std::mutex write_mu_;
    std::shared_ptr<const Snapshot> snapshot_;
};

/// Parses the category configuration file: a JSON array of CategoryConfig objects.
inline std::vector<CategoryConfig> parse_category_configs(const nlohmann::json& doc) {
    if (!doc.is_array()) throw ValidationError("malformed_config", "config document must be a JSON array");
    std::vector<CategoryConfig> out;
    for (const auto& item : doc) out.push_back(item.get<CategoryConfig>());
    return out;
}

}  // namespace catcache
