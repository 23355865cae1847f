#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catcache/workload_sim.hpp"

namespace catcache::sim {

/// A simulation scenario file: workload, cache setup, models, optional spike.
struct Scenario {
    std::uint64_t seed = 1;
    std::size_t n_queries = 10'000;
    GeneratorOptions generator;
    std::vector<CategorySpec> categories;
    CacheSetup cache;
    std::vector<ModelSpec> models;
    SimConfig sim;
    std::optional<LoadSpike> spike;
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline ControllerConfig parse_controller(const nlohmann::json& j, ControllerConfig c = {}) {
    read_opt(j, "latency_target_ms", c.latency_target_ms);
    read_opt(j, "queue_target", c.queue_target);
    read_opt(j, "latency_weight", c.latency_weight);
    read_opt(j, "queue_weight", c.queue_weight);
    read_opt(j, "averaging_window_s", c.averaging_window_s);
    read_opt(j, "hysteresis_step", c.hysteresis_step);
    read_opt(j, "fp_rate_limit", c.fp_rate_limit);
    read_opt(j, "fp_delta_shrink", c.fp_delta_shrink);
    c.validate();
    return c;
}

inline CacheMode parse_mode(const std::string& s) {
    if (s == "hybrid") return CacheMode::hybrid;
    if (s == "vdb_baseline") return CacheMode::vdb_baseline;
    if (s == "no_cache") return CacheMode::no_cache;
    throw ValidationError("unknown_mode", s);
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& j) {
    using detail::read_opt;
    if (!j.is_object()) throw ValidationError("malformed_scenario", "scenario must be a JSON object");
    Scenario s;
    read_opt(j, "seed", s.seed);
    read_opt(j, "n_queries", s.n_queries);
    if (j.contains("mode")) s.sim.mode = detail::parse_mode(j.at("mode").get<std::string>());
    read_opt(j, "controller_enabled", s.sim.controller_enabled);
    read_opt(j, "vdb_threshold", s.sim.vdb_threshold);
    read_opt(j, "signal_interval_s", s.sim.signal_interval_s);

    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        read_opt(g, "dimension", s.generator.dimension);
        read_opt(g, "intrinsic_dimension", s.generator.intrinsic_dimension);
        read_opt(g, "arrival_rate_qps", s.generator.arrival_rate_qps);
    }
    s.cache.index.dimension = s.generator.dimension;
    s.cache.index.ef_construction = 100;
    if (j.contains("index")) {
        const auto& x = j.at("index");
        read_opt(x, "max_neighbors", s.cache.index.max_neighbors);
        read_opt(x, "ef_construction", s.cache.index.ef_construction);
        read_opt(x, "ef_search", s.cache.index.ef_search);
        read_opt(x, "seed", s.cache.index.seed);
    }
    if (j.contains("cache")) {
        const auto& c = j.at("cache");
        read_opt(c, "capacity", s.cache.options.capacity);
        read_opt(c, "local_search_ms", s.cache.options.local_search_ms);
        read_opt(c, "fetch_ms", s.cache.store_latency.fetch_ms);
        read_opt(c, "put_ms", s.cache.store_latency.put_ms);
    }
    if (j.contains("controller")) s.sim.controller = detail::parse_controller(j.at("controller"));

    for (const auto& c : j.at("categories")) {
        CategorySpec spec;
        spec.category_id = c.at("category_id").get<std::string>();
        read_opt(c, "traffic_share", spec.traffic_share);
        if (c.contains("repetition")) {
            const auto r = c.at("repetition").get<std::string>();
            if (r == "zipf") spec.repetition = Repetition::zipf;
            else if (r == "uniform") spec.repetition = Repetition::uniform;
            else throw ValidationError("unknown_repetition", r);
        }
        read_opt(c, "zipf_alpha", spec.zipf_alpha);
        read_opt(c, "pool_size", spec.pool_size);
        read_opt(c, "cluster_density", spec.cluster_density);
        read_opt(c, "staleness_rate", spec.staleness_rate);
        read_opt(c, "model_id", spec.model_id);
        read_opt(c, "paraphrase_noise", spec.paraphrase_noise);
        read_opt(c, "paraphrase_spread", spec.paraphrase_spread);
        read_opt(c, "intrinsic_dimension", spec.intrinsic_dimension);
        s.categories.push_back(spec);

        nlohmann::json policy = c.contains("policy") ? c.at("policy") : nlohmann::json::object();
        policy["category_id"] = spec.category_id;
        if (!policy.contains("model_id")) policy["model_id"] = spec.model_id;
        s.cache.categories.push_back(policy.get<CategoryConfig>());
    }
    validate_specs(s.categories);
    [[maybe_unused]] const PolicyRegistry checked(s.cache.categories);

    for (const auto& m : j.at("models")) {
        ModelSpec spec;
        spec.model_id = m.at("model_id").get<std::string>();
        read_opt(m, "base_latency_ms", spec.base_latency_ms);
        if (m.contains("load_schedule"))
            for (const auto& p : m.at("load_schedule"))
                spec.load_schedule.push_back(
                    {p.at("start_s").get<double>(), p.at("end_s").get<double>(), p.at("multiplier").get<double>()});
        spec.validate();
        if (m.contains("controller"))
            s.sim.model_controllers[spec.model_id] = detail::parse_controller(m.at("controller"), s.sim.controller);
        s.models.push_back(spec);
    }

    if (j.contains("spike")) {
        const auto& x = j.at("spike");
        LoadSpike spike;
        spike.model_id = x.at("model_id").get<std::string>();
        read_opt(x, "multiplier", spike.multiplier);
        read_opt(x, "start_s", spike.start_s);
        read_opt(x, "duration_s", spike.duration_s);
        s.spike = spike;
    }
    return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("unreadable_scenario", path.string());
    return parse_scenario(nlohmann::json::parse(in));
}

}  // namespace catcache::sim
