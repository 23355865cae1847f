#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "catcache/adaptive_controller.hpp"
#include "catcache/cache_core.hpp"
#include "catcache/category_policy.hpp"
#include "catcache/doc_store.hpp"
#include "catcache/embedding.hpp"

namespace catcache {

/// Deterministic, non-semantic embedding of a text string: each dimension is
/// a hash of (text, dimension index) mapped to [-1, 1], then normalized.
/// Identical strings collide; similar strings do not.
inline Embedding text_pseudo_embedding(std::string_view text, std::size_t dimension) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::vector<float> v(dimension);
    for (std::size_t i = 0; i < dimension; ++i) {
        std::uint64_t z = h + 0x9e3779b97f4a7c15ull * (i + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z ^= z >> 31;
        v[i] = static_cast<float>(static_cast<double>(z >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    }
    return Embedding(std::move(v));
}

/// JSON-over-HTTP front end for a SemanticCache.
///
///   POST /v1/lookup           {category, embedding | text, model_id?}
///   POST /v1/insert           {category, embedding | text, request_body, response_body}  (bodies base64)
///   PUT  /v1/categories/{id}  CategoryConfig
///   POST /v1/load-signal      {model_id, latency_percentile, queue_depth, observed_at?}
///   GET  /v1/stats
///
/// Time comes from the system clock. A miss is a normal 200 response.
class CacheService {
public:
    using Clock = std::function<TimestampMs()>;

    CacheService(SemanticCache& cache, LoadController& controller, Clock clock = system_clock_ms)
        : cache_(cache), controller_(controller), clock_(std::move(clock)) {
        register_routes();
    }

    static TimestampMs system_clock_ms() {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    httplib::Server& server() noexcept { return server_; }

    bool listen(const std::string& host, int port) { return server_.listen(host, port); }
    int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }

    nlohmann::json stats_json() const {
        nlohmann::json cats = nlohmann::json::array();
        for (const auto& s : cache_.all_stats()) {
            nlohmann::json misses = nlohmann::json::object();
            for (const auto& [reason, n] : s.misses_by_reason) misses[to_string(reason)] = n;
            cats.push_back({{"category", s.category},
                            {"lookups", s.lookups},
                            {"hits", s.hits},
                            {"misses_by_reason", misses},
                            {"insertions", s.insertions},
                            {"evictions", s.evictions},
                            {"rejected_compliance", s.rejected_compliance},
                            {"current_entry_count", s.current_entry_count},
                            {"observed_hit_rate", s.observed_hit_rate()}});
        }
        nlohmann::json models = nlohmann::json::object();
        for (const auto& [id, lambda] : controller_.all_lambdas()) models[id] = lambda;
        nlohmann::json policies = nlohmann::json::object();
        for (const auto& cfg : cache_.policies().all()) {
            const double lambda = controller_.current_lambda(cfg.model_id);
            const auto p = effective_policy(cfg, lambda);
            policies[cfg.category_id] = {{"model_id", cfg.model_id},
                                         {"lambda", lambda},
                                         {"effective_threshold", p.threshold},
                                         {"effective_ttl_seconds", p.ttl}};
        }
        return {{"categories", cats}, {"models", models}, {"policies", policies}};
    }

private:
    struct BadRequest : std::runtime_error {
        using std::runtime_error::runtime_error;
    };

    static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static nlohmann::json parse_body(const httplib::Request& req) {
        auto j = nlohmann::json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw BadRequest("body must be a JSON object");
        return j;
    }

    static std::string required_string(const nlohmann::json& j, const char* key) {
        if (!j.contains(key) || !j.at(key).is_string()) throw BadRequest(std::string(key) + " must be a string");
        return j.at(key).get<std::string>();
    }

    Embedding request_embedding(const nlohmann::json& j) const {
        const bool has_embedding = j.contains("embedding");
        const bool has_text = j.contains("text");
        if (has_embedding == has_text) throw BadRequest("exactly one of embedding or text is required");
        if (has_text) return text_pseudo_embedding(required_string(j, "text"), cache_.dimension());
        const auto& arr = j.at("embedding");
        if (!arr.is_array()) throw BadRequest("embedding must be an array of numbers");
        std::vector<float> values;
        values.reserve(arr.size());
        for (const auto& x : arr) {
            if (!x.is_number()) throw BadRequest("embedding must be an array of numbers");
            values.push_back(x.get<float>());
        }
        if (values.size() != cache_.dimension())
            throw BadRequest("embedding has " + std::to_string(values.size()) + " components, expected " +
                             std::to_string(cache_.dimension()));
        try {
            return Embedding(std::move(values));
        } catch (const UsageError& e) {
            throw BadRequest(e.what());
        }
    }

    template <typename Handler>
    static auto guarded(Handler h) {
        return [h](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const BadRequest& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const ValidationError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const UsageError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const nlohmann::json::exception& e) {
                reply(res, 400, {{"error", e.what()}});
            }
        };
    }

    void register_routes() {
        server_.Post("/v1/lookup", guarded([this](const httplib::Request& req, httplib::Response& res) {
                         const auto j = parse_body(req);
                         const std::string category = required_string(j, "category");
                         const Embedding e = request_embedding(j);
                         const std::string model = j.contains("model_id")
                                                       ? required_string(j, "model_id")
                                                       : cache_.policies().get_config(category).model_id;
                         const double lambda = controller_.current_lambda(model);
                         const LookupResult r = cache_.lookup(e, category, clock_(), lambda);
                         nlohmann::json body{{"outcome", r.hit() ? "hit" : "miss"},
                                             {"effective_threshold", r.effective_threshold},
                                             {"effective_ttl_seconds", r.effective_ttl},
                                             {"lambda", lambda}};
                         if (r.hit()) {
                             body["response_body"] = base64_encode(r.response_body);
                             body["similarity"] = r.matched_similarity;
                         } else {
                             body["miss_reason"] = to_string(r.miss_reason);
                         }
                         reply(res, 200, body);
                     }));

        server_.Post("/v1/insert", guarded([this](const httplib::Request& req, httplib::Response& res) {
                         const auto j = parse_body(req);
                         const std::string category = required_string(j, "category");
                         const Embedding e = request_embedding(j);
                         std::string request_body = base64_decode(required_string(j, "request_body"));
                         std::string response_body = base64_decode(required_string(j, "response_body"));
                         try {
                             const auto outcome = cache_.insert(e, category, std::move(request_body),
                                                                std::move(response_body), clock_());
                             reply(res, 200, {{"outcome", to_string(outcome)}});
                         } catch (const StorageError& err) {
                             reply(res, 507, {{"error", err.what()}});
                         }
                     }));

        server_.Put(R"(/v1/categories/([^/]+))",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto j = parse_body(req);
                        j["category_id"] = req.matches[1].str();
                        try {
                            cache_.policies().register_category(j.get<CategoryConfig>());
                        } catch (const ValidationError& err) {
                            reply(res, 422, {{"error", err.constraint()}, {"detail", err.what()}});
                            return;
                        }
                        res.status = 204;
                    }));

        server_.Post("/v1/load-signal", guarded([this](const httplib::Request& req, httplib::Response& res) {
                         const auto j = parse_body(req);
                         LoadSignal s;
                         s.model_id = required_string(j, "model_id");
                         auto number = [&](const char* key) {
                             if (!j.contains(key) || !j.at(key).is_number())
                                 throw BadRequest(std::string(key) + " must be a number");
                             return j.at(key).get<double>();
                         };
                         s.latency_percentile_ms = number("latency_percentile");
                         s.queue_depth = number("queue_depth");
                         s.observed_at = j.contains("observed_at") ? static_cast<TimestampMs>(number("observed_at"))
                                                                   : clock_();
                         reply(res, 200, {{"applied_lambda", controller_.ingest_signal(s)}});
                     }));

        server_.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, 200, stats_json());
        });
    }

    SemanticCache& cache_;
    LoadController& controller_;
    Clock clock_;
    httplib::Server server_;
};

}  // namespace catcache
