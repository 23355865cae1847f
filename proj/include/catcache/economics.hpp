#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "catcache/errors.hpp"

namespace catcache::economics {

/// Latency constants of the two cache architectures, in milliseconds.
struct CostModel {
    double remote_search_ms = 30.0;  ///< vector-database round trip, paid on every lookup
    double local_search_ms = 2.0;    ///< in-process index search, paid on every lookup
    double doc_fetch_ms = 5.0;       ///< primary-key document fetch, paid on hits

    void validate() const {
        if (remote_search_ms < 0.0 || local_search_ms < 0.0 || doc_fetch_ms < 0.0)
            throw DomainError("cost constants must be >= 0");
    }
};

inline void check_hit_rate(double h) {
    if (!(h >= 0.0 && h <= 1.0)) throw DomainError("hit rate must lie in [0, 1]");
}

/// Expected per-query latency when every lookup pays `search_ms`:
/// search + h * fetch + (1 - h) * T_llm.
inline double expected_latency(double search_ms, double h, double t_llm_ms, const CostModel& cost = {}) {
    check_hit_rate(h);
    return search_ms + h * cost.doc_fetch_ms + (1.0 - h) * t_llm_ms;
}

inline double expected_latency_vdb(double h, double t_llm_ms, const CostModel& cost = {}) {
    return expected_latency(cost.remote_search_ms, h, t_llm_ms, cost);
}

inline double expected_latency_hybrid(double h, double t_llm_ms, const CostModel& cost = {}) {
    return expected_latency(cost.local_search_ms, h, t_llm_ms, cost);
}

/// Hit rate above which caching beats calling the model directly:
/// search / (T_llm - fetch). A value >= 1 means caching can never pay off.
inline double break_even(double search_ms, double t_llm_ms, const CostModel& cost = {}) {
    if (!(t_llm_ms > cost.doc_fetch_ms))
        throw DomainError("model latency must exceed the document fetch cost");
    return search_ms / (t_llm_ms - cost.doc_fetch_ms);
}

inline double break_even_vdb(double t_llm_ms, const CostModel& cost = {}) {
    return break_even(cost.remote_search_ms, t_llm_ms, cost);
}

inline double break_even_hybrid(double t_llm_ms, const CostModel& cost = {}) {
    return break_even(cost.local_search_ms, t_llm_ms, cost);
}

/// Fraction by which model traffic falls when the hit rate rises from h0 to h0 + dh.
inline double traffic_reduction(double h0, double dh) {
    if (!(h0 >= 0.0 && h0 < 1.0)) throw DomainError("base hit rate must lie in [0, 1)");
    if (!(dh >= 0.0 && dh <= 1.0 - h0 + 1e-12)) throw DomainError("hit-rate gain must lie in [0, 1 - h0]");
    return dh / (1.0 - h0);
}

/// Linear hit-rate response to a threshold relaxation, clamped so h0 + dh <= 1.
inline double hit_rate_delta(double k, double delta, double h0 = 0.0) {
    if (k < 0.0 || delta < 0.0) throw DomainError("sensitivity and relaxation must be >= 0");
    check_hit_rate(h0);
    return std::min(k * delta, 1.0 - h0);
}

/// Share of cached responses expected to be stale: min(1, s * ttl). `rate`
/// and `ttl` must use the same time unit.
inline double staleness_fraction(double rate, double ttl) {
    if (rate < 0.0 || ttl < 0.0) throw DomainError("staleness rate and ttl must be >= 0");
    return std::min(1.0, rate * ttl);
}

struct ViabilityInput {
    std::string category;
    double traffic_share = 0.0;
    double hit_rate = 0.0;
    double t_llm_ms = 200.0;
};

struct ViabilityRow {
    std::string category;
    double traffic_share = 0.0;
    double hit_rate = 0.0;
    double be_vdb = 0.0;
    double be_hybrid = 0.0;
    bool vdb_viable = false;
    bool hybrid_viable = false;
};

/// A category is viable under an architecture when its hit rate strictly
/// exceeds that architecture's break-even for the category's model.
inline std::vector<ViabilityRow> viability_table(const std::vector<ViabilityInput>& rows, const CostModel& cost = {}) {
    double share_sum = 0.0;
    for (const auto& r : rows) {
        check_hit_rate(r.hit_rate);
        if (r.traffic_share < 0.0) throw ValidationError("traffic_share_negative", r.category);
        share_sum += r.traffic_share;
    }
    if (std::abs(share_sum - 1.0) > 1e-9)
        throw ValidationError("traffic_share_sum", "traffic shares sum to " + std::to_string(share_sum) + ", not 1");

    std::vector<ViabilityRow> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        ViabilityRow row{r.category, r.traffic_share, r.hit_rate};
        row.be_vdb = break_even_vdb(r.t_llm_ms, cost);
        row.be_hybrid = break_even_hybrid(r.t_llm_ms, cost);
        row.vdb_viable = r.hit_rate > row.be_vdb;
        row.hybrid_viable = r.hit_rate > row.be_hybrid;
        out.push_back(row);
    }
    return out;
}

inline void write_viability_csv(std::ostream& os, const std::vector<ViabilityRow>& rows) {
    os << "category,traffic_share,hit_rate,be_vdb,be_hybrid,vdb_viable,hybrid_viable\n";
    os.precision(10);
    for (const auto& r : rows) {
        os << r.category << ',' << r.traffic_share << ',' << r.hit_rate << ',' << r.be_vdb << ',' << r.be_hybrid
           << ',' << (r.vdb_viable ? "true" : "false") << ',' << (r.hybrid_viable ? "true" : "false") << '\n';
    }
}

struct BreakEvenPoint {
    double t_llm_ms = 0.0;
    double be_vdb = 0.0;
    double be_hybrid = 0.0;
};

inline std::vector<BreakEvenPoint> break_even_sweep(const std::vector<double>& t_llm_values, const CostModel& cost = {}) {
    std::vector<BreakEvenPoint> out;
    for (double t : t_llm_values) out.push_back({t, break_even_vdb(t, cost), break_even_hybrid(t, cost)});
    return out;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<BreakEvenPoint>& points) {
    os << "t_llm_ms,be_vdb,be_hybrid\n";
    os.precision(10);
    for (const auto& p : points) os << p.t_llm_ms << ',' << p.be_vdb << ',' << p.be_hybrid << '\n';
}

/// The long-tail workload: two head categories and five tail categories.
inline std::vector<ViabilityInput> long_tail_workload(double t_llm_ms = 200.0) {
    return {{"code_generation", 0.35, 0.55, t_llm_ms},   {"api_documentation", 0.25, 0.45, t_llm_ms},
            {"conversational_chat", 0.15, 0.12, t_llm_ms}, {"financial_data", 0.10, 0.08, t_llm_ms},
            {"legal_queries", 0.08, 0.10, t_llm_ms},       {"medical_queries", 0.04, 0.06, t_llm_ms},
            {"specialized_domains", 0.03, 0.07, t_llm_ms}};
}

}  // namespace catcache::economics
