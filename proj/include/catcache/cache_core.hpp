#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "catcache/category_policy.hpp"
#include "catcache/doc_store.hpp"
#include "catcache/embedding.hpp"
#include "catcache/hnsw_index.hpp"
#include "catcache/rw_mutex.hpp"

namespace catcache {

enum class LookupOutcome { hit, miss };
enum class MissReason { none, caching_disabled, no_candidate, expired, dangling_doc };
enum class InsertOutcome { stored, rejected_compliance, rejected_quota_evicted_then_stored, rejected_quota };

inline const char* to_string(MissReason r) {
    switch (r) {
        case MissReason::none: return "none";
        case MissReason::caching_disabled: return "caching_disabled";
        case MissReason::no_candidate: return "no_candidate";
        case MissReason::expired: return "expired";
        case MissReason::dangling_doc: return "dangling_doc";
    }
    return "unknown";
}

inline const char* to_string(InsertOutcome o) {
    switch (o) {
        case InsertOutcome::stored: return "stored";
        case InsertOutcome::rejected_compliance: return "rejected_compliance";
        case InsertOutcome::rejected_quota_evicted_then_stored: return "rejected_quota_evicted_then_stored";
        case InsertOutcome::rejected_quota: return "rejected_quota";
    }
    return "unknown";
}

struct CacheEntryMeta {
    EntryId entry_id = 0;
    std::string category;
    DocId doc_id;
    TimestampMs created_at = 0;
    TimestampMs last_hit_at = 0;
    std::uint64_t hit_count = 0;
};

struct LookupResult {
    LookupOutcome outcome = LookupOutcome::miss;
    MissReason miss_reason = MissReason::none;
    std::string response_body;
    double matched_similarity = 0.0;
    std::optional<EntryId> matched_entry;
    double charged_latency_ms = 0.0;
    double effective_threshold = 0.0;
    double effective_ttl = 0.0;

    bool hit() const noexcept { return outcome == LookupOutcome::hit; }
};

struct CategoryStats {
    std::string category;
    std::uint64_t lookups = 0;
    std::uint64_t hits = 0;
    std::map<MissReason, std::uint64_t> misses_by_reason;
    std::uint64_t insertions = 0;
    std::uint64_t evictions = 0;
    std::uint64_t rejected_compliance = 0;
    std::uint64_t current_entry_count = 0;

    std::uint64_t misses() const {
        std::uint64_t n = 0;
        for (const auto& [_, c] : misses_by_reason) n += c;
        return n;
    }
    double observed_hit_rate() const {
        return lookups > 0 ? static_cast<double>(hits) / static_cast<double>(lookups) : 0.0;
    }
};

struct CacheOptions {
    std::size_t capacity = 100'000;  ///< global entry limit; quotas are shares of it
    double local_search_ms = 2.0;    ///< simulated cost of one in-memory index search
    double hit_rate_floor = 0.001;   ///< epsilon in the eviction score
};

struct LookupOptions {
    /// Replaces the category threshold (single collection-wide threshold runs).
    std::optional<double> threshold_override;
};

/// Category-aware semantic cache: in-memory HNSW search over embeddings,
/// response payloads in an external DocumentStore reached by id only.
///
/// All time is passed in explicitly (milliseconds), so the cache runs
/// unchanged under a virtual clock. charged_latency_ms in a LookupResult is
/// the simulated cost of the lookup: one local search, plus the store's fetch
/// latency when the store was actually read.
///
/// Lookups share `mu_`; inserts and evictions take it exclusively. Counters
/// and per-entry hit metadata sit behind `stats_mu_`.
class SemanticCache {
public:
    SemanticCache(IndexParams index_params, std::shared_ptr<PolicyRegistry> policies, DocumentStore& store,
                  CacheOptions options = {})
        : index_(index_params), policies_(std::move(policies)), store_(store), options_(options) {
        if (!policies_) throw UsageError("policy registry is required");
        if (options_.capacity == 0) throw UsageError("capacity must be >= 1");
        if (options_.local_search_ms < 0.0) throw UsageError("local_search_ms must be >= 0");
        if (!(options_.hit_rate_floor > 0.0)) throw UsageError("hit_rate_floor must be > 0");
    }

    const PolicyRegistry& policies() const noexcept { return *policies_; }
    PolicyRegistry& policies() noexcept { return *policies_; }
    const HnswIndex& index() const noexcept { return index_; }
    const DocumentStore& store() const noexcept { return store_; }
    const CacheOptions& options() const noexcept { return options_; }
    std::size_t dimension() const noexcept { return index_.params().dimension; }

    LookupResult lookup(const Embedding& query, const std::string& category, TimestampMs now, double lambda,
                        const LookupOptions& opts = {}) {
        check_dimension(query);
        const CategoryConfig cfg = policies_->get_config(category);
        const EffectivePolicy policy = effective_policy(cfg, lambda);

        LookupResult result;
        result.effective_threshold = opts.threshold_override.value_or(policy.threshold);
        result.effective_ttl = policy.ttl;

        if (!cfg.allow_caching) return record_miss(category, std::move(result), MissReason::caching_disabled);

        std::shared_lock read(mu_);
        result.charged_latency_ms = options_.local_search_ms;
        const auto candidate = index_.threshold_search(query, result.effective_threshold);
        if (!candidate) {
            read.unlock();
            return record_miss(category, std::move(result), MissReason::no_candidate);
        }

        CacheEntryMeta meta;
        {
            std::lock_guard stats(stats_mu_);
            meta = entries_.at(candidate->id);
        }
        if (age_seconds(meta, now) > policy.ttl) {
            read.unlock();
            evict_if_present(candidate->id);
            return record_miss(category, std::move(result), MissReason::expired);
        }

        result.charged_latency_ms += store_.latency().fetch_ms;
        std::optional<DocumentRecord> doc;
        try {
            doc = store_.fetch(meta.doc_id);
        } catch (const StorageError&) {
            doc.reset();
        }
        if (!doc) {
            read.unlock();
            evict_if_present(candidate->id);
            return record_miss(category, std::move(result), MissReason::dangling_doc);
        }

        {
            std::lock_guard stats(stats_mu_);
            auto& m = entries_.at(candidate->id);
            m.hit_count += 1;
            m.last_hit_at = std::max(m.last_hit_at, now);
            auto& s = stats_for(category);
            s.lookups += 1;
            s.hits += 1;
        }
        result.outcome = LookupOutcome::hit;
        result.response_body = std::move(doc->response_body);
        result.matched_similarity = candidate->similarity;
        result.matched_entry = candidate->id;
        return result;
    }

    /// Stores a response for `query`. Order of effects: compliance gate,
    /// quota/capacity eviction, document write, index insert, bookkeeping.
    InsertOutcome insert(const Embedding& query, const std::string& category, std::string request_body,
                         std::string response_body, TimestampMs now) {
        check_dimension(query);
        const CategoryConfig cfg = policies_->get_config(category);
        if (!cfg.allow_caching) {
            std::lock_guard stats(stats_mu_);
            stats_for(category).rejected_compliance += 1;
            return InsertOutcome::rejected_compliance;
        }

        std::unique_lock write(mu_);
        const std::size_t limit = quota_limit(cfg);
        if (limit == 0) return InsertOutcome::rejected_quota;

        bool quota_eviction = false;
        if (auto q = queues_.find(category); q != queues_.end() && q->second.size() >= limit) {
            while (q->second.size() >= limit) remove_entry_locked(q->second.begin()->second);
            quota_eviction = true;
        }
        while (entries_.size() >= options_.capacity) remove_entry_locked(pick_victim_locked(now));

        DocumentRecord record{"", std::move(request_body), std::move(response_body), now};
        const DocId doc_id = store_.put(record);  // throws StorageError; nothing indexed yet

        const EntryId id = next_id_++;
        index_.insert(query, id);
        {
            std::lock_guard stats(stats_mu_);
            entries_.emplace(id, CacheEntryMeta{id, category, doc_id, now, now, 0});
            stats_for(category).insertions += 1;
        }
        queues_[category].emplace(now, id);
        return quota_eviction ? InsertOutcome::rejected_quota_evicted_then_stored : InsertOutcome::stored;
    }

    /// Evicts the entry with the lowest priority * (1/age) * max(hit rate, eps).
    EntryId evict_one(TimestampMs now) {
        std::unique_lock write(mu_);
        if (entries_.empty()) throw UsageError("evict_one on an empty cache");
        const EntryId victim = pick_victim_locked(now);
        remove_entry_locked(victim);
        return victim;
    }

    /// Removes entries older than base_ttl * beta_max of their category, the
    /// longest TTL any load factor can produce.
    std::size_t sweep_expired(TimestampMs now) {
        std::unique_lock write(mu_);
        std::vector<EntryId> doomed;
        for (const auto& [category, queue] : queues_) {
            const CategoryConfig cfg = policies_->get_config(category);
            const double max_ttl = cfg.base_ttl * cfg.beta_max;
            for (const auto& [created, id] : queue) {
                if (static_cast<double>(now - created) / 1000.0 <= max_ttl) break;
                doomed.push_back(id);
            }
        }
        for (EntryId id : doomed) remove_entry_locked(id);
        return doomed.size();
    }

    /// Score used by evict_one(); +inf for entries of age zero.
    double eviction_score(const CacheEntryMeta& meta, TimestampMs now) const {
        const double age = age_seconds(meta, now);
        if (age <= 0.0) return std::numeric_limits<double>::infinity();
        const double priority = policies_->get_config(meta.category).priority;
        double hit_rate = 0.0;
        {
            std::lock_guard stats(stats_mu_);
            if (auto it = stats_.find(meta.category); it != stats_.end()) hit_rate = it->second.observed_hit_rate();
        }
        return priority * (1.0 / age) * std::max(hit_rate, options_.hit_rate_floor);
    }

    /// Largest entry count the category may hold.
    std::size_t quota_limit(const CategoryConfig& cfg) const {
        return static_cast<std::size_t>(std::floor(cfg.quota_fraction * static_cast<double>(options_.capacity) + 1e-9));
    }

    std::size_t size() const {
        std::shared_lock read(mu_);
        return entries_.size();
    }

    std::size_t entry_count(const std::string& category) const {
        std::shared_lock read(mu_);
        auto it = queues_.find(category);
        return it == queues_.end() ? 0 : it->second.size();
    }

    std::optional<CacheEntryMeta> entry(EntryId id) const {
        std::shared_lock read(mu_);
        std::lock_guard stats(stats_mu_);
        auto it = entries_.find(id);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<CacheEntryMeta> entries() const {
        std::shared_lock read(mu_);
        std::lock_guard stats(stats_mu_);
        std::vector<CacheEntryMeta> out;
        out.reserve(entries_.size());
        for (const auto& [_, m] : entries_) out.push_back(m);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.entry_id < b.entry_id; });
        return out;
    }

    CategoryStats stats(const std::string& category) const {
        std::shared_lock read(mu_);
        std::lock_guard stats(stats_mu_);
        CategoryStats s;
        if (auto it = stats_.find(category); it != stats_.end()) s = it->second;
        s.category = category;
        auto q = queues_.find(category);
        s.current_entry_count = q == queues_.end() ? 0 : q->second.size();
        return s;
    }

    /// Stats for every category seen so far, ordered by name.
    std::vector<CategoryStats> all_stats() const {
        std::vector<std::string> names;
        {
            std::shared_lock read(mu_);
            std::lock_guard stats(stats_mu_);
            std::set<std::string> seen;
            for (const auto& [name, _] : stats_) seen.insert(name);
            for (const auto& [name, _] : queues_) seen.insert(name);
            names.assign(seen.begin(), seen.end());
        }
        std::vector<CategoryStats> out;
        for (const auto& n : names) out.push_back(stats(n));
        return out;
    }

private:
    void check_dimension(const Embedding& e) const {
        if (e.dimension() != dimension())
            throw UsageError("dimension mismatch: cache expects " + std::to_string(dimension()) + ", got " +
                             std::to_string(e.dimension()));
    }

    static double age_seconds(const CacheEntryMeta& meta, TimestampMs now) {
        return static_cast<double>(now - meta.created_at) / 1000.0;
    }

    // Caller holds stats_mu_.
    CategoryStats& stats_for(const std::string& category) {
        auto& s = stats_[category];
        if (s.category.empty()) s.category = category;
        return s;
    }

    LookupResult record_miss(const std::string& category, LookupResult result, MissReason reason) {
        if (reason == MissReason::caching_disabled) result.charged_latency_ms = 0.0;
        result.outcome = LookupOutcome::miss;
        result.miss_reason = reason;
        std::lock_guard stats(stats_mu_);
        auto& s = stats_for(category);
        s.lookups += 1;
        s.misses_by_reason[reason] += 1;
        return result;
    }

    void evict_if_present(EntryId id) {
        std::unique_lock write(mu_);
        if (entries_.contains(id)) remove_entry_locked(id);
    }

    // Each category's queue head is its lowest-scoring entry (score falls
    // with age and everything else is per-category), so only heads compete.
    // Caller holds mu_ exclusively.
    EntryId pick_victim_locked(TimestampMs now) const {
        std::optional<EntryId> best;
        double best_score = 0.0;
        TimestampMs best_created = 0;
        for (const auto& [category, queue] : queues_) {
            if (queue.empty()) continue;
            const auto [created, id] = *queue.begin();
            const double score = eviction_score(entries_.at(id), now);
            const bool better = !best || score < best_score ||
                                (score == best_score && (created < best_created ||
                                                         (created == best_created && id < *best)));
            if (better) {
                best = id;
                best_score = score;
                best_created = created;
            }
        }
        return *best;
    }

    // Index first so the entry stops being searchable, then metadata, then
    // the document. Caller holds mu_ exclusively.
    void remove_entry_locked(EntryId id) {
        CacheEntryMeta meta;
        {
            std::lock_guard stats(stats_mu_);
            auto it = entries_.find(id);
            if (it == entries_.end()) throw UsageError("unknown entry id " + std::to_string(id));
            meta = std::move(it->second);
            entries_.erase(it);
            stats_for(meta.category).evictions += 1;
        }
        index_.remove(id);
        auto q = queues_.find(meta.category);
        q->second.erase({meta.created_at, id});
        if (q->second.empty()) queues_.erase(q);
        try {
            store_.remove(meta.doc_id);
        } catch (const StorageError&) {
            orphaned_docs_ += 1;
        }
    }

    HnswIndex index_;
    std::shared_ptr<PolicyRegistry> policies_;
    DocumentStore& store_;
    CacheOptions options_;

    mutable RwMutex mu_;
    mutable std::mutex stats_mu_;
    std::unordered_map<EntryId, CacheEntryMeta> entries_;
    std::map<std::string, std::set<std::pair<TimestampMs, EntryId>>> queues_;  // oldest first
    std::map<std::string, CategoryStats> stats_;
    EntryId next_id_ = 0;
    std::uint64_t orphaned_docs_ = 0;
};

}  // namespace catcache
