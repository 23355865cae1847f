#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "catcache/cache_core.hpp"
#include "policy_safety.hpp"
#include "support.hpp"

using namespace catcache;
using testing_support::basis;
using testing_support::random_unit;

namespace {

constexpr std::size_t kDim = 16;

CategoryConfig category(const std::string& id, double tau = 0.9, double ttl = 3600.0) {
    CategoryConfig c = default_category_config(id);
    c.base_threshold = tau;
    c.tau_min = tau;
    c.base_ttl = ttl;
    c.ttl_max = ttl;
    c.quota_fraction = 0.5;
    return c;
}

struct Fixture {
    explicit Fixture(std::vector<CategoryConfig> configs, std::size_t capacity = 1000, BackendLatencyModel lat = {})
        : registry(std::make_shared<PolicyRegistry>(configs)),
          store(lat),
          cache(params(), registry, store, options(capacity)) {}

    static IndexParams params() {
        IndexParams p;
        p.dimension = kDim;
        return p;
    }
    static CacheOptions options(std::size_t capacity) {
        CacheOptions o;
        o.capacity = capacity;
        return o;
    }

    std::shared_ptr<PolicyRegistry> registry;
    SimulatedDocStore store;
    SemanticCache cache;
};

Embedding perturbed(const Embedding& e, std::mt19937_64& rng, double scale) {
    std::normal_distribution<float> g;
    std::vector<float> v(e.values().begin(), e.values().end());
    for (auto& x : v) x += static_cast<float>(scale) * g(rng);
    return Embedding(std::move(v));
}

}  // namespace

TEST(SemanticCache, EmptyCacheMissChargesLocalSearchOnly) {
    Fixture f({category("a")});
    const auto r = f.cache.lookup(basis(kDim, 0), "a", 0, 0.0);
    EXPECT_FALSE(r.hit());
    EXPECT_EQ(r.miss_reason, MissReason::no_candidate);
    EXPECT_DOUBLE_EQ(r.charged_latency_ms, 2.0);
    EXPECT_EQ(f.store.counters().total(), 0u);
}

TEST(SemanticCache, HitChargesSearchPlusFetch) {
    Fixture f({category("a")});
    EXPECT_EQ(f.cache.insert(basis(kDim, 0), "a", "question", "answer", 0), InsertOutcome::stored);
    const auto r = f.cache.lookup(basis(kDim, 0), "a", 1000, 0.0);
    ASSERT_TRUE(r.hit());
    EXPECT_EQ(r.response_body, "answer");
    EXPECT_DOUBLE_EQ(r.charged_latency_ms, 7.0);
    EXPECT_NEAR(r.matched_similarity, 1.0, 1e-6);
    EXPECT_EQ(r.matched_entry, EntryId{0});
    EXPECT_EQ(f.cache.entry(0)->hit_count, 1u);
    EXPECT_EQ(f.cache.entry(0)->last_hit_at, 1000);
}

TEST(SemanticCache, MeanLatencyAtTwentyPercentHitsIsThreeMs) {
    Fixture f({category("a")});
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 0);
    double total = 0.0;
    int hits = 0;
    for (int i = 0; i < 10; ++i) {
        const auto r = f.cache.lookup(i < 2 ? basis(kDim, 0) : basis(kDim, 1 + i), "a", 10, 0.0);
        hits += r.hit();
        total += r.charged_latency_ms;
    }
    EXPECT_EQ(hits, 2);
    EXPECT_EQ(total / 10.0, 3.0);
}

TEST(SemanticCache, TtlBoundaryAt300Seconds) {
    Fixture f({category("a", 0.9, 300.0)});
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 0);
    EXPECT_TRUE(f.cache.lookup(basis(kDim, 0), "a", 300'000, 0.0).hit());
    const auto fetches = f.store.counters().fetches.load();
    const auto r = f.cache.lookup(basis(kDim, 0), "a", 301'000, 0.0);
    EXPECT_EQ(r.miss_reason, MissReason::expired);
    EXPECT_DOUBLE_EQ(r.charged_latency_ms, 2.0);
    EXPECT_EQ(f.store.counters().fetches, fetches);
    EXPECT_EQ(f.cache.size(), 0u);
    EXPECT_EQ(f.store.size(), 0u);
    EXPECT_EQ(f.cache.lookup(basis(kDim, 0), "a", 302'000, 0.0).miss_reason, MissReason::no_candidate);
}

TEST(SemanticCache, LoadExtendsTtlAndRelaxesThreshold) {
    CategoryConfig c = category("a", 0.9, 300.0);
    c.tau_min = 0.8;
    c.delta_max = 0.1;
    c.beta_max = 2.0;
    c.ttl_max = 600.0;
    Fixture f({c});
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 0);
    EXPECT_EQ(f.cache.lookup(basis(kDim, 0), "a", 500'000, 0.0).miss_reason, MissReason::expired);
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 1'000'000);
    EXPECT_TRUE(f.cache.lookup(basis(kDim, 0), "a", 1'500'000, 1.0).hit());

    std::vector<float> v(kDim, 0.0f);
    v[0] = 0.85f;
    v[1] = std::sqrt(1.0f - 0.85f * 0.85f);
    const Embedding near(v);
    EXPECT_FALSE(f.cache.lookup(near, "a", 1'500'000, 0.0).hit());
    const auto r = f.cache.lookup(near, "a", 1'500'000, 1.0);
    EXPECT_TRUE(r.hit());
    EXPECT_DOUBLE_EQ(r.effective_threshold, 0.8);
    EXPECT_DOUBLE_EQ(r.effective_ttl, 600.0);
}

TEST(SemanticCache, ThresholdOverrideReplacesCategoryThreshold) {
    Fixture f({category("a", 0.99)});
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 0);
    std::vector<float> v(kDim, 0.0f);
    v[0] = 0.9f;
    v[1] = std::sqrt(1.0f - 0.81f);
    EXPECT_FALSE(f.cache.lookup(Embedding(v), "a", 1, 0.0).hit());
    LookupOptions o;
    o.threshold_override = 0.85;
    const auto r = f.cache.lookup(Embedding(v), "a", 1, 0.0, o);
    EXPECT_TRUE(r.hit());
    EXPECT_DOUBLE_EQ(r.effective_threshold, 0.85);
}

TEST(SemanticCache, ComplianceCategoryNeverTouchesStore) {
    CategoryConfig c = category("medical");
    c.allow_caching = false;
    Fixture f({c, category("open")});
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i)
        EXPECT_EQ(f.cache.insert(random_unit(rng, kDim), "medical", "q", "a", i), InsertOutcome::rejected_compliance);
    EXPECT_EQ(f.store.counters().total(), 0u);
    EXPECT_EQ(f.store.size(), 0u);
    EXPECT_EQ(f.cache.size(), 0u);
    const auto r = f.cache.lookup(random_unit(rng, kDim), "medical", 0, 0.0);
    EXPECT_EQ(r.miss_reason, MissReason::caching_disabled);
    EXPECT_DOUBLE_EQ(r.charged_latency_ms, 0.0);
    EXPECT_EQ(f.cache.stats("medical").rejected_compliance, 100u);
    EXPECT_EQ(f.store.counters().total(), 0u);
}

TEST(SemanticCache, QuotaOverflowEvictsExactlyOneFromSameCategory) {
    CategoryConfig a = category("a");
    a.quota_fraction = 0.1;
    Fixture f({a, category("b")});
    std::mt19937_64 rng(8);
    for (int i = 0; i < 5; ++i) f.cache.insert(random_unit(rng, kDim), "b", "q", "a", i);
    for (int i = 0; i < 100; ++i)
        ASSERT_EQ(f.cache.insert(random_unit(rng, kDim), "a", "q", "a", 10 + i), InsertOutcome::stored);
    EXPECT_EQ(f.cache.entry_count("a"), 100u);
    EXPECT_EQ(f.cache.insert(random_unit(rng, kDim), "a", "q", "a", 200), InsertOutcome::rejected_quota_evicted_then_stored);
    EXPECT_EQ(f.cache.entry_count("a"), 100u);
    EXPECT_EQ(f.cache.entry_count("b"), 5u);
    EXPECT_EQ(f.cache.stats("a").evictions, 1u);
    EXPECT_EQ(f.cache.stats("b").evictions, 0u);
    EXPECT_FALSE(f.cache.entry(5));
    EXPECT_EQ(f.store.size(), 105u);
}

TEST(SemanticCache, ZeroQuotaRejectsWithoutStoring) {
    CategoryConfig a = category("a");
    a.quota_fraction = 0.0;
    Fixture f({a});
    EXPECT_EQ(f.cache.insert(basis(kDim, 0), "a", "q", "a", 0), InsertOutcome::rejected_quota);
    EXPECT_EQ(f.store.counters().total(), 0u);
}

TEST(SemanticCache, GlobalCapacityEvictsLowestScore) {
    CategoryConfig a = category("a"), b = category("b");
    a.priority = 4.0;
    Fixture f({a, b}, 20);
    std::mt19937_64 rng(6);
    for (int i = 0; i < 10; ++i) f.cache.insert(random_unit(rng, kDim), "a", "q", "a", 0);
    for (int i = 0; i < 10; ++i) f.cache.insert(random_unit(rng, kDim), "b", "q", "a", 0);
    EXPECT_EQ(f.cache.size(), 20u);
    EXPECT_EQ(f.cache.insert(random_unit(rng, kDim), "unregistered", "q", "a", 10'000), InsertOutcome::stored);
    EXPECT_EQ(f.cache.size(), 20u);
    EXPECT_EQ(f.cache.entry_count("a"), 10u);
    EXPECT_EQ(f.cache.entry_count("b"), 9u);
    EXPECT_FALSE(f.cache.entry(10));
}

TEST(EvictionScore, OlderEntryLosesWithinCategory) {
    Fixture f({category("a")});
    f.cache.insert(basis(kDim, 0), "a", "q", "old", 0);
    f.cache.insert(basis(kDim, 1), "a", "q", "new", 990'000);
    EXPECT_EQ(f.cache.evict_one(1'000'000), EntryId{0});
    EXPECT_TRUE(f.cache.entry(1));
}

TEST(EvictionScore, LowerPriorityLosesAtEqualAge) {
    CategoryConfig hi = category("hi"), lo = category("lo");
    hi.priority = 4.0;
    lo.priority = 1.0;
    Fixture f({hi, lo});
    f.cache.insert(basis(kDim, 0), "hi", "q", "a", 0);
    f.cache.insert(basis(kDim, 1), "lo", "q", "a", 0);
    EXPECT_EQ(f.cache.evict_one(100'000), EntryId{1});
}

TEST(EvictionScore, TiesGoToOldestThenSmallestId) {
    CategoryConfig a = category("a"), b = category("b");
    a.priority = 2.0;
    Fixture f({a, b});
    f.cache.insert(basis(kDim, 0), "b", "q", "a", 5'000);
    f.cache.insert(basis(kDim, 1), "a", "q", "a", 0);
    f.cache.insert(basis(kDim, 2), "b", "q", "a", 5'000);
    ASSERT_EQ(f.cache.eviction_score(*f.cache.entry(0), 10'000), f.cache.eviction_score(*f.cache.entry(1), 10'000));
    EXPECT_EQ(f.cache.evict_one(10'000), EntryId{1});
    EXPECT_EQ(f.cache.evict_one(10'000), EntryId{0});
    EXPECT_EQ(f.cache.evict_one(10'000), EntryId{2});
    EXPECT_THROW(f.cache.evict_one(10'000), UsageError);
}

TEST(EvictionScore, FormulaAndZeroAge) {
    CategoryConfig a = category("a");
    a.priority = 3.0;
    Fixture f({a});
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 0);
    f.cache.lookup(basis(kDim, 0), "a", 1, 0.0);
    f.cache.lookup(basis(kDim, 5), "a", 1, 0.0);
    const auto meta = *f.cache.entry(0);
    EXPECT_DOUBLE_EQ(f.cache.eviction_score(meta, 20'000), 3.0 * (1.0 / 20.0) * 0.5);
    EXPECT_TRUE(std::isinf(f.cache.eviction_score(meta, 0)));
}

TEST(EvictionScore, MatchesBruteForceArgminOnRandomCaches) {
    std::size_t evictions = 0;
    for (std::uint64_t seed = 1; seed <= 60; ++seed) {
        const auto t = testing_support::run_eviction_argmin_trial(seed);
        ASSERT_EQ(t.mismatches, 0u) << "seed " << seed;
        evictions += t.evictions;
    }
    EXPECT_EQ(evictions, 600u);
}

TEST(SweepExpired, RemovesExactlyOverAgeSubset) {
    CategoryConfig a = category("a", 0.9, 100.0), b = category("b", 0.9, 50.0);
    a.beta_max = 2.0;
    a.ttl_max = 200.0;
    Fixture f({a, b});
    EXPECT_EQ(f.cache.sweep_expired(0), 0u);
    std::mt19937_64 rng(12);
    std::vector<std::tuple<EntryId, std::string, TimestampMs>> made;
    for (EntryId i = 0; i < 80; ++i) {
        const std::string c = i % 2 ? "a" : "b";
        const TimestampMs created = static_cast<TimestampMs>(rng() % 300) * 1000;
        f.cache.insert(random_unit(rng, kDim), c, "q", "a", created);
        made.emplace_back(i, c, created);
    }
    const TimestampMs now = 300'000;
    std::set<EntryId> expected;
    for (const auto& [id, c, created] : made) {
        const double max_ttl = c == "a" ? 200.0 : 50.0;
        if (static_cast<double>(now - created) / 1000.0 > max_ttl) expected.insert(id);
    }
    ASSERT_FALSE(expected.empty());
    ASSERT_LT(expected.size(), made.size());
    EXPECT_EQ(f.cache.sweep_expired(now), expected.size());
    for (const auto& [id, c, created] : made) EXPECT_EQ(f.cache.entry(id).has_value(), !expected.contains(id)) << id;
    EXPECT_EQ(f.store.size(), made.size() - expected.size());
    EXPECT_EQ(f.cache.sweep_expired(now + 1'000'000), made.size() - expected.size());
    EXPECT_EQ(f.cache.size(), 0u);
}

TEST(SemanticCache, DanglingDocumentBecomesMissAndEviction) {
    Fixture f({category("a")});
    f.cache.insert(basis(kDim, 0), "a", "q", "a", 0);
    f.store.forget(f.cache.entry(0)->doc_id);
    const auto r = f.cache.lookup(basis(kDim, 0), "a", 1, 0.0);
    EXPECT_EQ(r.miss_reason, MissReason::dangling_doc);
    EXPECT_EQ(f.cache.size(), 0u);
    EXPECT_EQ(f.cache.index().size(), 0u);

    f.cache.insert(basis(kDim, 1), "a", "q", "a", 0);
    f.store.fail_fetches(true);
    EXPECT_EQ(f.cache.lookup(basis(kDim, 1), "a", 1, 0.0).miss_reason, MissReason::dangling_doc);
    EXPECT_EQ(f.cache.size(), 0u);
}

TEST(SemanticCache, FailedDocumentWriteLeavesNothingSearchable) {
    Fixture f({category("a")});
    f.store.fail_puts(true);
    EXPECT_THROW(f.cache.insert(basis(kDim, 0), "a", "q", "a", 0), StorageError);
    EXPECT_EQ(f.cache.size(), 0u);
    EXPECT_EQ(f.cache.index().size(), 0u);
    EXPECT_EQ(f.cache.lookup(basis(kDim, 0), "a", 1, 0.0).miss_reason, MissReason::no_candidate);
}

TEST(SemanticCache, UnknownCategoryUsesConservativeDefault) {
    Fixture f({category("a")}, 100);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 8; ++i) f.cache.insert(random_unit(rng, kDim), "mystery", "q", "a", i);
    EXPECT_EQ(f.cache.entry_count("mystery"), 5u);
    const auto r = f.cache.lookup(basis(kDim, 0), "mystery", 10, 1.0);
    EXPECT_DOUBLE_EQ(r.effective_threshold, 0.85);
    EXPECT_DOUBLE_EQ(r.effective_ttl, 3600.0);
}

TEST(SemanticCache, UsageErrors) {
    Fixture f({category("a")});
    EXPECT_THROW(f.cache.lookup(Embedding(std::vector<float>(kDim + 1, 1.0f)), "a", 0, 0.0), UsageError);
    EXPECT_THROW(f.cache.insert(Embedding(std::vector<float>(3, 1.0f)), "a", "q", "a", 0), UsageError);
    EXPECT_THROW(f.cache.lookup(basis(kDim, 0), "a", 0, 1.5), UsageError);
    SimulatedDocStore s;
    EXPECT_THROW(SemanticCache(Fixture::params(), nullptr, s), UsageError);
    EXPECT_THROW(SemanticCache(Fixture::params(), std::make_shared<PolicyRegistry>(), s, Fixture::options(0)),
                 UsageError);
}

TEST(SemanticCache, MixedCategoryHitsRespectEffectiveThresholds) {
    std::vector<CategoryConfig> configs;
    const double taus[3] = {0.92, 0.85, 0.78};
    for (int c = 0; c < 3; ++c) {
        CategoryConfig cfg = category("m" + std::to_string(c), taus[c], 1e6);
        cfg.delta_max = 0.04 * c;
        cfg.tau_min = taus[c] - cfg.delta_max;
        cfg.quota_fraction = 0.3;
        configs.push_back(cfg);
    }
    Fixture f(configs, 30'000);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<Embedding>> canon(3);
    for (auto& pool : canon)
        for (int i = 0; i < 150; ++i) pool.push_back(random_unit(rng, kDim));

    std::vector<Embedding> stored;
    std::vector<std::uint64_t> hits(3, 0);
    std::uint64_t audited = 0;
    for (int i = 0; i < 10'000; ++i) {
        const int c = static_cast<int>(rng() % 3);
        const Embedding q = perturbed(canon[c][rng() % 150], rng, 0.03 + 0.05 * u(rng));
        const double lambda = u(rng);
        const double tau = std::max(configs[c].tau_min, configs[c].base_threshold - lambda * configs[c].delta_max);
        const auto r = f.cache.lookup(q, configs[c].category_id, i, lambda);
        if (r.hit()) {
            hits[c] += 1;
            ++audited;
            ASSERT_GE(r.matched_similarity, tau);
            ASSERT_NEAR(r.matched_similarity, cosine_similarity(q, stored.at(*r.matched_entry)), 1e-5);
        } else if (f.cache.insert(q, configs[c].category_id, "q", "a", i) != InsertOutcome::rejected_compliance) {
            stored.push_back(q);
        }
    }
    EXPECT_GT(audited, 3000u);

    std::uint64_t total_hits = 0;
    for (int c = 0; c < 3; ++c) {
        const auto s = f.cache.stats(configs[c].category_id);
        EXPECT_EQ(s.hits + s.misses(), s.lookups);
        EXPECT_EQ(s.hits, hits[c]);
        EXPECT_EQ(s.insertions, s.current_entry_count + s.evictions);
        total_hits += s.hits;
    }
    EXPECT_EQ(f.store.counters().fetches, total_hits);
    EXPECT_EQ(f.store.counters().puts, stored.size());
    EXPECT_EQ(f.store.size(), f.cache.size());
}

TEST(SemanticCache, PolicySafetyUnderRandomOperations) {
    testing_support::PolicySafetyReport total;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto r = testing_support::run_policy_safety(seed, 1500);
        EXPECT_EQ(r.violations(), 0u) << "seed " << seed;
        total.hits += r.hits;
        total.no_candidate_misses += r.no_candidate_misses;
        total.expired_misses += r.expired_misses;
    }
    EXPECT_GT(total.hits, 1000u);
    EXPECT_GT(total.no_candidate_misses, 1000u);
    EXPECT_GT(total.expired_misses, 50u);
}

TEST(SemanticCache, ConcurrentLookupsAndInsertsKeepCountersConsistent) {
    CategoryConfig a = category("a", 0.9, 1e6), b = category("b", 0.9, 1e6);
    Fixture f({a, b}, 400);
    std::vector<Embedding> pool;
    std::mt19937_64 seed_rng(99);
    for (int i = 0; i < 300; ++i) pool.push_back(random_unit(seed_rng, kDim));
    std::atomic<std::uint64_t> lookups{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            std::mt19937_64 rng(t);
            for (int i = 0; i < 1500; ++i) {
                const auto& q = pool[rng() % pool.size()];
                const std::string c = rng() % 2 ? "a" : "b";
                const auto r = f.cache.lookup(q, c, i, 0.0);
                lookups += 1;
                if (!r.hit()) f.cache.insert(q, c, "q", "a", i);
            }
        });
    for (auto& th : threads) th.join();
    std::uint64_t counted = 0;
    for (const auto& s : f.cache.all_stats()) {
        EXPECT_EQ(s.hits + s.misses(), s.lookups);
        EXPECT_LE(s.current_entry_count, 200u);
        counted += s.lookups;
    }
    EXPECT_EQ(counted, lookups.load());
    EXPECT_EQ(f.cache.size(), f.store.size());
    EXPECT_EQ(f.cache.size(), f.cache.index().size());
}
