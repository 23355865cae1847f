#include <gtest/gtest.h>

#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "catcache/category_policy.hpp"

using namespace catcache;

namespace {

constexpr double kDay = 86400.0;

CategoryConfig code_config() {
    CategoryConfig c = default_category_config("code_generation");
    c.base_threshold = 0.90;
    c.delta_max = 0.05;
    c.tau_min = 0.85;
    c.base_ttl = 7 * kDay;
    c.beta_max = 2.0;
    c.ttl_max = 14 * kDay;
    c.quota_fraction = 0.4;
    return c;
}

std::string violated(const CategoryConfig& c) {
    try {
        validate_config(c);
    } catch (const ValidationError& e) {
        return e.constraint();
    }
    return "";
}

}  // namespace

TEST(EffectivePolicy, CodeConfigEndpoints) {
    const auto c = code_config();
    const auto idle = effective_policy(c, 0.0);
    EXPECT_EQ(idle.threshold, 0.90);
    EXPECT_EQ(idle.ttl, 7 * kDay);
    const auto loaded = effective_policy(c, 1.0);
    EXPECT_NEAR(loaded.threshold, 0.85, 1e-12);
    EXPECT_EQ(loaded.ttl, 14 * kDay);
}

TEST(EffectivePolicy, HalfLoad) {
    const auto p = effective_policy(code_config(), 0.5);
    EXPECT_NEAR(p.threshold, 0.875, 1e-12);
    EXPECT_NEAR(p.ttl, 10.5 * kDay, 1e-6);
    EXPECT_EQ(p.load_factor, 0.5);
}

TEST(EffectivePolicy, LambdaOutsideUnitIntervalIsUsageError) {
    EXPECT_THROW(effective_policy(code_config(), -0.01), UsageError);
    EXPECT_THROW(effective_policy(code_config(), 1.01), UsageError);
    EXPECT_THROW(effective_policy(code_config(), NAN), UsageError);
}

TEST(EffectivePolicy, MonotoneAndClampedForRandomConfigs) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        CategoryConfig c = default_category_config("r");
        c.base_threshold = 0.5 + 0.5 * u(rng);
        c.delta_max = 0.3 * u(rng);
        c.tau_min = std::max(0.01, c.base_threshold - c.delta_max - 0.1 * u(rng) + 0.05 * u(rng));
        c.base_ttl = std::floor(1e6 * u(rng));
        c.beta_max = 1.0 + 3.0 * u(rng);
        c.ttl_max = c.base_ttl * c.beta_max * (1.0 - 0.3 * u(rng));
        double l1 = u(rng), l2 = u(rng);
        if (l1 > l2) std::swap(l1, l2);
        const auto p1 = effective_policy(c, l1), p2 = effective_policy(c, l2);
        ASSERT_GE(p1.threshold, p2.threshold);
        ASSERT_LE(p1.ttl, p2.ttl);
        for (const auto& p : {p1, p2}) {
            ASSERT_GE(p.threshold, c.tau_min);
            ASSERT_LE(p.ttl, c.ttl_max);
        }
    }
}

TEST(EffectivePolicy, EndpointsExactWhenBoundsDoNotBind) {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        CategoryConfig c = default_category_config("r");
        c.base_threshold = 0.6 + 0.4 * u(rng);
        c.delta_max = 0.2 * u(rng);
        c.tau_min = 0.3;
        c.base_ttl = std::floor(1e5 * u(rng));
        c.beta_max = 1.0 + u(rng);
        c.ttl_max = 1e9;
        ASSERT_EQ(effective_policy(c, 0.0).threshold, c.base_threshold);
        ASSERT_EQ(effective_policy(c, 0.0).ttl, c.base_ttl);
        ASSERT_EQ(effective_policy(c, 1.0).threshold, c.base_threshold - c.delta_max);
        ASSERT_EQ(effective_policy(c, 1.0).ttl, c.base_ttl * c.beta_max);
    }
}

TEST(ValidateConfig, AcceptsCodeConfig) { EXPECT_EQ(violated(code_config()), ""); }

TEST(ValidateConfig, NamesEachViolatedConstraint) {
    auto with = [](auto mutate) {
        CategoryConfig c = code_config();
        mutate(c);
        return violated(c);
    };
    EXPECT_EQ(with([](auto& c) { c.category_id.clear(); }), "empty_category_id");
    EXPECT_EQ(with([](auto& c) { c.base_threshold = 1.2; }), "threshold_out_of_range");
    EXPECT_EQ(with([](auto& c) { c.base_threshold = 0.0; }), "threshold_out_of_range");
    EXPECT_EQ(with([](auto& c) { c.tau_min = 0.0; }), "tau_min_out_of_range");
    EXPECT_EQ(with([](auto& c) { c.base_ttl = -1; }), "ttl_negative");
    EXPECT_EQ(with([](auto& c) { c.quota_fraction = 1.5; }), "quota_out_of_range");
    EXPECT_EQ(with([](auto& c) { c.priority = 0.0; }), "priority_not_positive");
    EXPECT_EQ(with([](auto& c) { c.delta_max = -0.01; }), "delta_max_negative");
    EXPECT_EQ(with([](auto& c) { c.beta_max = 0.5; }), "beta_max_below_one");
    EXPECT_EQ(with([](auto& c) { c.sensitivity = -1; }), "sensitivity_negative");
    EXPECT_EQ(with([](auto& c) { c.delta_max = 0.06; }), "relaxation_below_floor");
    EXPECT_EQ(with([](auto& c) { c.ttl_max = 13 * kDay; }), "ttl_extension_above_max");
    EXPECT_EQ(with([](auto& c) { c.base_threshold = NAN; }), "threshold_out_of_range");
}

TEST(ValidateConfig, DefaultConfigIsValid) { EXPECT_EQ(violated(default_category_config("x")), ""); }

TEST(PolicyRegistry, RegisterAndFetch) {
    PolicyRegistry r;
    r.register_category(code_config());
    EXPECT_TRUE(r.contains("code_generation"));
    EXPECT_EQ(r.get_config("code_generation"), code_config());
}

TEST(PolicyRegistry, UnknownCategoryFallsBackToDefault) {
    PolicyRegistry r;
    const auto c = r.get_config("never_seen");
    EXPECT_EQ(c.category_id, "never_seen");
    EXPECT_EQ(c.base_threshold, 0.85);
    EXPECT_EQ(c.base_ttl, 3600.0);
    EXPECT_EQ(c.quota_fraction, 0.05);
    EXPECT_EQ(c.priority, 1.0);
    EXPECT_TRUE(c.allow_caching);
    EXPECT_EQ(c.delta_max, 0.0);
    EXPECT_EQ(c.beta_max, 1.0);
    EXPECT_FALSE(r.contains("never_seen"));
}

TEST(PolicyRegistry, LastWriteWins) {
    PolicyRegistry r;
    r.register_category(code_config());
    auto c = code_config();
    c.priority = 3.0;
    r.register_category(c);
    EXPECT_EQ(r.get_config("code_generation").priority, 3.0);
    EXPECT_EQ(r.all().size(), 1u);
}

TEST(PolicyRegistry, RejectsRelaxationBelowFloor) {
    PolicyRegistry r;
    auto c = code_config();
    c.tau_min = 0.86;
    try {
        r.register_category(c);
        FAIL() << "expected rejection";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.constraint(), "relaxation_below_floor");
    }
    EXPECT_FALSE(r.contains("code_generation"));
}

TEST(PolicyRegistry, QuotaSumAcrossCategories) {
    PolicyRegistry r;
    auto a = default_category_config("a");
    a.quota_fraction = 0.6;
    auto b = default_category_config("b");
    b.quota_fraction = 0.5;
    r.register_category(a);
    try {
        r.register_category(b);
        FAIL() << "expected rejection";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.constraint(), "quota_sum_exceeded");
    }
    EXPECT_FALSE(r.contains("b"));
    // Replacing a category's own quota does not double count it.
    a.quota_fraction = 1.0;
    EXPECT_NO_THROW(r.register_category(a));
}

TEST(PolicyRegistry, ReregisteringIdenticalConfigIsIdempotent) {
    PolicyRegistry r;
    r.register_category(code_config());
    const auto before = *r.snapshot();
    r.register_category(code_config());
    EXPECT_EQ(*r.snapshot(), before);
}

TEST(PolicyRegistry, ReplaceAllIsAtomic) {
    PolicyRegistry r({code_config()});
    auto x = default_category_config("x");
    auto bad = default_category_config("y");
    bad.priority = -1;
    EXPECT_THROW(r.replace_all({x, bad}), ValidationError);
    EXPECT_TRUE(r.contains("code_generation"));
    EXPECT_FALSE(r.contains("x"));

    try {
        r.replace_all({x, x});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.constraint(), "duplicate_category");
    }
    r.replace_all({x});
    EXPECT_FALSE(r.contains("code_generation"));
    EXPECT_TRUE(r.contains("x"));
}

TEST(PolicyRegistry, SnapshotsAreImmutable) {
    PolicyRegistry r({code_config()});
    const auto snap = r.snapshot();
    r.update("code_generation", [](CategoryConfig& c) { c.delta_max = 0.01; });
    EXPECT_EQ(snap->at("code_generation").delta_max, 0.05);
    EXPECT_EQ(r.get_config("code_generation").delta_max, 0.01);
    EXPECT_THROW(r.update("nope", [](CategoryConfig&) {}), UsageError);
    EXPECT_THROW(r.update("code_generation", [](CategoryConfig& c) { c.delta_max = 0.2; }), ValidationError);
    EXPECT_EQ(r.get_config("code_generation").delta_max, 0.01);
}

TEST(PolicyRegistry, ReadersSeeWholeConfigsDuringSwaps) {
    auto a = code_config();
    auto b = code_config();
    b.delta_max = 0.0;
    b.priority = 5.0;
    b.base_ttl = kDay;
    PolicyRegistry r({a});
    std::atomic<bool> stop{false};
    std::atomic<int> torn{0};
    std::thread reader([&] {
        while (!stop) {
            const auto c = r.get_config("code_generation");
            if (!(c == a) && !(c == b)) ++torn;
        }
    });
    for (int i = 0; i < 2000; ++i) r.register_category(i % 2 ? a : b);
    stop = true;
    reader.join();
    EXPECT_EQ(torn.load(), 0);
}

TEST(ConfigJson, RoundTrip) {
    const auto c = code_config();
    const nlohmann::json j = c;
    EXPECT_EQ(j.at("base_ttl"), 604800);
    EXPECT_EQ(j.at("ttl_max"), 1209600);
    EXPECT_EQ(j.get<CategoryConfig>(), c);
}

TEST(ConfigJson, MissingFieldsTakeDefaults) {
    const auto c = nlohmann::json{{"category_id", "faq"}}.get<CategoryConfig>();
    auto expected = default_category_config("faq");
    EXPECT_EQ(c, expected);
}

TEST(ConfigJson, DurationsMustBeIntegerSeconds) {
    try {
        nlohmann::json{{"category_id", "a"}, {"base_ttl", 1.5}}.get<CategoryConfig>();
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.constraint(), "malformed_config");
    }
    const nlohmann::json ttl_only{{"base_ttl", 10}};
    EXPECT_THROW(ttl_only.get<CategoryConfig>(), ValidationError);
    EXPECT_THROW(nlohmann::json::array().get<CategoryConfig>(), ValidationError);
    EXPECT_THROW(parse_category_configs(nlohmann::json::object()), ValidationError);
}

TEST(ConfigJson, ParsesArrayDocument) {
    const auto doc = nlohmann::json::parse(R"([
        {"category_id": "code_generation", "base_threshold": 0.9, "delta_max": 0.05, "tau_min": 0.85,
         "base_ttl": 604800, "beta_max": 2.0, "ttl_max": 1209600, "quota_fraction": 0.4},
        {"category_id": "medical", "allow_caching": false, "quota_fraction": 0.0}
    ])");
    const auto configs = parse_category_configs(doc);
    ASSERT_EQ(configs.size(), 2u);
    EXPECT_EQ(configs[0], code_config());
    EXPECT_FALSE(configs[1].allow_caching);
    PolicyRegistry r(configs);
    EXPECT_EQ(r.all().size(), 2u);
}
